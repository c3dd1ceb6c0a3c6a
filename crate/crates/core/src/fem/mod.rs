//! P1 finite elements with zero trace on a simplicial mesh.

mod assembly;
mod function;
mod nonlinear;

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::SimplicialMesh;
use crate::quadrature::QuadratureRule;
use crate::sparse::{CsrMatrix, SpdSolver};

pub use assembly::{
    assemble_potentials, energy, holder_audit, pair_operators, EnergyReport, Exponents,
    HessianTerm, HolderSlack, OperatorVectors, Pairings, Potentials, Regularization, TermKind,
    DEFAULT_EPSILON,
};
pub use function::{parse_fem_function, FemFunction, ParsedFemFunction};
pub use nonlinear::{solve_p_poisson, PPoissonOptions};

pub(crate) const NO_DOF: usize = usize::MAX;
const PARALLEL_CHUNKS: usize = 16;
/// Relative tolerance of every stiffness solve.
pub const STIFFNESS_RTOL: f64 = 1e-13;

/// Degrees of freedom, per-cell geometry and quadrature data for the P1
/// space on a mesh. Shared read-only between functions and threads.
#[derive(Debug)]
pub struct FemSpace {
    mesh: SimplicialMesh,
    checksum: String,
    volume: f64,
    vertex_of_dof: Vec<usize>,
    /// `dim + 1` per cell, [`NO_DOF`] for boundary vertices.
    cell_dofs: Vec<usize>,
    /// Barycentric gradients, `(dim + 1) * dim` per cell.
    grads: Vec<f64>,
    vols: Vec<f64>,
    /// Quadrature points in barycentric coordinates, `dim + 1` per point.
    /// Quadrature weights summing to one.
    /// Barycentric points padded to four entries, with unit-sum weights.
    quad: Vec<([f64; 4], f64)>,
    parallel: bool,
    stiffness: OnceLock<Arc<SpdSolver>>,
    mass: OnceLock<Arc<CsrMatrix>>,
}

impl FemSpace {
    /// Sequential (bit-deterministic) space.
    pub fn new(mesh: SimplicialMesh) -> Result<Arc<Self>> {
        Self::with_parallel(mesh, false)
    }

    /// With `parallel = true` cell loops run as a fixed-partition rayon
    /// reduction.
    pub fn with_parallel(mesh: SimplicialMesh, parallel: bool) -> Result<Arc<Self>> {
        let dim = mesh.dim();
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidMesh(format!("FEM layer supports N = 2, 3, got {dim}")));
        }
        let mut dof_of_vertex = vec![NO_DOF; mesh.num_vertices()];
        let mut vertex_of_dof = Vec::new();
        for (v, slot) in dof_of_vertex.iter_mut().enumerate() {
            if !mesh.is_boundary(v) {
                *slot = vertex_of_dof.len();
                vertex_of_dof.push(v);
            }
        }
        let nc = mesh.num_cells();
        let mut cell_dofs = Vec::with_capacity(nc * (dim + 1));
        let mut grads = Vec::with_capacity(nc * (dim + 1) * dim);
        let mut vols = Vec::with_capacity(nc);
        for c in 0..nc {
            let cell = mesh.cell(c);
            cell_dofs.extend(cell.iter().map(|&v| dof_of_vertex[v]));
            let (g, vol) = barycentric_gradients(&mesh, cell)?;
            grads.extend_from_slice(&g);
            vols.push(vol);
        }
        let rule = QuadratureRule::default_for(dim);
        let quad_w = rule.unit_weights();
        let quad = rule
            .points
            .iter()
            .zip(&quad_w)
            .map(|(pt, &w)| {
                let mut b = [0.0; 4];
                b[..pt.len()].copy_from_slice(pt);
                (b, w)
            })
            .collect();
        let volume = mesh.volume();
        Ok(Arc::new(FemSpace {
            checksum: mesh.checksum(),
            mesh,
            volume,
            vertex_of_dof,
            cell_dofs,
            grads,
            vols,
            quad,
            parallel,
            stiffness: OnceLock::new(),
            mass: OnceLock::new(),
        }))
    }

    pub fn mesh(&self) -> &SimplicialMesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn num_dofs(&self) -> usize {
        self.vertex_of_dof.len()
    }

    pub fn num_cells(&self) -> usize {
        self.vols.len()
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn is_parallel(&self) -> bool {
        self.parallel
    }

    pub fn vertex_of_dof(&self, dof: usize) -> usize {
        self.vertex_of_dof[dof]
    }

    pub(crate) fn cell_dofs(&self, c: usize) -> &[usize] {
        let k = self.dim() + 1;
        &self.cell_dofs[c * k..(c + 1) * k]
    }

    pub(crate) fn cell_grads(&self, c: usize) -> &[f64] {
        let k = (self.dim() + 1) * self.dim();
        &self.grads[c * k..(c + 1) * k]
    }

    pub(crate) fn cell_vol(&self, c: usize) -> f64 {
        self.vols[c]
    }

    pub(crate) fn quad_points(&self) -> &[([f64; 4], f64)] {
        &self.quad
    }

    /// Gradient of `u` on cell `c` (constant for P1).
    pub(crate) fn cell_gradient(&self, c: usize, u: &[f64]) -> [f64; 3] {
        let dim = self.dim();
        let mut g = [0.0; 3];
        let grads = self.cell_grads(c);
        for (k, &dof) in self.cell_dofs(c).iter().enumerate() {
            if dof != NO_DOF {
                for (i, gi) in g.iter_mut().enumerate().take(dim) {
                    *gi += u[dof] * grads[k * dim + i];
                }
            }
        }
        g
    }

    pub(crate) fn cell_values(&self, c: usize, u: &[f64]) -> [f64; 4] {
        let mut vals = [0.0; 4];
        for (k, &dof) in self.cell_dofs(c).iter().enumerate() {
            if dof != NO_DOF {
                vals[k] = u[dof];
            }
        }
        vals
    }

    /// Reduction over all cells. In parallel mode the cells are split into a
    /// fixed number of contiguous chunks combined in order, so the result
    /// does not depend on the thread count.
    pub(crate) fn reduce_cells<T, I, B, C>(&self, init: I, body: B, combine: C) -> T
    where
        T: Send,
        I: Fn() -> T + Sync + Send,
        B: Fn(&mut T, usize) + Sync + Send,
        C: Fn(&mut T, T),
    {
        let nc = self.num_cells();
        if self.parallel && nc >= 4 * PARALLEL_CHUNKS {
            let parts: Vec<T> = (0..PARALLEL_CHUNKS)
                .into_par_iter()
                .map(|k| {
                    let mut acc = init();
                    for c in k * nc / PARALLEL_CHUNKS..(k + 1) * nc / PARALLEL_CHUNKS {
                        body(&mut acc, c);
                    }
                    acc
                })
                .collect();
            let mut it = parts.into_iter();
            let mut acc = it.next().expect("at least one chunk");
            for part in it {
                combine(&mut acc, part);
            }
            acc
        } else {
            let mut acc = init();
            for c in 0..nc {
                body(&mut acc, c);
            }
            acc
        }
    }

    /// Assemble a symmetric matrix from per-cell `(dim+1) x (dim+1)` blocks.
    pub(crate) fn assemble_matrix(&self, local: impl Fn(usize, &mut [f64])) -> CsrMatrix {
        let k = self.dim() + 1;
        let mut triplets = Vec::with_capacity(self.num_cells() * k * k);
        let mut block = vec![0.0; k * k];
        for c in 0..self.num_cells() {
            block.iter_mut().for_each(|b| *b = 0.0);
            local(c, &mut block);
            let dofs = self.cell_dofs(c);
            for a in 0..k {
                if dofs[a] == NO_DOF {
                    continue;
                }
                for b in 0..k {
                    if dofs[b] != NO_DOF {
                        triplets.push((dofs[a], dofs[b], block[a * k + b]));
                    }
                }
            }
        }
        CsrMatrix::from_triplets(self.num_dofs(), triplets)
    }

    /// Stiffness matrix `∫ ∇φ_i · ∇φ_j` with its cached solver.
    pub fn stiffness(&self) -> Arc<SpdSolver> {
        self.stiffness
            .get_or_init(|| {
                let dim = self.dim();
                let k = dim + 1;
                let m = self.assemble_matrix(|c, block| {
                    let g = self.cell_grads(c);
                    let vol = self.cell_vol(c);
                    for a in 0..k {
                        for b in 0..k {
                            let d: f64 = (0..dim).map(|i| g[a * dim + i] * g[b * dim + i]).sum();
                            block[a * k + b] = vol * d;
                        }
                    }
                });
                Arc::new(SpdSolver::new(m, STIFFNESS_RTOL))
            })
            .clone()
    }

    /// Consistent mass matrix `∫ φ_i φ_j`.
    pub fn mass(&self) -> Arc<CsrMatrix> {
        self.mass
            .get_or_init(|| {
                let k = self.dim() + 1;
                let denom = (k * (k + 1)) as f64;
                let m = self.assemble_matrix(|c, block| {
                    let vol = self.cell_vol(c);
                    for a in 0..k {
                        for b in 0..k {
                            block[a * k + b] = vol * if a == b { 2.0 } else { 1.0 } / denom;
                        }
                    }
                });
                Arc::new(m)
            })
            .clone()
    }

    /// Interpolate `f` at interior vertices.
    pub fn interpolate(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        self.vertex_of_dof
            .iter()
            .map(|&v| f(self.mesh.vertex(v)))
            .collect()
    }
}

fn barycentric_gradients(mesh: &SimplicialMesh, cell: &[usize]) -> Result<(Vec<f64>, f64)> {
    let dim = mesh.dim();
    let x0 = mesh.vertex(cell[0]);
    // rows of the edge matrix B: e_k = x_k - x_0
    let mut b = [[0.0f64; 3]; 3];
    for k in 0..dim {
        let xk = mesh.vertex(cell[k + 1]);
        for i in 0..dim {
            b[k][i] = xk[i] - x0[i];
        }
    }
    // grad λ_k (k >= 1) are the columns of B^{-1} where B has rows e_k
    let (inv, det) = match dim {
        2 => {
            let det = b[0][0] * b[1][1] - b[0][1] * b[1][0];
            let inv = [
                [b[1][1] / det, -b[0][1] / det, 0.0],
                [-b[1][0] / det, b[0][0] / det, 0.0],
                [0.0; 3],
            ];
            (inv, det)
        }
        _ => {
            let m = &b;
            let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
            let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
            let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
            let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
            let inv = [
                [c00 / det, (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det, (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det],
                [c01 / det, (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det, (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det],
                [c02 / det, (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det, (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det],
            ];
            (inv, det)
        }
    };
    if !(det > 0.0) {
        return Err(Error::InvalidMesh("degenerate or inverted cell".into()));
    }
    let fact = if dim == 2 { 2.0 } else { 6.0 };
    let mut g = vec![0.0; (dim + 1) * dim];
    for k in 1..=dim {
        for i in 0..dim {
            // (B^{-1})_{i, k-1}
            g[k * dim + i] = inv[i][k - 1];
            g[i] -= inv[i][k - 1];
        }
    }
    Ok((g, det / fact))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_box_mesh;

    #[test]
    fn barycentric_gradients_reproduce_linear_functions() {
        for dim in [2usize, 3] {
            let mesh = build_box_mesh(dim, &vec![2; dim], &vec![1.0; dim]).unwrap();
            for c in 0..mesh.num_cells() {
                let cell = mesh.cell(c);
                let (g, vol) = barycentric_gradients(&mesh, cell).unwrap();
                assert!((vol - mesh.cell_volume(c)).abs() < 1e-15);
                // ∇(Σ x_k^i λ_k) = e_i
                for i in 0..dim {
                    for j in 0..dim {
                        let s: f64 = (0..=dim).map(|k| mesh.vertex(cell[k])[i] * g[k * dim + j]).sum();
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert!((s - expect).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn stiffness_and_mass_are_symmetric_with_expected_sums() {
        let mesh = build_box_mesh(2, &[4, 4], &[1.0, 1.0]).unwrap();
        let space = FemSpace::new(mesh).unwrap();
        let k = space.stiffness();
        let m = space.mass();
        let kd = k.matrix.to_dense();
        let md = m.to_dense();
        assert!((&kd - kd.transpose()).amax() < 1e-14);
        assert!((&md - md.transpose()).amax() < 1e-14);
        // single interior hat on the 2x2 mesh: ∫|∇φ|² = 4
        let mesh = build_box_mesh(2, &[2, 2], &[1.0, 1.0]).unwrap();
        let space = FemSpace::new(mesh).unwrap();
        assert_eq!(space.num_dofs(), 1);
        assert!((space.stiffness().matrix.get(0, 0) - 4.0).abs() < 1e-13);
    }

    #[test]
    fn parallel_reduction_matches_sequential() {
        let mesh = build_box_mesh(3, &[4, 4, 4], &[1.0, 1.0, 1.0]).unwrap();
        let seq = FemSpace::new(mesh.clone()).unwrap();
        let par = FemSpace::with_parallel(mesh, true).unwrap();
        let a = seq.reduce_cells(|| 0.0, |acc, c| *acc += seq.cell_vol(c), |a, b| *a += b);
        let b = par.reduce_cells(|| 0.0, |acc, c| *acc += par.cell_vol(c), |a, b| *a += b);
        assert!((a - b).abs() < 1e-14);
        assert!((a - 1.0).abs() < 1e-14);
    }
}
