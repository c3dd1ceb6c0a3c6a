//! Compressed-row sparse matrices and the Krylov solvers used by the FEM and
//! eigen layers.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assemble an `n x n` matrix from `(row, col, value)` triplets, summing
    /// duplicates.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in triplets {
            if last == Some((i, j)) {
                *values.last_mut().expect("previous entry") += v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[range.clone()].binary_search(&j) {
            Ok(k) => self.values[range.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.col_idx[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec(x, &mut y);
        y
    }

    /// `x^T A x`
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul(x))
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut d = nalgebra::DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                d[(i, j)] += v;
            }
        }
        d
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Zero-fill incomplete Cholesky factor `L` of a symmetric positive definite
/// matrix, stored row-wise (lower triangle including the diagonal).
#[derive(Debug, Clone)]
pub struct IncompleteCholesky {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
    diag_pos: Vec<usize>,
}

impl IncompleteCholesky {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let n = a.n;
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for i in 0..n {
            for (j, v) in a.row(i) {
                if j <= i {
                    col_idx.push(j);
                    values.push(v);
                }
            }
            row_ptr[i + 1] = col_idx.len();
        }
        let mut diag_pos = vec![0usize; n];
        for i in 0..n {
            let start = row_ptr[i];
            let end = row_ptr[i + 1];
            if end == start || col_idx[end - 1] != i {
                return Err(Error::InvalidParams(format!("missing diagonal entry in row {i}")));
            }
            diag_pos[i] = end - 1;
            for kk in start..end - 1 {
                let k = col_idx[kk];
                // Σ_{j<k} L[i,j] L[k,j] over the common pattern
                let (mut a_ptr, mut b_ptr) = (start, row_ptr[k]);
                let b_end = diag_pos[k];
                let mut s = 0.0;
                while a_ptr < kk && b_ptr < b_end {
                    let (ca, cb) = (col_idx[a_ptr], col_idx[b_ptr]);
                    if ca == cb {
                        s += values[a_ptr] * values[b_ptr];
                        a_ptr += 1;
                        b_ptr += 1;
                    } else if ca < cb {
                        a_ptr += 1;
                    } else {
                        b_ptr += 1;
                    }
                }
                values[kk] = (values[kk] - s) / values[diag_pos[k]];
            }
            let s: f64 = values[start..end - 1].iter().map(|v| v * v).sum();
            let d = values[end - 1] - s;
            if !(d > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "incomplete Cholesky breakdown at row {i}"
                )));
            }
            values[end - 1] = d.sqrt();
        }
        Ok(IncompleteCholesky {
            n,
            row_ptr,
            col_idx,
            values,
            diag_pos,
        })
    }

    /// `z = (L L^T)^{-1} r`
    pub fn apply(&self, r: &[f64], z: &mut [f64]) {
        let n = self.n;
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = r[i];
            for k in self.row_ptr[i]..self.diag_pos[i] {
                s -= self.values[k] * y[self.col_idx[k]];
            }
            y[i] = s / self.values[self.diag_pos[i]];
        }
        for i in (0..n).rev() {
            let zi = y[i] / self.values[self.diag_pos[i]];
            z[i] = zi;
            for k in self.row_ptr[i]..self.diag_pos[i] {
                y[self.col_idx[k]] -= self.values[k] * zi;
            }
        }
    }
}

/// Preconditioned conjugate gradients for SPD systems. Stops when
/// `‖b - A x‖ <= rtol ‖b‖`.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    precond: impl Fn(&[f64], &mut [f64]),
    rtol: f64,
    max_iter: usize,
) -> Result<usize> {
    let n = a.n;
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let mut r = b.to_vec();
    let ax = a.mul(x);
    axpy(-1.0, &ax, &mut r);
    let mut z = vec![0.0; n];
    precond(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iter {
        if norm(&r) <= rtol * bnorm {
            return Ok(it);
        }
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::LinearSolver {
                iterations: it,
                residual: norm(&r) / bnorm,
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, x);
        axpy(-alpha, &ap, &mut r);
        precond(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    let res = norm(&r) / bnorm;
    if res <= rtol {
        Ok(max_iter)
    } else {
        Err(Error::LinearSolver {
            iterations: max_iter,
            residual: res,
        })
    }
}

/// A symmetric positive definite matrix together with an IC(0)-preconditioned
/// CG solver for it.
#[derive(Debug, Clone)]
pub struct SpdSolver {
    pub matrix: CsrMatrix,
    ic: Option<IncompleteCholesky>,
    diag_inv: Vec<f64>,
    pub rtol: f64,
}

impl SpdSolver {
    pub fn new(matrix: CsrMatrix, rtol: f64) -> Self {
        let ic = IncompleteCholesky::new(&matrix).ok();
        let diag_inv = matrix
            .diagonal()
            .iter()
            .map(|d| if *d != 0.0 { 1.0 / d } else { 1.0 })
            .collect();
        SpdSolver {
            matrix,
            ic,
            diag_inv,
            rtol,
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn precondition(&self, r: &[f64], z: &mut [f64]) {
        match &self.ic {
            Some(ic) => ic.apply(r, z),
            None => {
                for ((zi, ri), d) in z.iter_mut().zip(r).zip(&self.diag_inv) {
                    *zi = ri * d;
                }
            }
        }
    }

    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) -> Result<usize> {
        let max_iter = 20 * self.n() + 100;
        conjugate_gradient(
            &self.matrix,
            b,
            x,
            |r, z| self.precondition(r, z),
            self.rtol,
            max_iter,
        )
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let mut x = vec![0.0; b.len()];
        self.solve_into(b, &mut x)?;
        Ok(x)
    }
}

/// Outcome of a MINRES solve.
#[derive(Debug, Clone, Copy)]
pub struct MinresInfo {
    pub iterations: usize,
    /// Estimate of the preconditioned residual relative to the initial one.
    pub relative_residual: f64,
}

/// Preconditioned MINRES for symmetric (possibly indefinite) systems with a
/// symmetric positive definite preconditioner.
pub fn minres(
    matvec: impl Fn(&[f64], &mut [f64]),
    b: &[f64],
    x: &mut [f64],
    precond: impl Fn(&[f64], &mut [f64]),
    rtol: f64,
    max_iter: usize,
) -> MinresInfo {
    let n = b.len();
    let mut tmp = vec![0.0; n];
    matvec(x, &mut tmp);
    let mut r1: Vec<f64> = b.iter().zip(&tmp).map(|(b, ax)| b - ax).collect();
    let mut y = vec![0.0; n];
    precond(&r1, &mut y);
    let beta1 = dot(&r1, &y);
    if !(beta1 > 0.0) {
        return MinresInfo {
            iterations: 0,
            relative_residual: 0.0,
        };
    }
    let beta1 = beta1.sqrt();
    let mut r2 = r1.clone();
    let (mut oldb, mut beta, mut dbar, mut epsln, mut phibar) = (0.0, beta1, 0.0, 0.0, beta1);
    let (mut cs, mut sn) = (-1.0f64, 0.0f64);
    let mut w = vec![0.0; n];
    let mut w2 = vec![0.0; n];
    let mut v = vec![0.0; n];
    for itn in 1..=max_iter {
        let s = 1.0 / beta;
        for (vi, yi) in v.iter_mut().zip(&y) {
            *vi = s * yi;
        }
        matvec(&v, &mut y);
        if itn >= 2 {
            axpy(-beta / oldb, &r1, &mut y);
        }
        let alfa = dot(&v, &y);
        axpy(-alfa / beta, &r2, &mut y);
        std::mem::swap(&mut r1, &mut r2);
        r2.copy_from_slice(&y);
        precond(&r2, &mut y);
        oldb = beta;
        beta = dot(&r2, &y);
        if beta < 0.0 {
            // preconditioner not positive definite
            return MinresInfo {
                iterations: itn,
                relative_residual: phibar / beta1,
            };
        }
        beta = beta.sqrt();
        let oldeps = epsln;
        let delta = cs * dbar + sn * alfa;
        let gbar = sn * dbar - cs * alfa;
        epsln = sn * beta;
        dbar = -cs * beta;
        let gamma = gbar.hypot(beta).max(f64::EPSILON);
        cs = gbar / gamma;
        sn = beta / gamma;
        let phi = cs * phibar;
        phibar *= sn;
        let denom = 1.0 / gamma;
        // w1 <- w2, w2 <- w, w <- (v - oldeps w1 - delta w2) / gamma
        std::mem::swap(&mut w2, &mut w);
        for i in 0..n {
            let w1 = w[i];
            w[i] = (v[i] - oldeps * w1 - delta * w2[i]) * denom;
            x[i] += phi * w[i];
        }
        if phibar <= rtol * beta1 || beta == 0.0 {
            return MinresInfo {
                iterations: itn,
                relative_residual: phibar / beta1,
            };
        }
    }
    MinresInfo {
        iterations: max_iter,
        relative_residual: phibar / beta1,
    }
}
