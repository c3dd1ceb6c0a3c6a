//! Conforming simplicial meshes of boxes and their plain-text file format.
//!
//! ```text
//! DIM 2
//! VERTICES 4
//! CELLS 2
//! 0.0000000000000000e0 0.0000000000000000e0
//! ...
//! 0 1 3
//! ...
//! ```
//! Vertex lines carry `DIM` coordinates, cell lines `DIM + 1` zero-based
//! vertex indices.

use std::collections::HashMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BoxSpec {
    pub divisions: Vec<usize>,
    pub lengths: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SimplicialMesh {
    dim: usize,
    /// Flat coordinates, `dim` per vertex.
    coords: Vec<f64>,
    /// Flat vertex indices, `dim + 1` per cell, positively oriented.
    cells: Vec<usize>,
    boundary: Vec<bool>,
    box_spec: Option<BoxSpec>,
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 1 {
        return vec![vec![0]];
    }
    let mut out = Vec::new();
    for perm in permutations(n - 1) {
        for pos in 0..=perm.len() {
            let mut p = perm.clone();
            p.insert(pos, n - 1);
            out.push(p);
        }
    }
    out.sort();
    out
}

/// Kuhn (Freudenthal) triangulation of `[0, L_1] x ... x [0, L_N]` with
/// `divisions[i]` intervals along axis `i`; each sub-box is split into `N!`
/// simplices sharing its main diagonal.
pub fn build_box_mesh(dim: usize, divisions: &[usize], lengths: &[f64]) -> Result<SimplicialMesh> {
    if !(dim == 2 || dim == 3) {
        return Err(Error::InvalidMesh(format!(
            "box meshes are supported for N = 2 and N = 3, got {dim}"
        )));
    }
    if divisions.len() != dim || lengths.len() != dim {
        return Err(Error::InvalidMesh(format!(
            "need {dim} divisions and lengths, got {} and {}",
            divisions.len(),
            lengths.len()
        )));
    }
    if divisions.iter().any(|&d| d == 0) {
        return Err(Error::InvalidMesh("divisions must be >= 1".into()));
    }
    if lengths.iter().any(|&l| !(l.is_finite() && l > 0.0)) {
        return Err(Error::InvalidMesh("lengths must be positive and finite".into()));
    }
    let npts: Vec<usize> = divisions.iter().map(|d| d + 1).collect();
    let total: usize = npts.iter().product();
    let mut coords = Vec::with_capacity(total * dim);
    let mut boundary = Vec::with_capacity(total);
    for idx in 0..total {
        let mut rem = idx;
        let mut on_boundary = false;
        for axis in 0..dim {
            let i = rem % npts[axis];
            rem /= npts[axis];
            coords.push(lengths[axis] * i as f64 / divisions[axis] as f64);
            on_boundary |= i == 0 || i == divisions[axis];
        }
        boundary.push(on_boundary);
    }
    let vertex_index = |ijk: &[usize]| -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for axis in 0..dim {
            idx += ijk[axis] * stride;
            stride *= npts[axis];
        }
        idx
    };

    let perms = permutations(dim);
    let ncubes: usize = divisions.iter().product();
    let mut cells = Vec::with_capacity(ncubes * perms.len() * (dim + 1));
    for c in 0..ncubes {
        let mut rem = c;
        let mut base = vec![0usize; dim];
        for axis in 0..dim {
            base[axis] = rem % divisions[axis];
            rem /= divisions[axis];
        }
        for perm in &perms {
            let mut corner = base.clone();
            let start = cells.len();
            cells.push(vertex_index(&corner));
            for &axis in perm {
                corner[axis] += 1;
                cells.push(vertex_index(&corner));
            }
            let simplex = &mut cells[start..start + dim + 1];
            if signed_volume_of(dim, &coords, simplex) < 0.0 {
                simplex.swap(dim - 1, dim);
            }
        }
    }
    Ok(SimplicialMesh {
        dim,
        coords,
        cells,
        boundary,
        box_spec: Some(BoxSpec {
            divisions: divisions.to_vec(),
            lengths: lengths.to_vec(),
        }),
    })
}

fn signed_volume_of(dim: usize, coords: &[f64], simplex: &[usize]) -> f64 {
    let v0 = &coords[simplex[0] * dim..simplex[0] * dim + dim];
    let mut m = [[0.0f64; 3]; 3];
    for (row, &vi) in simplex[1..].iter().enumerate() {
        for axis in 0..dim {
            m[row][axis] = coords[vi * dim + axis] - v0[axis];
        }
    }
    match dim {
        2 => 0.5 * (m[0][0] * m[1][1] - m[0][1] * m[1][0]),
        3 => {
            (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]))
                / 6.0
        }
        _ => unreachable!("dimension checked at construction"),
    }
}

type FaceKey = [usize; 3];

fn face_key(face: &[usize]) -> (FaceKey, bool) {
    let mut key = [usize::MAX; 3];
    key[..face.len()].copy_from_slice(face);
    let k = &mut key[..face.len()];
    // parity of the sorting permutation
    let mut odd = false;
    for i in 0..k.len() {
        for j in 0..k.len() - 1 - i {
            if k[j] > k[j + 1] {
                k.swap(j, j + 1);
                odd = !odd;
            }
        }
    }
    (key, odd)
}

impl SimplicialMesh {
    /// Build from raw arrays, orienting every cell positively and deriving the
    /// boundary from face incidence.
    pub fn from_parts(dim: usize, coords: Vec<f64>, mut cells: Vec<usize>) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(Error::InvalidMesh(format!("unsupported dimension {dim}")));
        }
        if coords.len() % dim != 0 || cells.len() % (dim + 1) != 0 {
            return Err(Error::InvalidMesh("ragged coordinate or cell arrays".into()));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidMesh("non-finite coordinate".into()));
        }
        let nv = coords.len() / dim;
        if cells.is_empty() {
            return Err(Error::InvalidMesh("mesh has no cells".into()));
        }
        for (ci, simplex) in cells.chunks_mut(dim + 1).enumerate() {
            if let Some(&bad) = simplex.iter().find(|&&v| v >= nv) {
                return Err(Error::InvalidMesh(format!(
                    "cell {ci} references vertex {bad} but there are {nv} vertices"
                )));
            }
            for i in 0..simplex.len() {
                for j in i + 1..simplex.len() {
                    if simplex[i] == simplex[j] {
                        return Err(Error::InvalidMesh(format!("cell {ci} repeats a vertex")));
                    }
                }
            }
            let vol = signed_volume_of(dim, &coords, simplex);
            let scale = simplex
                .iter()
                .flat_map(|&v| coords[v * dim..v * dim + dim].iter())
                .fold(0.0f64, |a, c| a.max(c.abs()))
                .max(1e-300);
            if !(vol.abs() > 1e-13 * scale.powi(dim as i32)) {
                return Err(Error::InvalidMesh(format!("cell {ci} is degenerate")));
            }
            if vol < 0.0 {
                simplex.swap(dim - 1, dim);
            }
        }
        let mut mesh = SimplicialMesh {
            dim,
            coords,
            cells,
            boundary: vec![false; nv],
            box_spec: None,
        };
        let faces = mesh.face_incidence()?;
        for (key, (count, _)) in &faces {
            if *count == 1 {
                for &v in &key[..dim] {
                    mesh.boundary[v] = true;
                }
            }
        }
        Ok(mesh)
    }

    /// Map face → (incident cell count, sum of induced orientations).
    fn face_incidence(&self) -> Result<HashMap<FaceKey, (u32, i32)>> {
        let d = self.dim;
        let mut faces: HashMap<FaceKey, (u32, i32)> = HashMap::with_capacity(self.num_cells() * 2);
        let mut face = [0usize; 3];
        for simplex in self.cells.chunks(d + 1) {
            for skip in 0..=d {
                let mut k = 0;
                for (i, &v) in simplex.iter().enumerate() {
                    if i != skip {
                        face[k] = v;
                        k += 1;
                    }
                }
                let (key, odd) = face_key(&face[..d]);
                let mut sign = if skip % 2 == 0 { 1 } else { -1 };
                if odd {
                    sign = -sign;
                }
                let entry = faces.entry(key).or_insert((0, 0));
                entry.0 += 1;
                entry.1 += sign;
                if entry.0 > 2 {
                    return Err(Error::InvalidMesh(
                        "a face is shared by more than two cells".into(),
                    ));
                }
            }
        }
        Ok(faces)
    }

    /// Check that every interior face is shared by exactly two cells inducing
    /// opposite orientations and every boundary face has only boundary
    /// vertices.
    pub fn audit_conformity(&self) -> Result<()> {
        let faces = self.face_incidence()?;
        for (key, (count, orient)) in &faces {
            if *count == 2 && *orient != 0 {
                return Err(Error::InvalidMesh(format!(
                    "face {:?} is shared by two cells with the same orientation",
                    &key[..self.dim]
                )));
            }
            if *count == 1 && key[..self.dim].iter().any(|&v| !self.boundary[v]) {
                return Err(Error::InvalidMesh(format!(
                    "boundary face {:?} has an interior vertex",
                    &key[..self.dim]
                )));
            }
        }
        for (ci, simplex) in self.cells.chunks(self.dim + 1).enumerate() {
            if signed_volume_of(self.dim, &self.coords, simplex) <= 0.0 {
                return Err(Error::InvalidMesh(format!("cell {ci} is not positively oriented")));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c * (self.dim + 1)..(c + 1) * (self.dim + 1)]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[usize]> {
        self.cells.chunks(self.dim + 1)
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.boundary[v]
    }

    pub fn boundary_vertices(&self) -> Vec<usize> {
        (0..self.num_vertices()).filter(|&v| self.boundary[v]).collect()
    }

    pub fn num_interior_vertices(&self) -> usize {
        self.boundary.iter().filter(|b| !**b).count()
    }

    pub fn box_spec(&self) -> Option<&BoxSpec> {
        self.box_spec.as_ref()
    }

    pub fn cell_volume(&self, c: usize) -> f64 {
        signed_volume_of(self.dim, &self.coords, self.cell(c))
    }

    /// `|Ω|`: sum of cell volumes.
    pub fn volume(&self) -> f64 {
        (0..self.num_cells()).map(|c| self.cell_volume(c)).sum()
    }

    /// Uniform refinement of a box mesh: the same box with twice the
    /// divisions. The Kuhn triangulation nests under this doubling.
    pub fn refine_uniform(&self) -> Result<SimplicialMesh> {
        let spec = self.box_spec.as_ref().ok_or_else(|| {
            Error::InvalidMesh("uniform refinement is only available for box meshes".into())
        })?;
        let divisions: Vec<usize> = spec.divisions.iter().map(|d| 2 * d).collect();
        build_box_mesh(self.dim, &divisions, &spec.lengths)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(32 * (self.num_vertices() + self.num_cells()));
        let _ = writeln!(out, "DIM {}", self.dim);
        let _ = writeln!(out, "VERTICES {}", self.num_vertices());
        let _ = writeln!(out, "CELLS {}", self.num_cells());
        for v in self.coords.chunks(self.dim) {
            let line: Vec<String> = v.iter().map(|x| format!("{x:.16e}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        for c in self.cells.chunks(self.dim + 1) {
            let line: Vec<String> = c.iter().map(|x| x.to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    /// Short SHA-256 digest of the text serialization.
    pub fn checksum(&self) -> String {
        checksum_hex(self.to_text().as_bytes())
    }

    pub fn parse(text: &str) -> Result<SimplicialMesh> {
        parse_mesh(text)
    }
}

pub fn checksum_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn header_value(lines: &mut std::iter::Peekable<impl Iterator<Item = (usize, String)>>, key: &str) -> Result<usize> {
    let (ln, line) = lines
        .next()
        .ok_or_else(|| parse_err(0, format!("missing '{key}' header")))?;
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some(k), Some(v), None) if k == key => v
            .parse::<usize>()
            .map_err(|_| parse_err(ln, format!("invalid count '{v}' for {key}"))),
        _ => Err(parse_err(ln, format!("expected '{key} <count>'"))),
    }
}

/// Parse the text mesh format. Never panics on malformed input.
pub fn parse_mesh(text: &str) -> Result<SimplicialMesh> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .peekable();
    let dim = header_value(&mut lines, "DIM")?;
    if !(dim == 2 || dim == 3) {
        return Err(parse_err(1, format!("unsupported dimension {dim}")));
    }
    let nv = header_value(&mut lines, "VERTICES")?;
    let nc = header_value(&mut lines, "CELLS")?;
    let mut coords = Vec::with_capacity(nv.min(1 << 20) * dim);
    for _ in 0..nv {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, "unexpected end of input in vertex block"))?;
        let mut count = 0;
        for tok in line.split_whitespace() {
            let x: f64 = tok
                .parse()
                .map_err(|_| parse_err(ln, format!("invalid coordinate '{tok}'")))?;
            if !x.is_finite() {
                return Err(parse_err(ln, "non-finite coordinate"));
            }
            coords.push(x);
            count += 1;
        }
        if count != dim {
            return Err(parse_err(ln, format!("expected {dim} coordinates, got {count}")));
        }
    }
    let mut cells = Vec::with_capacity(nc.min(1 << 20) * (dim + 1));
    for _ in 0..nc {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, "unexpected end of input in cell block"))?;
        let mut count = 0;
        for tok in line.split_whitespace() {
            let v: usize = tok
                .parse()
                .map_err(|_| parse_err(ln, format!("invalid vertex index '{tok}'")))?;
            if v >= nv {
                return Err(parse_err(ln, format!("vertex index {v} out of range")));
            }
            cells.push(v);
            count += 1;
        }
        if count != dim + 1 {
            return Err(parse_err(ln, format!("expected {} indices, got {count}", dim + 1)));
        }
    }
    if let Some((ln, _)) = lines.next() {
        return Err(parse_err(ln, "trailing content after cell block"));
    }
    SimplicialMesh::from_parts(dim, coords, cells)
}
