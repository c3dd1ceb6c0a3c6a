//! Coefficient vectors on a [`FemSpace`] and their text format.
//!
//! ```text
//! FEMFUNCTION
//! MESH 3f2a9c0d1e7b5a46
//! DOFS 3
//! 1.0000000000000000e0
//! -2.5000000000000000e-1
//! 0.0000000000000000e0
//! ```

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;

use super::FemSpace;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FemFunction {
    space: Arc<FemSpace>,
    coeffs: Vec<f64>,
}

impl FemFunction {
    pub fn new(space: Arc<FemSpace>, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != space.num_dofs() {
            return Err(Error::DimensionMismatch {
                expected: space.num_dofs(),
                got: coeffs.len(),
            });
        }
        Ok(FemFunction { space, coeffs })
    }

    pub fn zeros(space: Arc<FemSpace>) -> Self {
        let n = space.num_dofs();
        FemFunction {
            space,
            coeffs: vec![0.0; n],
        }
    }

    /// Nodal interpolant of `f` (boundary values are dropped).
    pub fn interpolate(space: Arc<FemSpace>, f: impl Fn(&[f64]) -> f64) -> Self {
        let coeffs = space.interpolate(f);
        FemFunction { space, coeffs }
    }

    /// Coefficients drawn uniformly from `[-1, 1]`.
    pub fn random(space: Arc<FemSpace>, rng: &mut impl Rng) -> Self {
        let coeffs = (0..space.num_dofs()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        FemFunction { space, coeffs }
    }

    pub fn space(&self) -> &Arc<FemSpace> {
        &self.space
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Value at mesh vertex `v`; zero on the boundary.
    pub fn value_at_vertex(&self, v: usize) -> f64 {
        let mesh = self.space.mesh();
        if mesh.is_boundary(v) {
            return 0.0;
        }
        // dofs are numbered in vertex order
        let dof = (0..v).filter(|&w| !mesh.is_boundary(w)).count();
        self.coeffs[dof]
    }

    pub fn scaled(&self, t: f64) -> Self {
        FemFunction {
            space: self.space.clone(),
            coeffs: self.coeffs.iter().map(|c| t * c).collect(),
        }
    }

    /// `self + t * other`.
    pub fn add_scaled(&self, t: f64, other: &FemFunction) -> Result<Self> {
        self.check_same_space(other)?;
        Ok(FemFunction {
            space: self.space.clone(),
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a + t * b)
                .collect(),
        })
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|c| *c == 0.0)
    }

    pub(crate) fn check_same_space(&self, other: &FemFunction) -> Result<()> {
        if Arc::ptr_eq(&self.space, &other.space)
            || (self.space.checksum() == other.space.checksum()
                && self.space.num_dofs() == other.space.num_dofs())
        {
            Ok(())
        } else {
            Err(Error::InvalidParams("functions live on different meshes".into()))
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::with_capacity(24 * (self.coeffs.len() + 3));
        s.push_str("FEMFUNCTION\n");
        let _ = writeln!(s, "MESH {}", self.space.checksum());
        let _ = writeln!(s, "DOFS {}", self.coeffs.len());
        for c in &self.coeffs {
            let _ = writeln!(s, "{c:.16e}");
        }
        s
    }

    /// Parse a function file and bind it to `space`, checking the mesh
    /// checksum and the dof count.
    pub fn from_text(space: Arc<FemSpace>, text: &str) -> Result<Self> {
        let parsed = parse_fem_function(text)?;
        if parsed.mesh_checksum != space.checksum() {
            return Err(Error::InvalidParams(format!(
                "function belongs to mesh {}, not {}",
                parsed.mesh_checksum,
                space.checksum()
            )));
        }
        Self::new(space, parsed.coeffs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedFemFunction {
    pub mesh_checksum: String,
    pub coeffs: Vec<f64>,
}

pub fn parse_fem_function(text: &str) -> Result<ParsedFemFunction> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let err = |line: usize, msg: &str| Error::Parse {
        line,
        msg: msg.to_string(),
    };
    let (ln, head) = lines.next().ok_or_else(|| err(0, "empty input"))?;
    if head != "FEMFUNCTION" {
        return Err(err(ln, "expected FEMFUNCTION"));
    }
    let (ln, mesh_line) = lines.next().ok_or_else(|| err(ln, "missing MESH line"))?;
    let mesh_checksum = match mesh_line.split_whitespace().collect::<Vec<_>>()[..] {
        ["MESH", sum] if !sum.is_empty() && sum.chars().all(|c| c.is_ascii_hexdigit()) => {
            sum.to_string()
        }
        _ => return Err(err(ln, "expected MESH <hex checksum>")),
    };
    let (ln, dofs_line) = lines.next().ok_or_else(|| err(ln, "missing DOFS line"))?;
    let n: usize = match dofs_line.split_whitespace().collect::<Vec<_>>()[..] {
        ["DOFS", n] => n.parse().map_err(|_| err(ln, "bad DOFS count"))?,
        _ => return Err(err(ln, "expected DOFS <count>")),
    };
    let mut coeffs = Vec::with_capacity(n.min(1 << 20));
    let mut last = ln;
    for _ in 0..n {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| err(last, "fewer coefficients than DOFS"))?;
        let v: f64 = l.parse().map_err(|_| err(ln, "bad coefficient"))?;
        if !v.is_finite() {
            return Err(err(ln, "non-finite coefficient"));
        }
        coeffs.push(v);
        last = ln;
    }
    if let Some((ln, _)) = lines.next() {
        return Err(err(ln, "trailing content"));
    }
    Ok(ParsedFemFunction {
        mesh_checksum,
        coeffs,
    })
}
