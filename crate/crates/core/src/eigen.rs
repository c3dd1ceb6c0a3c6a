//! Eigenpairs of `A_p u = λ B_p u` on the discrete space.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{solve_p_poisson, FemFunction, FemSpace, HessianTerm, PPoissonOptions, Regularization};
use crate::sparse::{dot, minres, SpdSolver};

pub const LINEAR_TOL: f64 = 1e-10;
pub const FIRST_EIGEN_TOL: f64 = 1e-8;
pub const FIRST_EIGEN_MAX_ITER: usize = 10_000;
/// Residual targeted by the continuation corrector.
pub const CONTINUATION_TOL: f64 = 1e-9;
/// Relative gap below which consecutive values count as one cluster.
pub const GAP_FLAG_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenMethod {
    LinearP2,
    InverseIterationFirst,
    Continuation,
}

impl EigenMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EigenMethod::LinearP2 => "linear-p2",
            EigenMethod::InverseIterationFirst => "inverse-iteration-first",
            EigenMethod::Continuation => "continuation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    /// Normalized to `p I_p = 1`.
    pub function: FemFunction,
    pub residual: f64,
}

#[derive(Debug, Clone)]
pub struct EigenSequence {
    pub pairs: Vec<EigenPair>,
    pub p: f64,
    pub method: EigenMethod,
    pub mesh_id: String,
}

impl EigenSequence {
    pub fn values(&self) -> Vec<f64> {
        self.pairs.iter().map(|e| e.value).collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// `λ_m` (1-based).
    pub fn lambda(&self, m: usize) -> Option<f64> {
        m.checked_sub(1).and_then(|i| self.pairs.get(i)).map(|e| e.value)
    }

    /// Serializable summary; `files[i]` names the coefficient file of pair `i`.
    pub fn to_record(&self, files: &[String]) -> EigenSequenceRecord {
        EigenSequenceRecord {
            mesh_checksum: self.mesh_id.clone(),
            p: self.p,
            method: self.method,
            pairs: self
                .pairs
                .iter()
                .enumerate()
                .map(|(i, e)| EigenPairRecord {
                    value: e.value,
                    residual: e.residual,
                    coefficients: files.get(i).cloned(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPairRecord {
    pub value: f64,
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<String>,
}

/// JSON form of an [`EigenSequence`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenSequenceRecord {
    pub mesh_checksum: String,
    pub p: f64,
    pub method: EigenMethod,
    pub pairs: Vec<EigenPairRecord>,
}

impl EigenSequenceRecord {
    pub fn values(&self) -> Vec<f64> {
        self.pairs.iter().map(|e| e.value).collect()
    }
}

/// Parse and validate an EigenSequence JSON document.
pub fn parse_eigen_sequence(json: &str) -> Result<EigenSequenceRecord> {
    let rec: EigenSequenceRecord = serde_json::from_str(json)?;
    if !(rec.p.is_finite() && rec.p > 1.0) {
        return Err(Error::InvalidParams(format!("eigen sequence has p = {}", rec.p)));
    }
    if rec.pairs.is_empty() {
        return Err(Error::InvalidParams("eigen sequence has no pairs".into()));
    }
    for (i, e) in rec.pairs.iter().enumerate() {
        if !(e.value.is_finite() && e.value > 0.0) || !(e.residual.is_finite() && e.residual >= 0.0) {
            return Err(Error::InvalidParams(format!("pair {} has invalid value or residual", i + 1)));
        }
        if i > 0 && e.value < rec.pairs[i - 1].value {
            return Err(Error::InvalidParams(format!("values decrease at m = {}", i + 1)));
        }
    }
    Ok(rec)
}

/// `I_p(u) / J_p(u)`.
pub fn rayleigh(u: &FemFunction, p: f64) -> Result<f64> {
    rayleigh_coeffs(u.space(), u.coeffs(), p)
}

pub(crate) fn rayleigh_coeffs(space: &FemSpace, u: &[f64], p: f64) -> Result<f64> {
    let den = space.value_power_integral(u, p);
    if !(den > 0.0) {
        return Err(Error::InvalidParams("rayleigh quotient of the zero function".into()));
    }
    Ok(space.grad_power_integral(u, p) / den)
}

/// `‖A_p u - λ B_p u‖_*`.
pub fn eigen_residual(space: &FemSpace, u: &[f64], lambda: f64, p: f64, reg: Regularization) -> Result<f64> {
    let a = space.grad_operator(u, p, reg);
    let b = space.value_operator(u, p);
    let r: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - lambda * y).collect();
    space.dual_norm(&r, p, reg)
}

fn normalize(space: &FemSpace, u: &mut [f64], p: f64) {
    let s = space.w_norm(u, p);
    if s > 0.0 {
        u.iter_mut().for_each(|x| *x /= s);
    }
}

/// Flip `u` so that its largest-magnitude coefficient (first on ties) is
/// positive.
fn fix_sign(u: &mut [f64]) {
    let mut best = 0;
    for (i, x) in u.iter().enumerate() {
        if x.abs() > u[best].abs() {
            best = i;
        }
    }
    if u.get(best).is_some_and(|x| *x < 0.0) {
        u.iter_mut().for_each(|x| *x = -*x);
    }
}

/// The `m` smallest generalized eigenpairs of (stiffness, mass) by block
/// subspace iteration with Rayleigh–Ritz.
pub fn eigs_linear_p2(space: &Arc<FemSpace>, m: usize) -> Result<EigenSequence> {
    let n = space.num_dofs();
    if m == 0 || m > n {
        return Err(Error::InvalidParams(format!(
            "requested {m} eigenpairs from a space of dimension {n}"
        )));
    }
    let k = space.stiffness();
    let mass = space.mass();
    let b = (m + (m / 2).max(4)).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<Vec<f64>> = (0..b)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut theta = vec![0.0; b];
    let max_iter = 2000;
    let mut residuals = vec![f64::INFINITY; m];
    for it in 0..max_iter {
        // y_i = K^{-1} M x_i
        let y: Vec<Vec<f64>> = x
            .iter()
            .map(|xi| k.solve(&mass.mul(xi)))
            .collect::<Result<_>>()?;
        if it > 0 {
            // r_i = K x_i - θ_i M x_i, so K^{-1} r_i = x_i - θ_i y_i; scale by ‖x_i‖_K = sqrt(θ_i)
            for i in 0..m {
                let kr: Vec<f64> = x[i].iter().zip(&y[i]).map(|(a, c)| a - theta[i] * c).collect();
                let r = k.matrix.mul(&x[i]);
                let mx = mass.mul(&x[i]);
                let r: Vec<f64> = r.iter().zip(&mx).map(|(a, c)| a - theta[i] * c).collect();
                residuals[i] = dot(&r, &kr).abs().sqrt() / theta[i].sqrt();
            }
            if residuals.iter().all(|r| *r < LINEAR_TOL) {
                break;
            }
            if it + 1 == max_iter {
                return Err(Error::NoConvergence {
                    what: "linear eigensolver".into(),
                    iterations: it,
                    residual: residuals.iter().copied().fold(0.0, f64::max),
                });
            }
        }
        // Rayleigh–Ritz on span(y)
        let ky: Vec<Vec<f64>> = y.iter().map(|v| k.matrix.mul(v)).collect();
        let my: Vec<Vec<f64>> = y.iter().map(|v| mass.mul(v)).collect();
        let kr = DMatrix::from_fn(b, b, |i, j| dot(&y[i], &ky[j]));
        let mr = DMatrix::from_fn(b, b, |i, j| dot(&y[i], &my[j]));
        let kr = (&kr + kr.transpose()) * 0.5;
        let mr = (&mr + mr.transpose()) * 0.5;
        let chol = mr
            .cholesky()
            .ok_or_else(|| Error::InvalidParams("subspace lost rank in Rayleigh-Ritz".into()))?;
        let l = chol.l();
        let linv = l
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidParams("singular Ritz mass matrix".into()))?;
        let c = &linv * &kr * linv.transpose();
        let c = (&c + c.transpose()) * 0.5;
        let eig = SymmetricEigen::new(c);
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
        let z = linv.transpose() * &eig.eigenvectors;
        x = order
            .iter()
            .map(|&col| {
                let mut v = vec![0.0; n];
                for (j, yj) in y.iter().enumerate() {
                    let w = z[(j, col)];
                    for (vi, yji) in v.iter_mut().zip(yj) {
                        *vi += w * yji;
                    }
                }
                v
            })
            .collect();
        theta = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    }
    let pairs = (0..m)
        .map(|i| {
            let mut u = x[i].clone();
            normalize(space, &mut u, 2.0);
            fix_sign(&mut u);
            Ok(EigenPair {
                value: theta[i],
                function: FemFunction::new(space.clone(), u)?,
                residual: residuals[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EigenSequence {
        pairs,
        p: 2.0,
        method: EigenMethod::LinearP2,
        mesh_id: space.checksum().to_string(),
    })
}

/// First eigenpair at exponent `p` by inverse iteration: solve
/// `A_p w = B_p u`, renormalize, repeat.
pub fn first_eigen_p(space: &Arc<FemSpace>, p: f64, seed: u64) -> Result<EigenPair> {
    first_eigen_p_with(space, p, seed, FIRST_EIGEN_MAX_ITER, Regularization::default())
}

pub fn first_eigen_p_with(
    space: &Arc<FemSpace>,
    p: f64,
    seed: u64,
    max_iter: usize,
    reg: Regularization,
) -> Result<EigenPair> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::InvalidParams(format!("first eigenpair needs p > 1, got {p}")));
    }
    let n = space.num_dofs();
    if n == 0 {
        return Err(Error::InvalidParams("space has no interior vertices".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.0)).collect();
    normalize(space, &mut u, p);
    let inner = PPoissonOptions {
        rtol: 1e-13,
        ..PPoissonOptions::default()
    };
    let mut residual = f64::INFINITY;
    let mut lambda = rayleigh_coeffs(space, &u, p)?;
    for _ in 0..max_iter {
        let b = space.value_operator(&u, p);
        let mut w = solve_p_poisson(space, p, &b, reg, inner)?;
        normalize(space, &mut w, p);
        u = w;
        lambda = rayleigh_coeffs(space, &u, p)?;
        residual = eigen_residual(space, &u, lambda, p, reg)?;
        if residual < FIRST_EIGEN_TOL {
            if u.iter().sum::<f64>() < 0.0 {
                u.iter_mut().for_each(|x| *x = -*x);
            }
            return Ok(EigenPair {
                value: lambda,
                function: FemFunction::new(space.clone(), u)?,
                residual,
            });
        }
    }
    let _ = lambda;
    Err(Error::NoConvergence {
        what: "first eigenpair inverse iteration".into(),
        iterations: max_iter,
        residual,
    })
}

/// Relative `L^p` distance between the sign orbits `{±v}` and `u`.
pub(crate) fn orbit_distance(space: &FemSpace, u: &[f64], v: &[f64], p: f64) -> f64 {
    let scale = space.value_power_integral(v, p).powf(1.0 / p).max(f64::MIN_POSITIVE);
    let dm: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    let dp: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + b).collect();
    let d = space
        .value_power_integral(&dm, p)
        .min(space.value_power_integral(&dp, p));
    d.powf(1.0 / p) / scale
}

/// Newton on the bordered system `A_p u - λ B_p u = 0`, `J_p(u) = J_p(u_0)`.
fn polish_eigenpair(
    space: &FemSpace,
    u0: &[f64],
    lambda0: f64,
    p: f64,
    tol: f64,
    reg: Regularization,
) -> Result<(Vec<f64>, f64, f64)> {
    let n = space.num_dofs();
    let mut u = u0.to_vec();
    let mut lambda = lambda0;
    let j0 = space.value_power_integral(&u, p) / p;
    let floor = if p < 2.0 && reg.enabled { reg.epsilon } else { 0.0 };
    let mut res = eigen_residual(space, &u, lambda, p, reg)?;
    for _ in 0..40 {
        if res < tol {
            break;
        }
        let a = space.grad_operator(&u, p, reg);
        let b = space.value_operator(&u, p);
        let f1: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - lambda * y).collect();
        let f2 = space.value_power_integral(&u, p) / p - j0;
        let h = space.hessian(
            &u,
            &[HessianTerm::gradient(p, 1.0), HessianTerm::value(p, -lambda)],
            floor,
        );
        let pre_floor = if p == 2.0 { 0.0 } else { 1e-3 * f1.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12) };
        let pre = SpdSolver::new(space.hessian(&u, &[HessianTerm::gradient(p, 1.0)], pre_floor.max(floor)), 1e-10);
        let mut pb = vec![0.0; n];
        pre.precondition(&b, &mut pb);
        let schur = dot(&b, &pb).max(f64::MIN_POSITIVE);
        let rhs: Vec<f64> = f1.iter().map(|x| -x).chain(std::iter::once(f2)).collect();
        let mut sol = vec![0.0; n + 1];
        let matvec = |x: &[f64], y: &mut [f64]| {
            h.matvec(&x[..n], &mut y[..n]);
            for i in 0..n {
                y[i] -= b[i] * x[n];
            }
            y[n] = -dot(&b, &x[..n]);
        };
        let precond = |r: &[f64], z: &mut [f64]| {
            pre.precondition(&r[..n], &mut z[..n]);
            z[n] = r[n] / schur;
        };
        minres(matvec, &rhs, &mut sol, precond, 1e-12, 4 * n + 200);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..12 {
            let trial: Vec<f64> = u.iter().zip(&sol).map(|(x, d)| x + t * d).collect();
            let lt = lambda + t * sol[n];
            let rt = eigen_residual(space, &trial, lt, p, reg)?;
            if rt < res {
                u = trial;
                lambda = lt;
                res = rt;
                improved = true;
                break;
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    // report at the p I_p = 1 normalization with the Rayleigh value
    normalize(space, &mut u, p);
    let lambda = rayleigh_coeffs(space, &u, p)?;
    let res = eigen_residual(space, &u, lambda, p, reg)?;
    Ok((u, lambda, res))
}

/// Deflated Rayleigh descent: decrease `R(u) + μ Σ_j ⟨B_p u_j, u⟩²` in the
/// stiffness metric, raising `μ` geometrically while a pairing exceeds
/// `1e-8`.
fn deflated_descent(space: &FemSpace, u0: &[f64], lower: &[Vec<f64>], p: f64, iters: usize) -> Result<Vec<f64>> {
    let reg = Regularization::default();
    let k = space.stiffness();
    let bl: Vec<Vec<f64>> = lower.iter().map(|v| space.value_operator(v, p)).collect();
    let mut u = u0.to_vec();
    normalize(space, &mut u, p);
    let mut mu = 10.0;
    let objective = |u: &[f64], mu: f64| -> Result<f64> {
        let pen: f64 = bl.iter().map(|b| dot(b, u).powi(2)).sum();
        Ok(rayleigh_coeffs(space, u, p)? + mu * pen)
    };
    for _ in 0..iters {
        let pairings: f64 = bl.iter().map(|b| dot(b, &u).abs()).fold(0.0, f64::max);
        if pairings > 1e-8 && mu < 1e8 {
            mu *= 10.0;
        }
        let lam = rayleigh_coeffs(space, &u, p)?;
        let jp = space.value_power_integral(&u, p);
        let a = space.grad_operator(&u, p, reg);
        let b = space.value_operator(&u, p);
        // ∇R = p (A_p u - R B_p u) / ∫|u|^p
        let mut g: Vec<f64> = a.iter().zip(&b).map(|(x, y)| p * (x - lam * y) / jp).collect();
        for bj in &bl {
            let c = 2.0 * mu * dot(bj, &u);
            for (gi, bi) in g.iter_mut().zip(bj) {
                *gi += c * bi;
            }
        }
        let d = k.solve(&g)?;
        let f0 = objective(&u, mu)?;
        let slope = dot(&g, &d);
        if !(slope > 0.0) {
            break;
        }
        let mut t = 1.0 / lam;
        let mut moved = false;
        for _ in 0..30 {
            let mut trial: Vec<f64> = u.iter().zip(&d).map(|(x, y)| x - t * y).collect();
            normalize(space, &mut trial, p);
            if objective(&trial, mu)? < f0 - 1e-4 * t * slope {
                u = trial;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(u)
}

/// Eigenpairs at `p_target` by continuation from the linear ones at `p = 2`
/// in `steps` equal increments of `p`.
pub fn eigs_continuation(space: &Arc<FemSpace>, p_target: f64, m: usize, steps: usize) -> Result<EigenSequence> {
    if !(p_target > 1.0 && p_target.is_finite()) {
        return Err(Error::InvalidParams(format!("continuation needs p > 1, got {p_target}")));
    }
    if steps == 0 {
        return Err(Error::InvalidParams("continuation needs at least one step".into()));
    }
    let reg = Regularization::default();
    let base = eigs_linear_p2(space, m)?;
    let mut funcs: Vec<Vec<f64>> = base.pairs.iter().map(|e| e.function.coeffs().to_vec()).collect();
    let mut values: Vec<f64> = base.values();
    let mut residuals: Vec<f64> = base.pairs.iter().map(|e| e.residual).collect();
    if p_target != 2.0 {
        for step in 1..=steps {
            let p = 2.0 + (p_target - 2.0) * step as f64 / steps as f64;
            let mut next: Vec<(Vec<f64>, f64, f64)> = Vec::with_capacity(m);
            for i in 0..m {
                let lower: Vec<Vec<f64>> = next.iter().map(|t| t.0.clone()).collect();
                let pred = deflated_descent(space, &funcs[i], &lower, p, 10)?;
                let lam0 = rayleigh_coeffs(space, &pred, p)?;
                let (u, lam, res) = polish_eigenpair(space, &pred, lam0, p, CONTINUATION_TOL, reg)?;
                if !(res < 1e-6) {
                    return Err(Error::Continuation {
                        step,
                        p,
                        pair: i + 1,
                        reason: format!("residual {res:.3e} after correction"),
                    });
                }
                if let Some(j) = lower.iter().position(|v| orbit_distance(space, &u, v, p) < 1e-6) {
                    return Err(Error::Continuation {
                        step,
                        p,
                        pair: i + 1,
                        reason: format!("converged onto pair {}", j + 1),
                    });
                }
                next.push((u, lam, res));
            }
            next.sort_by(|a, b| a.1.total_cmp(&b.1));
            funcs = next.iter().map(|t| t.0.clone()).collect();
            values = next.iter().map(|t| t.1).collect();
            residuals = next.iter().map(|t| t.2).collect();
        }
    }
    // λ_1 cross-check
    let first = first_eigen_p(space, p_target, 0)?;
    if first.value < values[0] {
        values[0] = first.value;
        funcs[0] = first.function.coeffs().to_vec();
        residuals[0] = first.residual;
    }
    let mut pairs = (0..m)
        .map(|i| {
            let mut u = funcs[i].clone();
            fix_sign(&mut u);
            Ok(EigenPair {
                value: values[i],
                function: FemFunction::new(space.clone(), u)?,
                residual: residuals[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    pairs.sort_by(|a, b| a.value.total_cmp(&b.value));
    Ok(EigenSequence {
        pairs,
        p: p_target,
        method: EigenMethod::Continuation,
        mesh_id: space.checksum().to_string(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub m: usize,
    /// `λ_{m+1} - λ_m`
    pub gap: f64,
    /// `gap < 1e-6 (1 + |λ_m|)`
    pub near_multiple: bool,
}

/// Consecutive gaps of a value list.
pub fn gap_report(values: &[f64]) -> Vec<GapEntry> {
    values
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let gap = w[1] - w[0];
            GapEntry {
                m: i + 1,
                gap,
                near_multiple: gap < GAP_FLAG_TOL * (1.0 + w[0].abs()),
            }
        })
        .collect()
}

pub fn eigen_gap_report(seq: &EigenSequence) -> Result<Vec<GapEntry>> {
    if seq.len() < 2 {
        return Err(Error::InvalidParams("gap report needs at least two pairs".into()));
    }
    Ok(gap_report(&seq.values()))
}
