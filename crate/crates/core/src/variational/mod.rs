//! Mountain-pass search for critical points of the energy, deflation, and
//! the geometric audits around it.

mod audits;
mod multisolve;
mod ps;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::eigen::orbit_distance;
use crate::error::{Error, Result};
use crate::fem::{Exponents, FemFunction, FemSpace, Regularization};
use crate::params::ProblemParams;
use crate::sobolev::ps_ceiling;
use crate::sparse::{dot, minres, SpdSolver};

pub use audits::{
    geometry_audit, origin_audit, GeometryAuditReport, GeometryRow, OriginAuditReport, RadiusRow,
    RayAudit,
};
pub use multisolve::{
    deflated_multisolve, multisolve_from, predicted_threshold, scan_lambda, seed_endpoints,
    LambdaScan, LambdaScanReport, MultisolveReport, ScanRow, SeedMiss,
};
pub use ps::{ps_diagnostic, PsReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Acceptance tolerance on the dual norm of `E'`.
    pub grad_tol: f64,
    /// Path-deformation iterations per search.
    pub max_iter: usize,
    /// Nodes on the discretized path, endpoints included.
    pub nodes: usize,
    /// Relative `L^p` distance separating sign orbits.
    pub delta: f64,
    /// Relative energy separation between distinct pairs.
    pub energy_sep: f64,
    pub seed: u64,
    /// Initial descent step in the stiffness metric.
    pub step: f64,
    /// Relative gradient size at which Newton polishing is attempted.
    pub newton_switch: f64,
    pub max_newton: usize,
    pub max_rounds: usize,
    pub regularization: Regularization,
    /// Run independent seeds of a round on the rayon pool.
    pub parallel: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            grad_tol: 1e-8,
            max_iter: 2000,
            nodes: 64,
            delta: 1e-3,
            energy_sep: 1e-9,
            seed: 0,
            step: 1.0,
            newton_switch: 1e-2,
            max_newton: 40,
            max_rounds: 3,
            regularization: Regularization::default(),
            parallel: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("grad_tol", self.grad_tol),
            ("delta", self.delta),
            ("energy_sep", self.energy_sep),
            ("step", self.step),
            ("newton_switch", self.newton_switch),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.nodes < 3 {
            return Err(Error::InvalidParams(format!("path needs >= 3 nodes, got {}", self.nodes)));
        }
        if self.max_iter == 0 || self.max_rounds == 0 {
            return Err(Error::InvalidParams("iteration limits must be >= 1".into()));
        }
        Ok(())
    }
}

/// Energy, gradient size and iterate norm per iteration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub energies: Vec<f64>,
    pub grad_norms: Vec<f64>,
    pub norms: Vec<f64>,
}

impl IterationTrace {
    pub fn push(&mut self, energy: f64, grad: f64, norm: f64) {
        self.energies.push(energy);
        self.grad_norms.push(grad);
        self.norms.push(norm);
    }

    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct CriticalPoint {
    pub function: FemFunction,
    pub energy: f64,
    pub grad_dual_norm: f64,
    pub found_at_lambda: f64,
    /// Sign-orbit label `±k`.
    pub pair_tag: String,
    pub iterations: usize,
    pub trace: IterationTrace,
}

/// A search that did not produce an acceptable critical point.
#[derive(Debug, Clone)]
pub struct SearchFailure {
    pub reason: String,
    pub trace: IterationTrace,
    pub ps: PsReport,
    /// Last converged point, if it was rejected by the energy window.
    pub candidate: Option<(FemFunction, f64)>,
}

impl std::fmt::Display for SearchFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} ({})", self.reason, self.ps.message)
    }
}

/// The energy functional at fixed parameters on one space.
pub(crate) struct Functional<'a> {
    pub space: &'a Arc<FemSpace>,
    pub ex: Exponents,
    pub lambda: f64,
    pub reg: Regularization,
}

impl<'a> Functional<'a> {
    pub fn new(space: &'a Arc<FemSpace>, params: &ProblemParams, reg: Regularization) -> Result<Self> {
        params.validate()?;
        if space.dim() != params.n {
            return Err(Error::DimensionMismatch {
                expected: params.n,
                got: space.dim(),
            });
        }
        let lambda = params
            .lambda
            .ok_or_else(|| Error::InvalidParams("lambda is required".into()))?;
        Ok(Functional {
            space,
            ex: Exponents::from(params),
            lambda,
            reg,
        })
    }

    pub fn energy(&self, u: &[f64]) -> f64 {
        self.space.potentials(u, &self.ex).energy(self.lambda)
    }

    pub fn gradient(&self, u: &[f64]) -> Vec<f64> {
        self.space.energy_gradient(u, &self.ex, self.lambda, self.reg)
    }

    pub fn dual_norm(&self, g: &[f64]) -> Result<f64> {
        self.space.dual_norm(g, self.ex.p, self.reg)
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        self.space.w_norm(u, self.ex.p)
    }

    /// `L^p` norm, the metric for path spacing and orbit distances.
    pub fn lp_norm(&self, u: &[f64]) -> f64 {
        self.space.value_power_integral(u, self.ex.p).powf(1.0 / self.ex.p)
    }

    fn hessian_floor(&self) -> f64 {
        if self.ex.p < 2.0 && self.reg.enabled {
            self.reg.epsilon
        } else {
            0.0
        }
    }

    fn preconditioner(&self, u: &[f64]) -> Arc<SpdSolver> {
        if self.ex.p == 2.0 {
            return self.space.stiffness();
        }
        let gmax = self.space.w_norm(u, self.ex.p) / self.space.volume().powf(1.0 / self.ex.p);
        let floor = (1e-2 * gmax).max(self.hessian_floor()).max(1e-12);
        let mut terms = vec![crate::fem::HessianTerm::gradient(self.ex.p, 1.0)];
        if let Some(q) = self.ex.q {
            terms.push(crate::fem::HessianTerm::gradient(q, 1.0));
        }
        Arc::new(SpdSolver::new(self.space.hessian(u, &terms, floor), 1e-10))
    }
}

/// `Π_i (1/d_i² + 1)` with `d_i` the relative orbit distance to `v_i`.
fn deflation_factor(f: &Functional, u: &[f64], set: &[Vec<f64>]) -> f64 {
    set.iter()
        .map(|v| {
            let d = orbit_distance(f.space, u, v, f.ex.p);
            1.0 / (d * d) + 1.0
        })
        .product()
}

/// Gradient of `ln Π_i (1/d_i² + 1)` where `d_i` is the relative `L^p`
/// distance from `u` to the orbit `{±v_i}`.
fn deflation_log_gradient(f: &Functional, u: &[f64], set: &[Vec<f64>]) -> Vec<f64> {
    let p = f.ex.p;
    let space = f.space;
    let mut out = vec![0.0; u.len()];
    for v in set {
        let c = space.value_power_integral(v, p).powf(1.0 / p);
        let wm: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
        let wp: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + b).collect();
        let (im, ip) = (space.value_power_integral(&wm, p), space.value_power_integral(&wp, p));
        let (w, iw) = if im <= ip { (wm, im) } else { (wp, ip) };
        if iw == 0.0 {
            continue;
        }
        let d2 = iw.powf(2.0 / p) / (c * c);
        let bw = space.value_operator(&w, p);
        let coef = 2.0 * iw.powf(2.0 / p - 1.0) / (c * c);
        // ∂ ln(d^{-2} + 1) = -d^{-4} ∇d² / (d^{-2} + 1)
        let factor = -(1.0 / (d2 * d2)) / (1.0 / d2 + 1.0) * coef;
        for (o, b) in out.iter_mut().zip(&bw) {
            *o += factor * b;
        }
    }
    out
}

pub(crate) struct Polished {
    pub u: Vec<f64>,
    pub energy: f64,
    pub grad: f64,
    pub iterations: usize,
}

/// Newton iteration for `E'(u) = 0` with MINRES on the (indefinite)
/// Hessian, optionally deflated away from the orbits in `deflate`.
pub(crate) fn newton_polish(
    f: &Functional,
    u0: &[f64],
    deflate: &[Vec<f64>],
    cfg: &SolverConfig,
    trace: &mut IterationTrace,
) -> Result<Option<Polished>> {
    let n = u0.len();
    let mut u = u0.to_vec();
    let mut g = f.gradient(&u);
    let mut gn = f.dual_norm(&g)?;
    let mut merit = gn * deflation_factor(f, &u, deflate);
    let terms = FemSpace::energy_hessian_terms(&f.ex, f.lambda);
    for it in 0..=cfg.max_newton {
        trace.push(f.energy(&u), gn, f.norm(&u));
        if gn < cfg.grad_tol {
            return Ok(Some(Polished {
                energy: f.energy(&u),
                u,
                grad: gn,
                iterations: it,
            }));
        }
        if it == cfg.max_newton {
            break;
        }
        let h = f.space.hessian(&u, &terms, f.hessian_floor());
        let pre = f.preconditioner(&u);
        let rhs: Vec<f64> = g.iter().map(|x| -x).collect();
        let mut d = vec![0.0; n];
        minres(
            |x, y| h.matvec(x, y),
            &rhs,
            &mut d,
            |r, z| pre.precondition(r, z),
            1e-11,
            4 * n + 200,
        );
        if !deflate.is_empty() {
            let eta = dot(&deflation_log_gradient(f, &u, deflate), &d);
            let denom = 1.0 - eta;
            if denom.abs() > 1e-8 {
                d.iter_mut().for_each(|x| *x /= denom);
            }
        }
        // at most the size of the iterate per step
        let (un, dn) = (f.norm(&u), f.norm(&d));
        let mut t = if dn > un && un > 0.0 { un / dn } else { 1.0 };
        let mut moved = false;
        for _ in 0..25 {
            let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            let gt = f.gradient(&trial);
            if gt.iter().any(|x| !x.is_finite()) {
                t *= 0.5;
                continue;
            }
            let gnt = f.dual_norm(&gt)?;
            let mt = gnt * deflation_factor(f, &trial, deflate);
            if mt.is_finite() && mt < merit {
                u = trial;
                g = gt;
                gn = gnt;
                merit = mt;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(None)
}

fn argmax_interior(values: &[f64]) -> usize {
    let mut best = 1;
    for i in 1..values.len() - 1 {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// Redistribute the interior nodes at equal `L^p` arc length; returns the
/// length of the path before redistribution.
fn equidistribute(f: &Functional, path: &mut [Vec<f64>]) -> f64 {
    let n = path.len();
    let mut cum = vec![0.0; n];
    for k in 1..n {
        let d: Vec<f64> = path[k].iter().zip(&path[k - 1]).map(|(a, b)| a - b).collect();
        cum[k] = cum[k - 1] + f.lp_norm(&d);
    }
    let total = cum[n - 1];
    if !(total > 0.0) {
        return total;
    }
    let old = path.to_vec();
    let mut seg = 0;
    for (k, node) in path.iter_mut().enumerate().take(n - 1).skip(1) {
        let s = total * k as f64 / (n - 1) as f64;
        while seg + 1 < n - 1 && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let theta = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        for (i, x) in node.iter_mut().enumerate() {
            *x = (1.0 - theta) * old[seg][i] + theta * old[seg + 1][i];
        }
    }
    total
}

const STALL_SWITCH: f64 = 1e-6;
/// Energies below this fraction of `c*` are taken as the trivial solution.
const TRIVIAL_FRACTION: f64 = 1e-8;

/// `0 < E < c*`, with the origin's neighbourhood excluded.
pub(crate) fn in_window(energy: f64, ceiling: f64) -> bool {
    energy > TRIVIAL_FRACTION * ceiling && energy < ceiling
}
const STALL_ITERATIONS: usize = 200;
/// Iterations without a new best maximum before the top node is handed to
/// Newton regardless of its gradient.
const PLATEAU_ITERATIONS: usize = 40;

/// Mountain-pass search from the origin to `endpoint`.
pub fn mountain_pass(
    params: &ProblemParams,
    config: &SolverConfig,
    endpoint: &FemFunction,
) -> std::result::Result<CriticalPoint, SearchFailure> {
    mountain_pass_deflated(params, config, endpoint, &[])
}

pub(crate) fn failure(reason: impl Into<String>, trace: IterationTrace, ceiling: f64) -> SearchFailure {
    let ps = ps_diagnostic(&trace, ceiling);
    SearchFailure {
        reason: reason.into(),
        trace,
        ps,
        candidate: None,
    }
}

/// [`mountain_pass`] whose Newton stage is deflated away from the orbits of
/// `deflate`.
pub fn mountain_pass_deflated(
    params: &ProblemParams,
    config: &SolverConfig,
    endpoint: &FemFunction,
    deflate: &[Vec<f64>],
) -> std::result::Result<CriticalPoint, SearchFailure> {
    let ceiling = ps_ceiling(params.n, params.p).unwrap_or(f64::NAN);
    let space = endpoint.space().clone();
    let setup = || -> Result<Functional> {
        config.validate()?;
        Functional::new(&space, params, config.regularization)
    };
    let f = match setup() {
        Ok(f) => f,
        Err(e) => return Err(failure(e.to_string(), IterationTrace::default(), ceiling)),
    };
    let e_end = f.energy(endpoint.coeffs());
    if endpoint.is_zero() || !(e_end <= 0.0) {
        return Err(failure(
            format!("endpoint must be nonzero with E <= 0, got E = {e_end}"),
            IterationTrace::default(),
            ceiling,
        ));
    }
    let n = config.nodes;
    let mut path: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let t = k as f64 / (n - 1) as f64;
            endpoint.coeffs().iter().map(|x| t * x).collect()
        })
        .collect();
    let mut energies: Vec<f64> = path.iter().map(|u| f.energy(u)).collect();
    let mut trace = IterationTrace::default();
    let mut step = config.step;
    let mut switch = config.newton_switch;
    let mut rejected: Option<(Vec<f64>, f64)> = None;
    let mut length = f.lp_norm(endpoint.coeffs());
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut stop = None;
    let k = space.stiffness();
    for it in 0..config.max_iter {
        let i = argmax_interior(&energies);
        let u = path[i].clone();
        let g = f.gradient(&u);
        let d = match k.solve(&g) {
            Ok(d) => d,
            Err(e) => return Err(failure(e.to_string(), trace, ceiling)),
        };
        let gd = dot(&g, &d);
        let gk = gd.max(0.0).sqrt();
        let unorm = f.norm(&u);
        trace.push(energies[i], gk, unorm);
        let rel = gk / unorm.powf(f.ex.p - 1.0).max(f64::MIN_POSITIVE);
        let small = rel < switch;
        let plateau = since_best > 0 && since_best % PLATEAU_ITERATIONS == 0;
        if small || plateau {
            match newton_polish(&f, &u, deflate, config, &mut trace) {
                Ok(Some(pol)) if in_window(pol.energy, ceiling) => {
                    return Ok(CriticalPoint {
                        function: FemFunction::new(space.clone(), pol.u).expect("same space"),
                        energy: pol.energy,
                        grad_dual_norm: pol.grad,
                        found_at_lambda: f.lambda,
                        pair_tag: "±1".into(),
                        iterations: it + pol.iterations,
                        trace,
                    });
                }
                Ok(Some(pol)) => {
                    rejected = Some((pol.u, pol.energy));
                }
                Ok(None) => {}
                Err(e) => return Err(failure(e.to_string(), trace, ceiling)),
            }
            if small {
                switch *= 0.1;
                if switch < STALL_SWITCH {
                    stop = Some("Newton stage failed repeatedly");
                    break;
                }
            }
        }
        if energies[i] < best {
            best = energies[i];
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > STALL_ITERATIONS {
                stop = Some("path maximum stalled");
                break;
            }
        }
        // steepest descent of the top node in the stiffness metric, moving
        // at most one mean segment length
        let seg = length / (n - 1) as f64;
        let dl = f.lp_norm(&d);
        let mut s = if dl > 0.0 { step.min(seg / dl) } else { step };
        let mut moved = false;
        for _ in 0..40 {
            let trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a - s * b).collect();
            let et = f.energy(&trial);
            if et <= energies[i] - 1e-4 * s * gd {
                path[i] = trial;
                moved = true;
                break;
            }
            s *= 0.5;
        }
        if !moved {
            stop = Some("descent step rejected");
            break;
        }
        step = (2.0 * s).min(1e3 * config.step);
        length = equidistribute(&f, &mut path);
        for (e, u) in energies.iter_mut().zip(&path).skip(1).take(n - 2) {
            *e = f.energy(u);
        }
    }
    let mut fail = failure(
        match &rejected {
            Some((_, e)) => format!("converged point has energy {e} outside (0, {ceiling})"),
            None => match stop {
                Some(why) => why.to_string(),
                None => format!("no critical point within {} iterations", config.max_iter),
            },
        },
        trace,
        ceiling,
    );
    fail.candidate = rejected.map(|(u, e)| (FemFunction::new(space, u).expect("same space"), e));
    Err(fail)
}

/// Smallest `R = 2^k` (k ≥ 0) with `E(R u) ≤ 0`, then doubled once more.
pub fn endpoint_scale(params: &ProblemParams, u: &FemFunction) -> Result<f64> {
    let space = u.space().clone();
    let f = Functional::new(&space, params, Regularization::default())?;
    if u.is_zero() {
        return Err(Error::InvalidParams("zero direction".into()));
    }
    let mut r = 1.0 / f.norm(u.coeffs());
    for _ in 0..200 {
        let scaled: Vec<f64> = u.coeffs().iter().map(|x| r * x).collect();
        if f.energy(&scaled) <= 0.0 {
            return Ok(2.0 * r);
        }
        r *= 2.0;
    }
    Err(Error::InvalidParams("energy stays positive along the ray".into()))
}

/// Whether two critical points are distinct pairs under `config`.
pub fn distinct_pairs(a: &CriticalPoint, b: &CriticalPoint, p: f64, config: &SolverConfig) -> bool {
    let d = orbit_distance(a.function.space(), a.function.coeffs(), b.function.coeffs(), p);
    let de = (a.energy - b.energy).abs();
    d > config.delta && de > config.energy_sep * (1.0 + a.energy.abs().max(b.energy.abs()))
}
