use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Functional, SolverConfig};
use crate::eigen::{rayleigh_coeffs, EigenSequence};
use crate::error::{Error, Result};
use crate::fem::{Exponents, FemSpace, Potentials, Regularization};
use crate::params::ProblemParams;
use crate::sobolev::sobolev_constant;
use crate::sparse::dot;
use crate::thresholds::{envelope_upper, hypothesis_constants_for};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusRow {
    pub radius: f64,
    /// Smallest energy found on `‖∇u‖_p = radius`.
    pub min_energy: f64,
    pub positive: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RayAudit {
    pub directions: usize,
    pub passed: usize,
}

impl RayAudit {
    pub fn ok(&self) -> bool {
        self.passed == self.directions
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginAuditReport {
    pub rows: Vec<RadiusRow>,
    pub ray: RayAudit,
}

const ORIGIN_STARTS: usize = 4;
const ORIGIN_STEPS: usize = 150;
const RAY_DIRECTIONS: usize = 100;

/// Minimize `E` over spheres `‖∇u‖_p = ρ` from random starts, and check that
/// `E(t u) > 0` for small `t` along random rays.
pub fn origin_audit(
    space: &Arc<FemSpace>,
    params: &ProblemParams,
    radii: &[f64],
    config: &SolverConfig,
) -> Result<OriginAuditReport> {
    let f = Functional::new(space, params, config.regularization)?;
    if let Some(r) = radii.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::InvalidParams(format!("radii must be > 0, got {r}")));
    }
    let n = space.num_dofs();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let starts: Vec<Vec<f64>> = (0..ORIGIN_STARTS)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    let k = space.stiffness();
    let mut rows = Vec::with_capacity(radii.len());
    for &rho in radii {
        let project = |u: &mut Vec<f64>| {
            let s = rho / f.norm(u);
            u.iter_mut().for_each(|x| *x *= s);
        };
        let mut best = f64::INFINITY;
        for start in &starts {
            let mut u = start.clone();
            project(&mut u);
            let mut e = f.energy(&u);
            let mut step = 1.0;
            for _ in 0..ORIGIN_STEPS {
                let g = f.gradient(&u);
                let mut d = k.solve(&g)?;
                // drop the radial component in the stiffness metric
                let kuu = k.matrix.quad_form(&u);
                let c = dot(&g, &u) / kuu;
                for (di, ui) in d.iter_mut().zip(&u) {
                    *di -= c * ui;
                }
                if d.iter().all(|x| *x == 0.0) {
                    break;
                }
                let scale = f.norm(&d).max(f64::MIN_POSITIVE);
                let mut moved = false;
                let mut s = step;
                for _ in 0..30 {
                    let mut trial: Vec<f64> = u.iter().zip(&d).map(|(a, b)| a - s * rho * b / scale).collect();
                    project(&mut trial);
                    let et = f.energy(&trial);
                    if et < e {
                        u = trial;
                        e = et;
                        moved = true;
                        break;
                    }
                    s *= 0.5;
                }
                if !moved {
                    break;
                }
                step = (2.0 * s).min(1.0);
            }
            best = best.min(e);
        }
        rows.push(RadiusRow {
            radius: rho,
            min_energy: best,
            positive: best > 0.0,
        });
    }
    let mut passed = 0;
    for _ in 0..RAY_DIRECTIONS {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let scale = 1.0 / f.norm(&u);
        let ok = (4..=8).all(|e| {
            let t = 10f64.powi(-e) * scale;
            let v: Vec<f64> = u.iter().map(|x| t * x).collect();
            f.energy(&v) > 0.0
        });
        passed += ok as usize;
    }
    Ok(OriginAuditReport {
        rows,
        ray: RayAudit {
            directions: RAY_DIRECTIONS,
            passed,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryRow {
    pub radius: f64,
    /// `max_u E(R u)` over the sampled unit sphere of the eigen-span.
    pub sup_a: f64,
    /// `max_u max_{0 ≤ t ≤ 1} E(t R u)`.
    pub sup_x: f64,
}

impl GeometryRow {
    pub fn holds(&self, ceiling: f64) -> bool {
        self.sup_a <= 0.0 && self.sup_x < ceiling
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryAuditReport {
    pub m: usize,
    pub lambda: f64,
    pub lambda_m: f64,
    pub ceiling: f64,
    pub samples: usize,
    pub rows: Vec<GeometryRow>,
    /// Smallest grid radius at which both inequalities hold.
    pub feasible_radius: Option<f64>,
    /// Smallest grid radius with `sup_a <= 0`.
    pub negative_radius: Option<f64>,
    /// `τ` grid and the envelope against the measured `max_u E(τ λ_m^{1/p} u)`.
    pub tau: Vec<f64>,
    pub envelope: Vec<f64>,
    pub measured: Vec<f64>,
    /// Samples with Rayleigh quotient `<= λ_m`, the ones the envelope covers.
    pub envelope_samples: usize,
    pub envelope_max_violation: f64,
}

impl GeometryAuditReport {
    pub fn both_hold(&self) -> bool {
        self.feasible_radius.is_some()
    }

    pub fn envelope_ok(&self) -> bool {
        self.envelope_max_violation <= 1e-8
    }
}

const GEOMETRY_RADII: usize = 81;
const FIBER_GRID: usize = 400;

/// `s ↦ E(s u)` from the potentials of `u`, by homogeneity.
fn fiber(pot: &Potentials, ex: &Exponents, lambda: f64, s: f64) -> f64 {
    let mut e = s.powf(ex.p) * pot.i_p - lambda * s.powf(ex.r) * pot.g - s.powf(ex.pstar) * pot.h;
    if let Some(q) = ex.q {
        e += s.powf(q) * pot.f;
    }
    e
}

/// `max_{0 ≤ s ≤ R} E(s u)` by a log scan refined with golden sections.
fn fiber_max(pot: &Potentials, ex: &Exponents, lambda: f64, radius: f64) -> f64 {
    let lo = (radius * 1e-8).ln();
    let hi = radius.ln();
    let at = |x: f64| fiber(pot, ex, lambda, x.exp());
    let h = (hi - lo) / (FIBER_GRID - 1) as f64;
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..FIBER_GRID {
        let v = at(lo + h * i as f64);
        if v > best.1 {
            best = (i, v);
        }
    }
    let (mut a, mut b) = (lo + h * best.0.saturating_sub(1) as f64, (lo + h * (best.0 + 1) as f64).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut vmax = best.1;
    for _ in 0..60 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        let (fc, fd) = (at(c), at(d));
        vmax = vmax.max(fc).max(fd);
        if fc > fd {
            b = d;
        } else {
            a = c;
        }
    }
    vmax.max(0.0)
}

/// Sample the unit sphere of `span{φ_1..φ_m}`, grid-search `R` for
/// `sup_{Ru} E ≤ 0` and `sup_{tRu} E < c*`, and compare the measured fibers
/// with the envelope bound.
pub fn geometry_audit(
    space: &Arc<FemSpace>,
    params: &ProblemParams,
    m: usize,
    eigs: &EigenSequence,
) -> Result<GeometryAuditReport> {
    let params = params.with_volume(space.volume())?;
    let f = Functional::new(space, &params, Regularization::default())?;
    if m == 0 || m > eigs.len() {
        return Err(Error::InvalidParams(format!(
            "need 1 <= m <= {} eigenpairs, got m = {m}",
            eigs.len()
        )));
    }
    if eigs.mesh_id != space.checksum() {
        return Err(Error::InvalidParams("eigenpairs belong to a different mesh".into()));
    }
    let lambda_m = eigs.pairs[m - 1].value;
    let s = sobolev_constant(params.n, params.p)?;
    let h = hypothesis_constants_for(&params, s);
    let ceiling = h.cstar;

    let basis: Vec<&[f64]> = eigs.pairs[..m].iter().map(|e| e.function.coeffs()).collect();
    let mut samples: Vec<Vec<f64>> = basis.iter().map(|b| b.to_vec()).collect();
    if m > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..8 * m {
            let c: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let mut u = vec![0.0; space.num_dofs()];
            for (ci, b) in c.iter().zip(&basis) {
                for (x, y) in u.iter_mut().zip(b.iter()) {
                    *x += ci * y;
                }
            }
            samples.push(u);
        }
    }
    let mut pots = Vec::with_capacity(samples.len());
    let mut covered = Vec::with_capacity(samples.len());
    for u in samples.iter_mut() {
        let norm = f.norm(u);
        if !(norm > 0.0) {
            continue;
        }
        u.iter_mut().for_each(|x| *x /= norm);
        pots.push(space.potentials(u, &f.ex));
        covered.push(rayleigh_coeffs(space, u, params.p)? <= lambda_m * (1.0 + 1e-9));
    }

    let radii: Vec<f64> = (0..GEOMETRY_RADII)
        .map(|i| 10f64.powf(-2.0 + 5.0 * i as f64 / (GEOMETRY_RADII - 1) as f64))
        .collect();
    let rows: Vec<GeometryRow> = radii
        .iter()
        .map(|&r| GeometryRow {
            radius: r,
            sup_a: pots.iter().map(|p| fiber(p, &f.ex, f.lambda, r)).fold(f64::NEG_INFINITY, f64::max),
            sup_x: pots.iter().map(|p| fiber_max(p, &f.ex, f.lambda, r)).fold(f64::NEG_INFINITY, f64::max),
        })
        .collect();
    let feasible_radius = rows.iter().find(|r| r.holds(ceiling)).map(|r| r.radius);
    let negative_radius = rows.iter().find(|r| r.sup_a <= 0.0).map(|r| r.radius);

    let tau: Vec<f64> = (0..GEOMETRY_RADII)
        .map(|i| 10f64.powf(-3.0 + 5.0 * i as f64 / (GEOMETRY_RADII - 1) as f64))
        .collect();
    let envelope = envelope_upper(&h, lambda_m, f.lambda, &tau)?;
    let scale = lambda_m.powf(1.0 / params.p);
    let measured: Vec<f64> = tau
        .iter()
        .map(|&t| {
            pots.iter()
                .zip(&covered)
                .filter(|(_, c)| **c)
                .map(|(p, _)| fiber(p, &f.ex, f.lambda, t * scale))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let envelope_max_violation = measured
        .iter()
        .zip(&envelope)
        .map(|(m, e)| (m - e) / (1.0 + e.abs()))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(GeometryAuditReport {
        m,
        lambda: f.lambda,
        lambda_m,
        ceiling,
        samples: pots.len(),
        rows,
        feasible_radius,
        negative_radius,
        tau,
        envelope,
        measured,
        envelope_samples: covered.iter().filter(|c| **c).count(),
        envelope_max_violation,
    })
}
