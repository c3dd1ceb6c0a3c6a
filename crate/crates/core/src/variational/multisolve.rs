use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    distinct_pairs, endpoint_scale, failure, geometry_audit, in_window, mountain_pass_deflated, newton_polish,
    CriticalPoint, Functional, IterationTrace, PsReport, SearchFailure, SolverConfig,
};
use crate::eigen::{EigenMethod, EigenSequence};
use crate::error::{Error, Result};
use crate::fem::{FemFunction, FemSpace};
use crate::params::ProblemParams;
use crate::sobolev::ps_ceiling;
use crate::thresholds::{threshold_p, threshold_pq, ThresholdResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMiss {
    pub seed: usize,
    pub reason: String,
    pub ps: PsReport,
}

#[derive(Debug, Clone)]
pub struct MultisolveReport {
    pub accepted: Vec<CriticalPoint>,
    pub misses: Vec<SeedMiss>,
    pub rounds: usize,
}

/// Endpoints `R φ_j` for `j = 1..k`, extended by random combinations of the
/// available eigenfunctions when `k` exceeds their number.
pub fn seed_endpoints(
    params: &ProblemParams,
    config: &SolverConfig,
    k: usize,
    eigs: &EigenSequence,
) -> Result<Vec<FemFunction>> {
    if k == 0 {
        return Err(Error::InvalidParams("need k >= 1 seeds".into()));
    }
    if eigs.is_empty() {
        return Err(Error::InvalidParams("no eigenpairs to seed from".into()));
    }
    let space = eigs.pairs[0].function.space().clone();
    let m = k.min(eigs.len());
    let geo = geometry_audit(&space, params, m, eigs)?;
    let radius = geo.feasible_radius.or(geo.negative_radius);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dirs: Vec<FemFunction> = eigs.pairs[..m].iter().map(|e| e.function.clone()).collect();
    while dirs.len() < k {
        let mut u = FemFunction::zeros(space.clone());
        for e in &eigs.pairs {
            u = u.add_scaled(rng.gen_range(-1.0..=1.0), &e.function)?;
        }
        let w = space.w_norm(u.coeffs(), params.p);
        dirs.push(u.scaled(1.0 / w));
    }
    let f = Functional::new(&space, params, config.regularization)?;
    dirs.into_iter()
        .map(|d| {
            if let Some(r) = radius {
                let e = d.scaled(r);
                if f.energy(e.coeffs()) <= 0.0 {
                    return Ok(e);
                }
            }
            let r = endpoint_scale(params, &d)?;
            Ok(d.scaled(r))
        })
        .collect()
}

/// Mountain passes from eigenfunction seeds, deflating already-accepted
/// sign orbits between rounds.
pub fn deflated_multisolve(
    params: &ProblemParams,
    config: &SolverConfig,
    k: usize,
    eigs: &EigenSequence,
) -> Result<MultisolveReport> {
    let endpoints = seed_endpoints(params, config, k, eigs)?;
    multisolve_from(params, config, &endpoints, Vec::new())
}

/// [`deflated_multisolve`] from explicit endpoints, with `known` points
/// deflated from the start (they are not part of the returned list).
pub fn multisolve_from(
    params: &ProblemParams,
    config: &SolverConfig,
    endpoints: &[FemFunction],
    known: Vec<CriticalPoint>,
) -> Result<MultisolveReport> {
    config.validate()?;
    if endpoints.is_empty() {
        return Err(Error::InvalidParams("need k >= 1 seeds".into()));
    }
    let ceiling = ps_ceiling(params.n, params.p)?;
    let mut all = known;
    let n_known = all.len();
    let mut pending: Vec<usize> = (0..endpoints.len()).collect();
    let mut last: Vec<Option<SearchFailure>> = vec![None; endpoints.len()];
    let mut rounds = 0;
    while !pending.is_empty() && rounds < config.max_rounds {
        rounds += 1;
        let frozen: Vec<Vec<f64>> = all.iter().map(|c| c.function.coeffs().to_vec()).collect();
        let run = |&j: &usize| mountain_pass_deflated(params, config, &endpoints[j], &frozen);
        let results: Vec<_> = if config.parallel {
            pending.par_iter().map(run).collect()
        } else {
            pending.iter().map(run).collect()
        };
        let mut next = Vec::new();
        let before = all.len();
        for (&j, res) in pending.iter().zip(results) {
            match res {
                Ok(cp) => {
                    if all.iter().all(|a| distinct_pairs(a, &cp, params.p, config)) {
                        all.push(cp);
                    } else {
                        let mut tr = IterationTrace::default();
                        tr.push(cp.energy, cp.grad_dual_norm, cp.function.space().w_norm(cp.function.coeffs(), params.p));
                        last[j] = Some(failure("duplicate of an accepted pair", tr, ceiling));
                        next.push(j);
                    }
                }
                Err(f) => {
                    last[j] = Some(f);
                    next.push(j);
                }
            }
        }
        pending = next;
        if all.len() == before {
            break;
        }
    }
    let misses = pending
        .iter()
        .map(|&j| {
            let f = last[j].take().expect("pending seeds carry a failure");
            SeedMiss {
                seed: j,
                reason: f.reason,
                ps: f.ps,
            }
        })
        .collect();
    let mut accepted: Vec<CriticalPoint> = all.split_off(n_known);
    for (i, cp) in accepted.iter_mut().enumerate() {
        cp.pair_tag = format!("±{}", n_known + i + 1);
    }
    Ok(MultisolveReport {
        accepted,
        misses,
        rounds,
    })
}

/// Follow `cp` from its parameter to `lambda` by Newton steps on a λ ladder.
fn carry_forward(params: &ProblemParams, config: &SolverConfig, cp: &CriticalPoint, lambda: f64) -> Result<Option<CriticalPoint>> {
    let space = cp.function.space();
    let ceiling = ps_ceiling(params.n, params.p)?;
    let mut u = cp.function.coeffs().to_vec();
    let mut at = cp.found_at_lambda;
    let mut step = lambda - at;
    let min_step = (lambda - at).abs() / 1024.0;
    let mut trace = IterationTrace::default();
    let mut last = None;
    while at != lambda || last.is_none() {
        let target = if (lambda - at).abs() <= step.abs() { lambda } else { at + step };
        let p = params.with_lambda(target)?;
        let f = Functional::new(space, &p, config.regularization)?;
        match newton_polish(&f, &u, &[], config, &mut trace)? {
            Some(pol) if in_window(pol.energy, ceiling) => {
                u = pol.u.clone();
                at = target;
                last = Some(pol);
                step *= 1.5;
            }
            _ => {
                step *= 0.5;
                if step == 0.0 || step.abs() < min_step {
                    return Ok(None);
                }
            }
        }
    }
    Ok(last.map(|pol| CriticalPoint {
        function: FemFunction::new(space.clone(), pol.u).expect("same space"),
        energy: pol.energy,
        grad_dual_norm: pol.grad,
        found_at_lambda: lambda,
        pair_tag: cp.pair_tag.clone(),
        iterations: pol.iterations,
        trace,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub lambda: f64,
    pub m: usize,
    pub predicted_threshold: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaScanReport {
    pub mesh_checksum: String,
    pub model: String,
    pub eigen_method: EigenMethod,
    pub eigenvalues: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub counts: Vec<usize>,
    /// Energies of the accepted pairs at each λ.
    pub energies: Vec<Vec<f64>>,
    /// Carried pairs that re-converged at each λ.
    pub carried: Vec<usize>,
    pub thresholds: Vec<ThresholdResult>,
    pub failures: Vec<Vec<SeedMiss>>,
    pub rows: Vec<ScanRow>,
}

/// A scan report together with the pairs accepted at each λ.
#[derive(Debug, Clone)]
pub struct LambdaScan {
    pub report: LambdaScanReport,
    pub pairs: Vec<Vec<CriticalPoint>>,
}

impl LambdaScanReport {
    pub fn to_json(&self) -> Result<String> {
        crate::json::to_json_string(self)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,m,predicted_threshold,count\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:.16e},{},{:.16e},{}", r.lambda, r.m, r.predicted_threshold, r.count);
        }
        s
    }
}

/// Threshold of the model selected by `params` for `λ_m`.
pub fn predicted_threshold(m: usize, lambda_m: f64, params: &ProblemParams) -> Result<ThresholdResult> {
    if params.q.is_some() {
        threshold_pq(m, lambda_m, params)
    } else {
        threshold_p(m, lambda_m, params)
    }
}

/// Count distinct pairs over an increasing λ grid, carrying accepted pairs
/// from one λ to the next.
pub fn scan_lambda(
    params: &ProblemParams,
    lambdas: &[f64],
    config: &SolverConfig,
    m_max: usize,
    eigs: &EigenSequence,
) -> Result<LambdaScan> {
    if lambdas.is_empty() {
        return Err(Error::InvalidParams("empty lambda grid".into()));
    }
    if lambdas.windows(2).any(|w| !(w[1] > w[0])) || lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
        return Err(Error::InvalidParams("lambda grid must be increasing and nonnegative".into()));
    }
    if m_max == 0 || m_max > eigs.len() {
        return Err(Error::InvalidParams(format!(
            "need 1 <= m_max <= {} eigenpairs, got {m_max}",
            eigs.len()
        )));
    }
    config.validate()?;
    let space: Arc<FemSpace> = eigs.pairs[0].function.space().clone();
    let base = params.with_volume(space.volume())?;
    let thresholds = (1..=m_max)
        .map(|m| predicted_threshold(m, eigs.pairs[m - 1].value, &base))
        .collect::<Result<Vec<_>>>()?;

    let mut carried: Vec<CriticalPoint> = Vec::new();
    let mut pairs = Vec::with_capacity(lambdas.len());
    let mut report = LambdaScanReport {
        mesh_checksum: space.checksum().to_string(),
        model: base.model().as_str().to_string(),
        eigen_method: eigs.method,
        eigenvalues: eigs.values()[..m_max].to_vec(),
        lambdas: lambdas.to_vec(),
        counts: Vec::new(),
        energies: Vec::new(),
        carried: Vec::new(),
        thresholds: thresholds.clone(),
        failures: Vec::new(),
        rows: Vec::new(),
    };
    for &lambda in lambdas {
        let params = base.with_lambda(lambda)?;
        let mut kept: Vec<CriticalPoint> = Vec::new();
        for cp in &carried {
            if let Some(next) = carry_forward(&params, config, cp, lambda)? {
                if kept.iter().all(|k| distinct_pairs(k, &next, params.p, config)) {
                    kept.push(next);
                }
            }
        }
        let n_carried = kept.len();
        let endpoints = seed_endpoints(&params, config, m_max, eigs)?;
        let found = multisolve_from(&params, config, &endpoints, kept.clone())?;
        kept.extend(found.accepted);
        for (i, cp) in kept.iter_mut().enumerate() {
            cp.pair_tag = format!("±{}", i + 1);
        }
        let count = kept.len();
        report.counts.push(count);
        report.carried.push(n_carried);
        report.energies.push(kept.iter().map(|c| c.energy).collect());
        report.failures.push(found.misses);
        for t in &thresholds {
            report.rows.push(ScanRow {
                lambda,
                m: t.m,
                predicted_threshold: t.threshold,
                count,
            });
        }
        pairs.push(kept.clone());
        carried = kept;
    }
    Ok(LambdaScan { report, pairs })
}
