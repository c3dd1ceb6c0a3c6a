//! Explicit lower bounds on the parameter `λ` beyond which the critical
//! problems have `m` distinct solution pairs.
//!
//! Each bound is a scaled supremum over `τ > 0` of a power-law bracket; see
//! [`crate::bracket::sup_tau`].

use serde::{Deserialize, Serialize};

use crate::bracket::{sup_tau, BracketFunction, PowerTerm};
use crate::error::{Error, Result};
use crate::params::{critical_exponent, HypothesisConstants, ProblemParams};
use crate::sobolev::{ps_ceiling_from, sobolev_constant};

/// Slack passed to [`sup_tau`] by every threshold.
pub const SUP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub m: usize,
    pub lambda_m: f64,
    pub tau_star: f64,
    pub sup_value: f64,
    pub threshold: f64,
    /// Set when the bound is `<= 0`: every `λ > 0` is admissible.
    pub all_lambda_admissible: bool,
}

impl ThresholdResult {
    fn new(m: usize, lambda_m: f64, tau_star: f64, sup_value: f64, threshold: f64) -> Self {
        ThresholdResult {
            m,
            lambda_m,
            tau_star,
            sup_value,
            threshold,
            all_lambda_admissible: threshold <= 0.0,
        }
    }
}

fn check_eigenvalue(m: usize, lambda_m: f64) -> Result<()> {
    if m == 0 {
        return Err(Error::InvalidParams("eigenvalue index m starts at 1".into()));
    }
    if !(lambda_m.is_finite() && lambda_m > 0.0) {
        return Err(Error::InvalidParams(format!(
            "lambda_m must be positive and finite, got {lambda_m}"
        )));
    }
    Ok(())
}

fn term(coeff: f64, exponent: f64) -> PowerTerm {
    PowerTerm { coeff, exponent }
}

/// Bracket of the p-Laplacian bound with the `(p,q)` term scaled by
/// `q_scale` (`0` recovers the pure p-Laplacian bracket). `sobolev` is the
/// value used for `S`.
pub fn threshold_bracket(
    lambda_m: f64,
    params: &ProblemParams,
    sobolev: f64,
    q_scale: f64,
) -> BracketFunction {
    let n = params.n as f64;
    let p = params.p;
    let r = params.r;
    let pstar = params.pstar();
    let vol = params.volume;
    let mut terms = vec![
        term(lambda_m / p, -(r - p)),
        term(-sobolev.powf(n / p) / n, -r),
        term(-1.0 / (pstar * vol.powf(p / (n - p))), pstar - r),
    ];
    if let Some(q) = params.q {
        if q_scale != 0.0 {
            terms.insert(
                1,
                term(
                    q_scale * vol.powf(1.0 - q / p) * lambda_m.powf(q / p) / q,
                    -(r - q),
                ),
            );
        }
    }
    BracketFunction { terms }
}

/// Bound for the critical p-Laplacian problem with the Sobolev constant
/// supplied by the caller.
pub fn threshold_p_with_sobolev(
    m: usize,
    lambda_m: f64,
    params: &ProblemParams,
    sobolev: f64,
) -> Result<ThresholdResult> {
    params.validate()?;
    check_eigenvalue(m, lambda_m)?;
    if params.q.is_some() {
        return Err(Error::InvalidParams(
            "threshold_p is for the pure p-Laplacian model; use threshold_pq".into(),
        ));
    }
    let pstar = params.pstar();
    if !(params.r > params.p && params.r < pstar) {
        return Err(Error::InvalidParams(format!(
            "need p < r < p*, got p = {}, r = {}, p* = {pstar}",
            params.p, params.r
        )));
    }
    let bracket = threshold_bracket(lambda_m, params, sobolev, 0.0);
    let sup = sup_tau(&bracket, SUP_TOL)?;
    let scale = params.r * params.volume.powf(params.r / params.p - 1.0);
    Ok(ThresholdResult::new(
        m,
        lambda_m,
        sup.tau_star,
        sup.value,
        scale * sup.value,
    ))
}

/// `r |Ω|^{r/p - 1} sup_τ [λ_m/(p τ^{r-p}) - S^{N/p}/(N τ^r) - τ^{p*-r}/(p* |Ω|^{p/(N-p)})]`.
pub fn threshold_p(m: usize, lambda_m: f64, params: &ProblemParams) -> Result<ThresholdResult> {
    let s = sobolev_constant(params.n, params.p)?;
    threshold_p_with_sobolev(m, lambda_m, params, s)
}

/// Bound for the critical `(p,q)`-Laplacian problem. For `r > p` the extra
/// term `|Ω|^{1-q/p} λ_m^{q/p} / (q τ^{r-q})` enters the bracket; for `r = p`
/// (which needs `p <= q*`) the resonant bound [`nu_resonant`] is used.
pub fn threshold_pq(m: usize, lambda_m: f64, params: &ProblemParams) -> Result<ThresholdResult> {
    let s = sobolev_constant(params.n, params.p)?;
    threshold_pq_scaled(m, lambda_m, params, s, 1.0)
}

/// [`threshold_pq`] with explicit `S` and a multiplier on the `q`-term.
pub fn threshold_pq_scaled(
    m: usize,
    lambda_m: f64,
    params: &ProblemParams,
    sobolev: f64,
    q_scale: f64,
) -> Result<ThresholdResult> {
    params.validate()?;
    check_eigenvalue(m, lambda_m)?;
    let q = params.q.ok_or_else(|| {
        Error::InvalidParams("threshold_pq needs the secondary exponent q".into())
    })?;
    let (n, p, r, vol) = (params.n, params.p, params.r, params.volume);
    let pstar = params.pstar();
    if r > p {
        let bracket = threshold_bracket(lambda_m, params, sobolev, q_scale);
        let sup = sup_tau(&bracket, SUP_TOL)?;
        let scale = r * vol.powf(r / p - 1.0);
        return Ok(ThresholdResult::new(
            m,
            lambda_m,
            sup.tau_star,
            sup.value,
            scale * sup.value,
        ));
    }
    let qstar = critical_exponent(n, q)?;
    if p > qstar * (1.0 + 1e-12) {
        return Err(Error::InvalidParams(format!(
            "r = p needs p <= q* = {qstar}, got p = {p}"
        )));
    }
    let h = HypothesisConstants {
        alpha0: 0.0,
        alpha: q_scale * vol.powf(1.0 - q / p),
        beta: 1.0,
        gamma: vol.powf(-p / (n as f64 - p)),
        cstar: ps_ceiling_from(n, p, sobolev),
        p,
        q: Some(q),
        r: p,
        pstar,
    };
    nu_resonant(m, &h, lambda_m)
}

/// `(r/β) sup_τ [λ_m/(p τ^{r-p}) + α λ_m^{q/p}/(q τ^{r-q}) - c*/τ^r - γ τ^{p*-r}/p*]`.
pub fn nu_general(m: usize, h: &HypothesisConstants, lambda_m: f64) -> Result<ThresholdResult> {
    h.validate()?;
    check_eigenvalue(m, lambda_m)?;
    if h.r <= h.p {
        return Err(Error::InvalidParams(format!(
            "nu_general needs r > p, got p = {}, r = {}",
            h.p, h.r
        )));
    }
    let (p, r, pstar) = (h.p, h.r, h.pstar);
    let mut terms = vec![term(lambda_m / p, -(r - p))];
    if h.alpha > 0.0 {
        let q = h.q_or_p();
        terms.push(term(h.alpha * lambda_m.powf(q / p) / q, -(r - q)));
    }
    terms.push(term(-h.cstar, -r));
    terms.push(term(-h.gamma / pstar, pstar - r));
    let sup = sup_tau(&BracketFunction { terms }, SUP_TOL)?;
    Ok(ThresholdResult::new(
        m,
        lambda_m,
        sup.tau_star,
        sup.value,
        (r / h.beta) * sup.value,
    ))
}

/// `λ_m + p sup_τ [α λ_m^{q/p}/(q τ^{p-q}) - c*/τ^p - γ τ^{p*-p}/p*]`, the
/// bound when the subcritical term is `λ J_p`.
pub fn nu_resonant(m: usize, h: &HypothesisConstants, lambda_m: f64) -> Result<ThresholdResult> {
    h.validate()?;
    check_eigenvalue(m, lambda_m)?;
    if h.r != h.p {
        return Err(Error::InvalidParams(format!(
            "nu_resonant needs r = p, got p = {}, r = {}",
            h.p, h.r
        )));
    }
    let (p, pstar) = (h.p, h.pstar);
    let mut terms = Vec::with_capacity(3);
    if h.alpha > 0.0 {
        let q = h.q_or_p();
        terms.push(term(h.alpha * lambda_m.powf(q / p) / q, -(p - q)));
    }
    terms.push(term(-h.cstar, -p));
    terms.push(term(-h.gamma / pstar, pstar - p));
    let sup = sup_tau(&BracketFunction { terms }, SUP_TOL)?;
    Ok(ThresholdResult::new(
        m,
        lambda_m,
        sup.tau_star,
        sup.value,
        lambda_m + p * sup.value,
    ))
}

/// Upper envelope of `E(t R u)` in the variable `τ = t R / λ_m^{1/p}`:
/// `τ^p λ_m/p + α τ^q λ_m^{q/p}/q - λ β τ^r/r - γ τ^{p*}/p*`.
///
/// With `r = p` and `β = 1` this is the resonant envelope
/// `τ^p (λ_m - λ)/p + α τ^q λ_m^{q/p}/q - γ τ^{p*}/p*`.
pub fn envelope_upper(
    h: &HypothesisConstants,
    lambda_m: f64,
    lambda: f64,
    tau_grid: &[f64],
) -> Result<Vec<f64>> {
    h.validate()?;
    if !(lambda_m > 0.0 && lambda_m.is_finite()) {
        return Err(Error::InvalidParams(format!("lambda_m must be > 0, got {lambda_m}")));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParams(format!("lambda must be >= 0, got {lambda}")));
    }
    if let Some(bad) = tau_grid.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidParams(format!("tau grid values must be > 0, got {bad}")));
    }
    let (p, r, pstar) = (h.p, h.r, h.pstar);
    let q = h.q_or_p();
    Ok(tau_grid
        .iter()
        .map(|&tau| {
            let mut v = tau.powf(p) * lambda_m / p;
            if h.alpha > 0.0 {
                v += h.alpha * tau.powf(q) * lambda_m.powf(q / p) / q;
            }
            v - lambda * h.beta * tau.powf(r) / r - h.gamma * tau.powf(pstar) / pstar
        })
        .collect())
}

/// The same bound written in the radius `R` of the test set:
/// `R^p/p + α R^q/q - λ β R^r/(r λ_m^{r/p}) - γ R^{p*}/(p* λ_m^{p*/p})`.
pub fn envelope_radial(h: &HypothesisConstants, lambda_m: f64, lambda: f64, radius: f64) -> f64 {
    let (p, r, pstar) = (h.p, h.r, h.pstar);
    let q = h.q_or_p();
    let mut v = radius.powf(p) / p;
    if h.alpha > 0.0 {
        v += h.alpha * radius.powf(q) / q;
    }
    v - lambda * h.beta * radius.powf(r) / (r * lambda_m.powf(r / p))
        - h.gamma * radius.powf(pstar) / (pstar * lambda_m.powf(pstar / p))
}

/// Constants under which the abstract bound reproduces [`threshold_p`]
/// (`α = 0`) or case (i) of [`threshold_pq`].
pub fn hypothesis_constants_for(params: &ProblemParams, sobolev: f64) -> HypothesisConstants {
    let n = params.n as f64;
    let (p, r, vol) = (params.p, params.r, params.volume);
    let alpha = match params.q {
        Some(q) => vol.powf(1.0 - q / p),
        None => 0.0,
    };
    HypothesisConstants {
        alpha0: 0.0,
        alpha,
        beta: vol.powf(1.0 - r / p),
        gamma: vol.powf(-p / (n - p)),
        cstar: ps_ceiling_from(params.n, p, sobolev),
        p,
        q: params.q,
        r,
        pstar: params.pstar(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_p() -> ProblemParams {
        ProblemParams::new(4, 2.0, 3.0, 1.0).unwrap()
    }

    #[test]
    fn rejects_outside_hypothesis_range() {
        let p = ProblemParams::new(3, 2.0, 2.0, 1.0).unwrap();
        assert!(threshold_p(1, 10.0, &p).is_err());
        assert!(threshold_p(1, -1.0, &params_p()).is_err());
        assert!(threshold_p(0, 1.0, &params_p()).is_err());
        let pq = params_p().with_q(1.5).unwrap();
        assert!(threshold_p(1, 1.0, &pq).is_err());
        assert!(threshold_pq(1, 1.0, &params_p()).is_err());
    }

    #[test]
    fn resonant_case_needs_p_below_q_star() {
        // N = 3, q = 1.2: q* = 3.6/1.8 = 2 >= p = 2 ok; q = 1.1: q* = 1.74 < 2
        let ok = ProblemParams::new(3, 2.0, 2.0, 1.0).unwrap().with_q(1.2).unwrap();
        assert!(threshold_pq(1, 10.0, &ok).is_ok());
        let bad = ProblemParams::new(3, 2.0, 2.0, 1.0).unwrap().with_q(1.1).unwrap();
        assert!(threshold_pq(1, 10.0, &bad).is_err());
    }

    #[test]
    fn negative_threshold_is_flagged() {
        let t = threshold_p(1, 1e-3, &params_p()).unwrap();
        assert!(t.threshold <= 0.0);
        assert!(t.all_lambda_admissible);
        let t = threshold_p(1, 1e3, &params_p()).unwrap();
        assert!(!t.all_lambda_admissible);
    }

    #[test]
    fn sup_value_matches_bracket_at_maximizer() {
        let params = params_p();
        let s = sobolev_constant(4, 2.0).unwrap();
        let t = threshold_p(2, 40.0, &params).unwrap();
        let b = threshold_bracket(40.0, &params, s, 0.0);
        assert!((b.eval(t.tau_star) - t.sup_value).abs() < 1e-10 * (1.0 + t.sup_value.abs()));
    }

    #[test]
    fn resonant_alpha_zero_never_exceeds_lambda_m() {
        let h = HypothesisConstants {
            alpha0: 0.0,
            alpha: 0.0,
            beta: 1.0,
            gamma: 1.0,
            cstar: 1.0,
            p: 2.0,
            q: None,
            r: 2.0,
            pstar: 4.0,
        };
        let t = nu_resonant(1, &h, 5.0).unwrap();
        assert!(t.sup_value < 0.0);
        assert!(t.threshold < 5.0);
    }

    #[test]
    fn envelope_two_term_root() {
        let h = HypothesisConstants {
            alpha0: 0.0,
            alpha: 0.0,
            beta: 1.0,
            gamma: 2.0,
            cstar: 1.0,
            p: 2.0,
            q: None,
            r: 3.0,
            pstar: 6.0,
        };
        let lm = 3.0;
        let root = (h.pstar * lm / (h.p * h.gamma)).powf(1.0 / (h.pstar - h.p));
        let v = envelope_upper(&h, lm, 0.0, &[root, 0.5 * root, 2.0 * root]).unwrap();
        assert!(v[0].abs() < 1e-12);
        assert!(v[1] > 0.0);
        assert!(v[2] < 0.0);
        assert!(envelope_upper(&h, lm, 0.0, &[0.0]).is_err());
    }

    #[test]
    fn envelope_matches_radial_form() {
        let h = HypothesisConstants {
            alpha0: 0.0,
            alpha: 0.7,
            beta: 1.3,
            gamma: 0.4,
            cstar: 1.0,
            p: 2.5,
            q: Some(1.5),
            r: 3.5,
            pstar: 7.5,
        };
        let (lm, lambda): (f64, f64) = (12.0, 3.0);
        for &radius in &[0.1, 0.7, 2.0, 5.0] {
            for &t in &[0.2, 0.5, 1.0] {
                let tau = t * radius / lm.powf(1.0 / h.p);
                let env = envelope_upper(&h, lm, lambda, &[tau]).unwrap()[0];
                let direct = envelope_radial(&h, lm, lambda, t * radius);
                assert!((env - direct).abs() < 1e-12 * (1.0 + direct.abs()));
            }
        }
    }
}
