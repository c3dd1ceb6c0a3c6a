//! Best constant of the Sobolev embedding `D^{1,p}(R^N) ⊂ L^{p*}(R^N)` and the
//! compactness ceiling `S^{N/p} / N` of the critical functionals.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::params::critical_exponent;
use crate::quadrature::gauss_legendre;

/// Maximum relative disagreement tolerated between the closed form and the
/// radial quadrature of the extremal.
pub const SELF_TEST_RTOL: f64 = 1e-4;

/// Closed-form value from the Aubin–Talenti extremal
/// `U(x) = (1 + |x|^{p/(p-1)})^{-(N-p)/p}`.
pub fn sobolev_constant_closed_form(n: usize, p: f64) -> Result<f64> {
    critical_exponent(n, p)?;
    let nf = n as f64;
    let log_ratio = ln_gamma(nf / p) + ln_gamma(1.0 + nf - nf / p)
        - ln_gamma(nf)
        - ln_gamma(1.0 + nf / 2.0);
    let log_s = 0.5 * p * std::f64::consts::PI.ln()
        + nf.ln()
        + (p - 1.0) * ((nf - p) / (p - 1.0)).ln()
        + (p / nf) * log_ratio;
    Ok(log_s.exp())
}

/// Rayleigh quotient `‖∇U‖_p^p / ‖U‖_{p*}^p` of the extremal, integrated
/// radially with composite Gauss–Legendre in `log r` and an asymptotic tail
/// correction beyond the cutoff where the integrand drops below `1e-12`.
pub fn sobolev_radial_quadrature(n: usize, p: f64) -> Result<f64> {
    let pstar = critical_exponent(n, p)?;
    let nf = n as f64;
    let beta = p / (p - 1.0);
    let gamma0 = (nf - p) / p;

    let grad = |r: f64| {
        let rb = r.powf(beta);
        let du = gamma0 * beta * r.powf(beta - 1.0) * (1.0 + rb).powf(-gamma0 - 1.0);
        du.powf(p) * r.powf(nf - 1.0)
    };
    let mass = |r: f64| (1.0 + r.powf(beta)).powf(-gamma0 * pstar) * r.powf(nf - 1.0);

    // decay rates r^{-a} of the two integrands
    let a_grad = (nf - 1.0) / (p - 1.0);
    let a_mass = (nf + p - 1.0) / (p - 1.0);

    let a = radial_integral(grad, a_grad);
    let b = radial_integral(mass, a_mass);
    let omega = 2.0 * (0.5 * nf * std::f64::consts::PI.ln() - ln_gamma(0.5 * nf)).exp();
    Ok(omega.powf(p / nf) * a / b.powf(p / pstar))
}

fn radial_integral(f: impl Fn(f64) -> f64, decay: f64) -> f64 {
    const TAIL_THRESHOLD: f64 = 1e-12;
    let mut r_cut = 1.0;
    while f(r_cut) >= TAIL_THRESHOLD && r_cut < 1e300 {
        r_cut *= 2.0;
    }
    let (gx, gw) = gauss_legendre(12);
    let s_lo = (1e-14f64).ln();
    let s_hi = r_cut.ln();
    let panels = ((s_hi - s_lo) / 0.25).ceil() as usize;
    let h = (s_hi - s_lo) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let a = s_lo + k as f64 * h;
        for (x, w) in gx.iter().zip(&gw) {
            let s = a + 0.5 * h * (x + 1.0);
            let r = s.exp();
            total += 0.5 * h * w * f(r) * r;
        }
    }
    // ∫_R^∞ C r^{-a} dr with C fitted at the cutoff
    total + f(r_cut) * r_cut / (decay - 1.0)
}

/// Best Sobolev constant `S(N, p)`. The closed form is only returned after it
/// agrees with the radial quadrature to [`SELF_TEST_RTOL`].
pub fn sobolev_constant(n: usize, p: f64) -> Result<f64> {
    let closed = sobolev_constant_closed_form(n, p)?;
    let quadrature = sobolev_radial_quadrature(n, p)?;
    let rel = (closed - quadrature).abs() / closed.abs();
    if !(rel < SELF_TEST_RTOL) {
        return Err(Error::SobolevSelfTest {
            n,
            p,
            closed,
            quadrature,
        });
    }
    Ok(closed)
}

/// `S^{N/p} / N` for a given constant `s`.
pub fn ps_ceiling_from(n: usize, p: f64, s: f64) -> f64 {
    let nf = n as f64;
    s.powf(nf / p) / nf
}

/// Energy level below which the critical functionals satisfy the
/// Palais–Smale condition.
pub fn ps_ceiling(n: usize, p: f64) -> Result<f64> {
    let s = sobolev_constant(n, p)?;
    Ok(ps_ceiling_from(n, p, s))
}
