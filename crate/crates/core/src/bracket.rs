//! Finite sums of power laws `Σ c_i τ^{e_i}` on `τ > 0` and the search for
//! their supremum.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerTerm {
    pub coeff: f64,
    pub exponent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketFunction {
    pub terms: Vec<PowerTerm>,
}

/// Limit of the bracket at one end of `(0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndLimit {
    NegInfinity,
    Finite(f64),
    PosInfinity,
}

/// Coarse scan window and resolution.
pub const SCAN_POINTS: usize = 256;
pub const SCAN_LO: f64 = 1e-6;
pub const SCAN_HI: f64 = 1e6;
/// Golden-section stopping width, measured in `ln τ`.
pub const REFINE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Supremum {
    pub tau_star: f64,
    pub value: f64,
}

impl BracketFunction {
    pub fn new(terms: Vec<PowerTerm>) -> Result<Self> {
        if terms
            .iter()
            .any(|t| !t.coeff.is_finite() || !t.exponent.is_finite())
        {
            return Err(Error::InvalidBracket("non-finite coefficient or exponent".into()));
        }
        Ok(BracketFunction { terms })
    }

    /// Convenience constructor from `(coeff, exponent)` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|&(coeff, exponent)| PowerTerm { coeff, exponent })
                .collect(),
        )
    }

    pub fn eval(&self, tau: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * tau.powf(t.exponent))
            .sum()
    }

    fn eval_log(&self, s: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coeff * (t.exponent * s).exp())
            .sum()
    }

    fn constant(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.exponent == 0.0)
            .map(|t| t.coeff)
            .sum()
    }

    /// Dominant behaviour as `τ → 0⁺` (`at_zero = true`) or `τ → ∞`.
    pub fn end_limit(&self, at_zero: bool) -> EndLimit {
        // merge equal exponents so cancelling terms are not mistaken for dominant ones
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for t in &self.terms {
            match merged.iter_mut().find(|(e, _)| *e == t.exponent) {
                Some(m) => m.1 += t.coeff,
                None => merged.push((t.exponent, t.coeff)),
            }
        }
        let dominant = merged
            .iter()
            .filter(|(e, c)| *c != 0.0 && *e != 0.0)
            .filter(|(e, _)| if at_zero { *e < 0.0 } else { *e > 0.0 })
            .max_by(|a, b| {
                let (ka, kb) = if at_zero { (-a.0, -b.0) } else { (a.0, b.0) };
                ka.total_cmp(&kb)
            });
        match dominant {
            Some((_, c)) if *c < 0.0 => EndLimit::NegInfinity,
            Some(_) => EndLimit::PosInfinity,
            None => EndLimit::Finite(self.constant()),
        }
    }
}

/// Supremum of `f` over `τ > 0`.
///
/// A log-uniform scan of [`SCAN_POINTS`] points over `[SCAN_LO, SCAN_HI]`
/// (shifted outward while the best point sits on the window edge) brackets
/// the candidates; the best few local maxima are refined by golden section
/// in `ln τ`. `tol` is the slack allowed against any audit grid.
pub fn sup_tau(f: &BracketFunction, tol: f64) -> Result<Supremum> {
    let lo_limit = f.end_limit(true);
    let hi_limit = f.end_limit(false);
    for (lim, side) in [(lo_limit, "0"), (hi_limit, "infinity")] {
        if lim == EndLimit::PosInfinity {
            return Err(Error::InvalidBracket(format!(
                "unbounded above as tau -> {side}"
            )));
        }
    }

    let n = SCAN_POINTS;
    let mut s_lo = SCAN_LO.ln();
    let mut s_hi = SCAN_HI.ln();
    let width = s_hi - s_lo;
    let mut values;
    let mut grid;
    let mut shifts = 0;
    loop {
        grid = (0..n)
            .map(|i| s_lo + width * i as f64 / (n - 1) as f64)
            .collect::<Vec<_>>();
        values = grid.iter().map(|&s| f.eval_log(s)).collect::<Vec<_>>();
        let best = argmax(&values);
        let at_low_edge = best == 0 && lo_limit == EndLimit::NegInfinity;
        let at_high_edge = best == n - 1 && hi_limit == EndLimit::NegInfinity;
        // stop shifting once the window would leave the representable range
        if !(at_low_edge || at_high_edge) || shifts >= 60 {
            break;
        }
        let shift = if at_low_edge { -0.9 * width } else { 0.9 * width };
        if (s_lo + shift).abs() > 690.0 || (s_hi + shift).abs() > 690.0 {
            break;
        }
        s_lo += shift;
        s_hi += shift;
        shifts += 1;
    }

    // candidate local maxima of the scan, best first
    let mut candidates: Vec<usize> = (0..n)
        .filter(|&i| {
            let left = if i == 0 { f64::NEG_INFINITY } else { values[i - 1] };
            let right = if i == n - 1 { f64::NEG_INFINITY } else { values[i + 1] };
            values[i] >= left && values[i] >= right && values[i].is_finite()
        })
        .collect();
    candidates.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    candidates.truncate(3);
    if candidates.is_empty() {
        return Err(Error::InvalidBracket("no finite value on the scan grid".into()));
    }

    let mut best = Supremum {
        tau_star: f64::NAN,
        value: f64::NEG_INFINITY,
    };
    for &i in &candidates {
        let a = if i == 0 { grid[0] - (grid[1] - grid[0]) } else { grid[i - 1] };
        let b = if i == n - 1 { grid[n - 1] + (grid[1] - grid[0]) } else { grid[i + 1] };
        let (s, v) = golden_max(|s| f.eval_log(s), a, b, REFINE_TOL);
        let (s, v) = if values[i] > v { (grid[i], values[i]) } else { (s, v) };
        if v > best.value {
            best = Supremum {
                tau_star: s.exp(),
                value: v,
            };
        }
    }

    for lim in [lo_limit, hi_limit] {
        if let EndLimit::Finite(l) = lim {
            if best.value <= l + tol.abs() {
                return Err(Error::InvalidBracket(format!(
                    "supremum {l} approached at the boundary of (0, infinity), not attained"
                )));
            }
        }
    }
    Ok(best)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Golden-section maximisation of a function assumed unimodal on `[a, b]`.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}
