use serde::{Deserialize, Serialize};

use super::IterationTrace;

/// Relative distance to the ceiling that raises the concentration flag.
pub const NEAR_CEILING: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsReport {
    pub ps_sequence: bool,
    /// Level `c` the energies settle at, when they do.
    pub level: Option<f64>,
    pub ceiling: f64,
    pub concentration_suspected: bool,
    pub iterates_diverging: bool,
    pub message: String,
}

/// Classify the tail of a trace: energies settled, gradients decaying,
/// and where the level sits relative to `ceiling`.
pub fn ps_diagnostic(trace: &IterationTrace, ceiling: f64) -> PsReport {
    let n = trace.len();
    let none = |msg: &str| PsReport {
        ps_sequence: false,
        level: None,
        ceiling,
        concentration_suspected: false,
        iterates_diverging: false,
        message: msg.to_string(),
    };
    if n == 0 {
        return none("empty trace");
    }
    let w = (n / 2).clamp(1, 20).max(n.min(3));
    let tail = n - w;
    let e = &trace.energies[tail..];
    let g = &trace.grad_norms[tail..];
    let x = &trace.norms[tail..];
    if e.iter().chain(g).chain(x).any(|v| !v.is_finite()) {
        return none("non-finite values in trace; no PS sequence detected");
    }
    let c = e[e.len() - 1];
    let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let stable = hi - lo <= 1e-3 * (1.0 + c.abs());
    let (g0, g1) = (g[0], g[g.len() - 1]);
    let decaying = g1 < 1e-6 || (g1 <= 0.5 * g0 && g.windows(2).filter(|p| p[1] > p[0]).count() <= g.len() / 4);
    let diverging = x[x.len() - 1] > 2.0 * x[0];
    if !(stable && decaying) {
        return PsReport {
            iterates_diverging: diverging,
            ..none("no PS sequence detected")
        };
    }
    let near = ceiling.is_finite() && ceiling > 0.0 && (c / ceiling - 1.0).abs() <= NEAR_CEILING;
    let message = if near {
        format!("PS sequence at c = {c:.6e} within 5% of c* = {ceiling:.6e}; concentration suspected")
    } else {
        format!("PS sequence at c = {c:.6e}")
    };
    PsReport {
        ps_sequence: true,
        level: Some(c),
        ceiling,
        concentration_suspected: near,
        iterates_diverging: diverging,
        message,
    }
}
