//! Problem parameters and the abstract hypothesis constants.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `N p / (N - p)`, the critical Sobolev exponent. Requires `1 < p < N`.
pub fn critical_exponent(n: usize, p: f64) -> Result<f64> {
    let nf = n as f64;
    if !(p.is_finite() && p > 1.0 && p < nf) {
        return Err(Error::InvalidParams(format!(
            "critical exponent needs 1 < p < N, got N = {n}, p = {p}"
        )));
    }
    Ok(nf * p / (nf - p))
}

/// Which functional is being solved: the pure p-Laplacian problem or the
/// (p,q)-Laplacian one with the extra `(1/q)∫|∇u|^q` term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    POnly,
    Pq,
}

impl Model {
    pub fn as_str(self) -> &'static str {
        match self {
            Model::POnly => "p-only",
            Model::Pq => "pq",
        }
    }
}

impl std::str::FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p-only" | "p" => Ok(Model::POnly),
            "pq" => Ok(Model::Pq),
            _ => Err(Error::InvalidParams(format!("unknown model '{s}'"))),
        }
    }
}

/// Inputs shared by every formula and every discrete functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub n: usize,
    pub p: f64,
    pub q: Option<f64>,
    pub r: f64,
    pub volume: f64,
    pub lambda: Option<f64>,
}

impl ProblemParams {
    pub fn new(n: usize, p: f64, r: f64, volume: f64) -> Result<Self> {
        let params = ProblemParams {
            n,
            p,
            q: None,
            r,
            volume,
            lambda: None,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn with_q(mut self, q: f64) -> Result<Self> {
        self.q = Some(q);
        self.validate()?;
        Ok(self)
    }

    pub fn with_lambda(mut self, lambda: f64) -> Result<Self> {
        self.lambda = Some(lambda);
        self.validate()?;
        Ok(self)
    }

    pub fn with_volume(mut self, volume: f64) -> Result<Self> {
        self.volume = volume;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParams(format!(
                "dimension must be at least 2, got {}",
                self.n
            )));
        }
        let pstar = critical_exponent(self.n, self.p)?;
        if let Some(q) = self.q {
            if !(q.is_finite() && q > 1.0 && q < self.p) {
                return Err(Error::InvalidParams(format!(
                    "need 1 < q < p, got q = {q}, p = {}",
                    self.p
                )));
            }
        }
        if !(self.r.is_finite() && self.r >= self.p && self.r < pstar) {
            return Err(Error::InvalidParams(format!(
                "need p <= r < p* = {pstar}, got r = {}",
                self.r
            )));
        }
        if !(self.volume.is_finite() && self.volume > 0.0) {
            return Err(Error::InvalidParams(format!(
                "domain volume must be positive, got {}",
                self.volume
            )));
        }
        if let Some(l) = self.lambda {
            if !(l.is_finite() && l >= 0.0) {
                return Err(Error::InvalidParams(format!(
                    "lambda must be finite and nonnegative, got {l}"
                )));
            }
        }
        Ok(())
    }

    pub fn pstar(&self) -> f64 {
        let n = self.n as f64;
        n * self.p / (n - self.p)
    }

    pub fn model(&self) -> Model {
        if self.q.is_some() {
            Model::Pq
        } else {
            Model::POnly
        }
    }

    pub fn lambda_or_zero(&self) -> f64 {
        self.lambda.unwrap_or(0.0)
    }
}

/// Constants of the abstract growth hypotheses on `F`, `G`, `H` and the
/// compactness ceiling `c*`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypothesisConstants {
    /// Lower constant for `F`; only used by the origin diagnostic.
    pub alpha0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub cstar: f64,
    pub p: f64,
    /// Required whenever `alpha > 0`.
    pub q: Option<f64>,
    pub r: f64,
    pub pstar: f64,
}

impl HypothesisConstants {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.alpha0,
            self.alpha,
            self.beta,
            self.gamma,
            self.cstar,
            self.p,
            self.r,
            self.pstar,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParams("non-finite hypothesis constant".into()));
        }
        if self.alpha0 < 0.0 || self.alpha < 0.0 {
            return Err(Error::InvalidParams("alpha0 and alpha must be >= 0".into()));
        }
        if self.beta <= 0.0 {
            return Err(Error::InvalidParams(format!("beta must be > 0, got {}", self.beta)));
        }
        if self.gamma <= 0.0 {
            return Err(Error::InvalidParams(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.cstar <= 0.0 {
            return Err(Error::InvalidParams(format!("c* must be > 0, got {}", self.cstar)));
        }
        if self.p <= 1.0 {
            return Err(Error::InvalidParams(format!("need p > 1, got {}", self.p)));
        }
        match self.q {
            Some(q) if !(q > 1.0 && q < self.p) => {
                return Err(Error::InvalidParams(format!(
                    "need 1 < q < p, got q = {q}, p = {}",
                    self.p
                )))
            }
            None if self.alpha > 0.0 || self.alpha0 > 0.0 => {
                return Err(Error::InvalidParams("alpha > 0 requires an exponent q".into()))
            }
            _ => {}
        }
        if !(self.r >= self.p && self.r < self.pstar) {
            return Err(Error::InvalidParams(format!(
                "need p <= r < p*, got p = {}, r = {}, p* = {}",
                self.p, self.r, self.pstar
            )));
        }
        Ok(())
    }

    /// `q` if present, otherwise `p` (only reached when `alpha = 0`).
    pub(crate) fn q_or_p(&self) -> f64 {
        self.q.unwrap_or(self.p)
    }
}
