//! Potentials, operator vectors, energy, Hessians and the Hölder audit.

use serde::{Deserialize, Serialize};

use super::{FemFunction, FemSpace, NO_DOF};
use crate::error::{Error, Result};
use crate::params::{Model, ProblemParams};
use crate::sparse::{dot, CsrMatrix};

pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Smoothing of `|∇u|^{s-2}` as `(|∇u|² + ε²)^{(s-2)/2}` for gradient
/// exponents `s < 2`. Potentials are never regularized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    pub enabled: bool,
    pub epsilon: f64,
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization {
            enabled: true,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl Regularization {
    pub fn off() -> Self {
        Regularization {
            enabled: false,
            epsilon: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Exponents {
    pub p: f64,
    pub q: Option<f64>,
    pub r: f64,
    pub pstar: f64,
}

impl From<&ProblemParams> for Exponents {
    fn from(params: &ProblemParams) -> Self {
        Exponents {
            p: params.p,
            q: params.q,
            r: params.r,
            pstar: params.pstar(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Potentials {
    pub i_p: f64,
    pub j_p: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
}

impl Potentials {
    pub fn energy(&self, lambda: f64) -> f64 {
        self.i_p + self.f - lambda * self.g - self.h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub i_p: f64,
    pub j_p: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
    pub e: f64,
    /// Absent when only the potentials were assembled.
    pub grad_dual_norm: Option<f64>,
    pub lambda: f64,
    pub model: Model,
}

/// Coefficient-space representations of `A_p u`, `B_p u`, `f(u)`, `g(u)`,
/// `h(u)`: entry `i` is the pairing with the `i`-th hat function.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorVectors {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

impl OperatorVectors {
    /// `E'(u) = A_p u + f(u) - λ g(u) - h(u)`.
    pub fn gradient(&self, lambda: f64) -> Vec<f64> {
        (0..self.a.len())
            .map(|i| self.a[i] + self.f[i] - lambda * self.g[i] - self.h[i])
            .collect()
    }

    pub fn pair(&self, v: &[f64]) -> Pairings {
        Pairings {
            a_p: dot(&self.a, v),
            b_p: dot(&self.b, v),
            f: dot(&self.f, v),
            g: dot(&self.g, v),
            h: dot(&self.h, v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pairings {
    pub a_p: f64,
    pub b_p: f64,
    pub f: f64,
    pub g: f64,
    pub h: f64,
}

/// `RHS - LHS` of the three Hölder bounds; `None` for the `F` bound without
/// a `q` exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderSlack {
    pub f_bound: Option<f64>,
    pub g_bound: f64,
    pub h_bound: f64,
}

impl HolderSlack {
    pub fn min(&self) -> f64 {
        self.f_bound
            .unwrap_or(f64::INFINITY)
            .min(self.g_bound)
            .min(self.h_bound)
    }
}

/// `|a|^e` for `a >= 0`, with exact fast paths for small integer exponents.
#[inline]
pub(crate) fn abs_pow(a: f64, e: f64) -> f64 {
    if e == 2.0 {
        a * a
    } else if e == 4.0 {
        let s = a * a;
        s * s
    } else if e == 6.0 {
        let s = a * a;
        s * s * s
    } else if e == 3.0 {
        a * a * a
    } else if e.fract() == 0.0 && e.abs() <= 16.0 {
        a.powi(e as i32)
    } else {
        a.powf(e)
    }
}

/// `sign(x) |x|^{e-1}`, exactly odd in `x`.
#[inline]
pub(crate) fn odd_pow(x: f64, e: f64) -> f64 {
    if e == 2.0 {
        x
    } else if x == 0.0 {
        0.0
    } else {
        x.signum() * abs_pow(x.abs(), e - 1.0)
    }
}

/// Coefficient `w` in `w ∇u` for the operator with gradient exponent `s`.
#[inline]
pub(crate) fn grad_weight(gn2: f64, s: f64, reg: Regularization) -> f64 {
    if s == 2.0 {
        1.0
    } else if s < 2.0 && reg.enabled {
        (gn2 + reg.epsilon * reg.epsilon).powf(0.5 * (s - 2.0))
    } else if gn2 == 0.0 {
        0.0
    } else {
        abs_pow(gn2, 0.5 * (s - 2.0))
    }
}

impl FemSpace {
    pub fn potentials(&self, u: &[f64], ex: &Exponents) -> Potentials {
        let dim = self.dim();
        let k = dim + 1;
        let acc = self.reduce_cells(
            || [0.0f64; 5],
            |acc, c| {
                let vol = self.cell_vol(c);
                let g = self.cell_gradient(c, u);
                let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                acc[0] += vol * abs_pow(gn, ex.p);
                if let Some(q) = ex.q {
                    acc[2] += vol * abs_pow(gn, q);
                }
                let vals = self.cell_values(c, u);
                if vals[..k].iter().all(|v| *v == 0.0) {
                    return;
                }
                let (mut sj, mut sg, mut sh) = (0.0, 0.0, 0.0);
                for &(bary, w) in self.quad_points() {
                    let uq = bary[0] * vals[0] + bary[1] * vals[1] + bary[2] * vals[2] + bary[3] * vals[3];
                    let a = uq.abs();
                    sj += w * abs_pow(a, ex.p);
                    sg += w * abs_pow(a, ex.r);
                    sh += w * abs_pow(a, ex.pstar);
                }
                acc[1] += vol * sj;
                acc[3] += vol * sg;
                acc[4] += vol * sh;
            },
            |a, b| {
                for i in 0..5 {
                    a[i] += b[i];
                }
            },
        );
        Potentials {
            i_p: acc[0] / ex.p,
            j_p: acc[1] / ex.p,
            f: ex.q.map_or(0.0, |q| acc[2] / q),
            g: acc[3] / ex.r,
            h: acc[4] / ex.pstar,
        }
    }

    /// All five operator vectors in one pass over the cells.
    pub fn operator_vectors(&self, u: &[f64], ex: &Exponents, reg: Regularization) -> OperatorVectors {
        let dim = self.dim();
        let k = dim + 1;
        let n = self.num_dofs();
        let out = self.reduce_cells(
            || vec![0.0f64; 5 * n],
            |acc, c| {
                let vol = self.cell_vol(c);
                let dofs = self.cell_dofs(c);
                let grads = self.cell_grads(c);
                let g = self.cell_gradient(c, u);
                let gn2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
                let wa = vol * grad_weight(gn2, ex.p, reg);
                let wf = ex.q.map(|q| vol * grad_weight(gn2, q, reg));
                let vals = self.cell_values(c, u);
                let nonzero = vals[..k].iter().any(|v| *v != 0.0);
                let mut mb = [0.0f64; 4];
                let mut mg = [0.0f64; 4];
                let mut mh = [0.0f64; 4];
                if nonzero {
                    for &(bary, w) in self.quad_points() {
                        let uq = bary[0] * vals[0] + bary[1] * vals[1] + bary[2] * vals[2] + bary[3] * vals[3];
                        let (tb, tg, th) = (
                            w * odd_pow(uq, ex.p),
                            w * odd_pow(uq, ex.r),
                            w * odd_pow(uq, ex.pstar),
                        );
                        for a in 0..4 {
                            mb[a] += tb * bary[a];
                            mg[a] += tg * bary[a];
                            mh[a] += th * bary[a];
                        }
                    }
                }
                for a in 0..k {
                    let dof = dofs[a];
                    if dof == NO_DOF {
                        continue;
                    }
                    let gd: f64 = (0..dim).map(|i| g[i] * grads[a * dim + i]).sum();
                    acc[dof] += wa * gd;
                    if let Some(wf) = wf {
                        acc[2 * n + dof] += wf * gd;
                    }
                    if nonzero {
                        acc[n + dof] += vol * mb[a];
                        acc[3 * n + dof] += vol * mg[a];
                        acc[4 * n + dof] += vol * mh[a];
                    }
                }
            },
            |a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            },
        );
        let mut chunks = out.chunks_exact(n.max(1)).map(|s| s.to_vec());
        if n == 0 {
            return OperatorVectors {
                a: vec![],
                b: vec![],
                f: vec![],
                g: vec![],
                h: vec![],
            };
        }
        OperatorVectors {
            a: chunks.next().expect("a"),
            b: chunks.next().expect("b"),
            f: chunks.next().expect("f"),
            g: chunks.next().expect("g"),
            h: chunks.next().expect("h"),
        }
    }

    /// `∫ |v|^s` by quadrature.
    pub fn value_power_integral(&self, v: &[f64], s: f64) -> f64 {
        self.reduce_cells(
            || 0.0,
            |acc, c| {
                let vals = self.cell_values(c, v);
                let mut sum = 0.0;
                for &(bary, w) in self.quad_points() {
                    let uq = bary[0] * vals[0] + bary[1] * vals[1] + bary[2] * vals[2] + bary[3] * vals[3];
                    sum += w * abs_pow(uq.abs(), s);
                }
                *acc += self.cell_vol(c) * sum;
            },
            |a, b| *a += b,
        )
    }

    /// Coefficient vector of `∫ |v|^{s-2} v φ_i` (`B_s v` for `s = p`).
    pub fn value_operator(&self, v: &[f64], s: f64) -> Vec<f64> {
        let k = self.dim() + 1;
        let n = self.num_dofs();
        self.reduce_cells(
            || vec![0.0; n],
            |acc, c| {
                let vals = self.cell_values(c, v);
                if vals[..k].iter().all(|x| *x == 0.0) {
                    return;
                }
                let mut local = [0.0f64; 4];
                for &(bary, w) in self.quad_points() {
                    let uq = bary[0] * vals[0] + bary[1] * vals[1] + bary[2] * vals[2] + bary[3] * vals[3];
                    let t = w * odd_pow(uq, s);
                    for a in 0..4 {
                        local[a] += t * bary[a];
                    }
                }
                let vol = self.cell_vol(c);
                for (a, &dof) in self.cell_dofs(c).iter().enumerate() {
                    if dof != NO_DOF {
                        acc[dof] += vol * local[a];
                    }
                }
            },
            |a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            },
        )
    }

    /// `E'(u)` in coefficient space.
    pub fn energy_gradient(&self, u: &[f64], ex: &Exponents, lambda: f64, reg: Regularization) -> Vec<f64> {
        self.operator_vectors(u, ex, reg).gradient(lambda)
    }

    /// Sparse second derivative of `Σ coeff_t · T_t(u)` where each term is a
    /// gradient potential `(1/s)∫|∇u|^s` or a value potential `(1/s)∫|u|^s`.
    ///
    /// `floor` is added under every power (`(|∇u|² + floor²)`, `(u² +
    /// floor²)`) for exponents other than 2; pass 0 for the exact Hessian.
    pub fn hessian(&self, u: &[f64], terms: &[HessianTerm], floor: f64) -> CsrMatrix {
        let dim = self.dim();
        let k = dim + 1;
        let f2 = floor * floor;
        self.assemble_matrix(|c, block| {
            let vol = self.cell_vol(c);
            let grads = self.cell_grads(c);
            let g = self.cell_gradient(c, u);
            let gn2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
            let vals = self.cell_values(c, u);
            for term in terms {
                let s = term.exponent;
                match term.kind {
                    TermKind::Gradient => {
                        // w I + w' g g^T
                        let (w, w2) = if s == 2.0 {
                            (1.0, 0.0)
                        } else {
                            let t = gn2 + f2;
                            if t == 0.0 {
                                (0.0, 0.0)
                            } else {
                                (t.powf(0.5 * (s - 2.0)), (s - 2.0) * t.powf(0.5 * (s - 4.0)))
                            }
                        };
                        let w = term.coeff * vol * w;
                        let w2 = term.coeff * vol * w2;
                        for a in 0..k {
                            let ga = &grads[a * dim..(a + 1) * dim];
                            let gga: f64 = (0..dim).map(|i| g[i] * ga[i]).sum();
                            for b in 0..k {
                                let gb = &grads[b * dim..(b + 1) * dim];
                                let dab: f64 = (0..dim).map(|i| ga[i] * gb[i]).sum();
                                let ggb: f64 = (0..dim).map(|i| g[i] * gb[i]).sum();
                                block[a * k + b] += w * dab + w2 * gga * ggb;
                            }
                        }
                    }
                    TermKind::Value => {
                        for &(bary, wq) in self.quad_points() {
                            let uq = bary[0] * vals[0] + bary[1] * vals[1] + bary[2] * vals[2] + bary[3] * vals[3];
                            let d = if s == 2.0 {
                                1.0
                            } else {
                                let t = uq * uq + f2;
                                if t == 0.0 {
                                    0.0
                                } else {
                                    (s - 1.0) * abs_pow(t, 0.5 * (s - 2.0))
                                }
                            };
                            let coef = term.coeff * vol * wq * d;
                            if coef == 0.0 {
                                continue;
                            }
                            for a in 0..k {
                                for b in 0..k {
                                    block[a * k + b] += coef * bary[a] * bary[b];
                                }
                            }
                        }
                    }
                }
            }
        })
    }

    /// Hessian terms of the energy `I_p + F - λ G - H`.
    pub fn energy_hessian_terms(ex: &Exponents, lambda: f64) -> Vec<HessianTerm> {
        let mut terms = vec![HessianTerm::gradient(ex.p, 1.0)];
        if let Some(q) = ex.q {
            terms.push(HessianTerm::gradient(q, 1.0));
        }
        if lambda != 0.0 {
            terms.push(HessianTerm::value(ex.r, -lambda));
        }
        terms.push(HessianTerm::value(ex.pstar, -1.0));
        terms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    Gradient,
    Value,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianTerm {
    pub kind: TermKind,
    pub exponent: f64,
    pub coeff: f64,
}

impl HessianTerm {
    pub fn gradient(exponent: f64, coeff: f64) -> Self {
        HessianTerm {
            kind: TermKind::Gradient,
            exponent,
            coeff,
        }
    }

    pub fn value(exponent: f64, coeff: f64) -> Self {
        HessianTerm {
            kind: TermKind::Value,
            exponent,
            coeff,
        }
    }
}

fn check_space(u: &FemFunction, params: &ProblemParams) -> Result<()> {
    params.validate()?;
    if u.space().dim() != params.n {
        return Err(Error::DimensionMismatch {
            expected: params.n,
            got: u.space().dim(),
        });
    }
    Ok(())
}

/// `I_p, J_p, F, G, H` at `u`; `E` uses `λ = 0` when no λ is set.
pub fn assemble_potentials(u: &FemFunction, params: &ProblemParams) -> Result<EnergyReport> {
    check_space(u, params)?;
    let pot = u.space().potentials(u.coeffs(), &Exponents::from(params));
    let lambda = params.lambda_or_zero();
    Ok(EnergyReport {
        i_p: pot.i_p,
        j_p: pot.j_p,
        f: pot.f,
        g: pot.g,
        h: pot.h,
        e: pot.energy(lambda),
        grad_dual_norm: None,
        lambda,
        model: params.model(),
    })
}

/// The five dual pairings `⟨A_p u, v⟩, ⟨B_p u, v⟩, ⟨f(u), v⟩, ⟨g(u), v⟩,
/// ⟨h(u), v⟩`.
pub fn pair_operators(
    u: &FemFunction,
    v: &FemFunction,
    params: &ProblemParams,
    reg: Regularization,
) -> Result<Pairings> {
    check_space(u, params)?;
    u.check_same_space(v)?;
    let ops = u
        .space()
        .operator_vectors(u.coeffs(), &Exponents::from(params), reg);
    Ok(ops.pair(v.coeffs()))
}

/// Potentials, `E`, and the dual norm of `E'(u)` against `‖∇·‖_p`.
pub fn energy(u: &FemFunction, params: &ProblemParams, reg: Regularization) -> Result<EnergyReport> {
    let lambda = params
        .lambda
        .ok_or_else(|| Error::InvalidParams("energy needs lambda".into()))?;
    let mut report = assemble_potentials(u, params)?;
    let space = u.space();
    let grad = space.energy_gradient(u.coeffs(), &Exponents::from(params), lambda, reg);
    report.grad_dual_norm = Some(space.dual_norm(&grad, params.p, reg)?);
    Ok(report)
}

/// Slacks of `F ≤ |Ω|^{1-q/p}/q (p I_p)^{q/p}`,
/// `G ≥ (p J_p)^{r/p} / (r |Ω|^{r/p-1})` and
/// `H ≥ (p J_p)^{p*/p} / (p* |Ω|^{p/(N-p)})`, with `|Ω|` the mesh volume.
pub fn holder_audit(u: &FemFunction, params: &ProblemParams) -> Result<HolderSlack> {
    check_space(u, params)?;
    let space = u.space();
    let ex = Exponents::from(params);
    let pot = space.potentials(u.coeffs(), &ex);
    let vol = space.volume();
    let (p, r, ps, n) = (ex.p, ex.r, ex.pstar, params.n as f64);
    let pi = p * pot.i_p;
    let pj = p * pot.j_p;
    let f_bound = ex
        .q
        .map(|q| vol.powf(1.0 - q / p) / q * pi.powf(q / p) - pot.f);
    let g_bound = pot.g - pj.powf(r / p) / (r * vol.powf(r / p - 1.0));
    let h_bound = pot.h - pj.powf(ps / p) / (ps * vol.powf(p / (n - p)));
    Ok(HolderSlack {
        f_bound,
        g_bound,
        h_bound,
    })
}
