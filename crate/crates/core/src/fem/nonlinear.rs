//! The p-Poisson problem `A_p v = b` and the dual norm built on it.

use super::assembly::{abs_pow, grad_weight};
use super::{FemSpace, HessianTerm, Regularization, NO_DOF};
use crate::error::{Error, Result};
use crate::sparse::{dot, SpdSolver};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PPoissonOptions {
    /// Stop when the Newton decrement falls below `rtol` times `|bᵀv|^{1/2}`.
    pub rtol: f64,
    pub max_iter: usize,
    /// Hessian floor relative to the largest cell gradient.
    pub floor_rel: f64,
}

impl Default for PPoissonOptions {
    fn default() -> Self {
        PPoissonOptions {
            rtol: 1e-12,
            max_iter: 200,
            floor_rel: 1e-3,
        }
    }
}

impl FemSpace {
    /// `∫ |∇v|^s`.
    pub fn grad_power_integral(&self, v: &[f64], s: f64) -> f64 {
        self.reduce_cells(
            || 0.0,
            |acc, c| {
                let g = self.cell_gradient(c, v);
                let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                *acc += self.cell_vol(c) * abs_pow(gn, s);
            },
            |a, b| *a += b,
        )
    }

    /// Potential of `grad_operator`: `∫ |∇v|^s`, or under regularization
    /// `∫ (|∇v|² + ε²)^{s/2} - ε^s`.
    pub(crate) fn grad_potential(&self, v: &[f64], s: f64, reg: Regularization) -> f64 {
        if !(s < 2.0 && reg.enabled) {
            return self.grad_power_integral(v, s);
        }
        let e2 = reg.epsilon * reg.epsilon;
        let es = abs_pow(reg.epsilon, s);
        self.reduce_cells(
            || 0.0,
            |acc, c| {
                let g = self.cell_gradient(c, v);
                let x = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]) / e2;
                *acc += self.cell_vol(c) * es * (0.5 * s * x.ln_1p()).exp_m1();
            },
            |a, b| *a += b,
        )
    }

    /// `‖∇v‖_s = (∫|∇v|^s)^{1/s}`.
    pub fn w_norm(&self, v: &[f64], s: f64) -> f64 {
        self.grad_power_integral(v, s).powf(1.0 / s)
    }

    /// Coefficient vector of `A_s v`: `∫ |∇v|^{s-2} ∇v · ∇φ_i`.
    pub fn grad_operator(&self, v: &[f64], s: f64, reg: Regularization) -> Vec<f64> {
        let dim = self.dim();
        let n = self.num_dofs();
        self.reduce_cells(
            || vec![0.0; n],
            |acc, c| {
                let g = self.cell_gradient(c, v);
                let gn2 = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
                let w = self.cell_vol(c) * grad_weight(gn2, s, reg);
                if w == 0.0 {
                    return;
                }
                let grads = self.cell_grads(c);
                for (a, &dof) in self.cell_dofs(c).iter().enumerate() {
                    if dof != NO_DOF {
                        let gd: f64 = (0..dim).map(|i| g[i] * grads[a * dim + i]).sum();
                        acc[dof] += w * gd;
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

    fn max_cell_gradient(&self, v: &[f64]) -> f64 {
        (0..self.num_cells())
            .map(|c| {
                let g = self.cell_gradient(c, v);
                (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Dual norm of the functional `r` against `‖∇·‖_p`: `sqrt(rᵀK⁻¹r)` for
    /// `p = 2`, otherwise `‖∇v‖_p^{p-1}` with `A_p v = r`.
    pub fn dual_norm(&self, r: &[f64], p: f64, reg: Regularization) -> Result<f64> {
        if r.iter().all(|x| *x == 0.0) {
            return Ok(0.0);
        }
        if p == 2.0 {
            let z = self.stiffness().solve(r)?;
            return Ok(dot(r, &z).max(0.0).sqrt());
        }
        let opts = PPoissonOptions {
            rtol: 1e-8,
            max_iter: 60,
            ..PPoissonOptions::default()
        };
        let v = match solve_p_poisson(self, p, r, reg, opts) {
            Ok(v) => v,
            Err(Error::NoConvergence { .. }) => {
                // fall back to the last iterate of a loose solve
                solve_p_poisson(self, p, r, reg, PPoissonOptions { rtol: 1e-3, ..opts })?
            }
            Err(e) => return Err(e),
        };
        Ok(self.grad_power_integral(&v, p).powf((p - 1.0) / p))
    }
}

/// Minimizer of `(1/p)∫|∇v|^p - bᵀv`, i.e. the solution of `A_p v = b`,
/// by damped Newton with a floored Hessian.
pub fn solve_p_poisson(
    space: &FemSpace,
    p: f64,
    b: &[f64],
    reg: Regularization,
    opts: PPoissonOptions,
) -> Result<Vec<f64>> {
    let n = space.num_dofs();
    if b.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: b.len(),
        });
    }
    if b.iter().all(|x| *x == 0.0) {
        return Ok(vec![0.0; n]);
    }
    let k = space.stiffness();
    let mut v = k.solve(b)?;
    if p == 2.0 {
        return Ok(v);
    }
    // best multiple of the linear solution
    let bv = dot(b, &v);
    let pv = space.grad_power_integral(&v, p);
    let s = (bv / pv).powf(1.0 / (p - 1.0));
    v.iter_mut().for_each(|x| *x *= s);

    let phi = |v: &[f64]| space.grad_potential(v, p, reg) / p - dot(b, v);
    let residual = |v: &[f64]| -> Vec<f64> {
        let mut g = space.grad_operator(v, p, reg);
        for (gi, bi) in g.iter_mut().zip(b) {
            *gi -= bi;
        }
        g
    };
    let mut f = phi(&v);
    let mut grad = residual(&v);
    let mut decrement = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let floor = opts.floor_rel * space.max_cell_gradient(&v);
        let floor = if p < 2.0 && reg.enabled { floor.max(reg.epsilon) } else { floor };
        let hess = space.hessian(&v, &[HessianTerm::gradient(p, 1.0)], floor);
        let solver = SpdSolver::new(hess, 1e-12);
        let mut d = vec![0.0; n];
        let neg: Vec<f64> = grad.iter().map(|x| -x).collect();
        if solver.solve_into(&neg, &mut d).is_err() {
            // fall back to the stiffness metric
            d = k.solve(&neg)?;
        }
        // squared Newton decrement, compared against (bᵀv)
        decrement = -dot(&grad, &d);
        let scale = dot(b, &v).abs();
        if decrement.max(0.0).sqrt() <= opts.rtol * scale.sqrt() {
            return Ok(v);
        }
        let gnorm = crate::sparse::norm(&grad);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = v.iter().zip(&d).map(|(x, y)| x + t * y).collect();
            let ft = phi(&trial);
            let armijo = ft <= f - 1e-4 * t * decrement;
            // below roundoff in the objective, judge by the residual instead
            let flat = (f - ft).abs() <= 1e-13 * (f.abs() + scale);
            if armijo || flat {
                let gt = residual(&trial);
                if armijo || crate::sparse::norm(&gt) < gnorm {
                    v = trial;
                    f = ft;
                    grad = gt;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            if decrement.max(0.0).sqrt() <= 1e-6 * scale.sqrt() {
                return Ok(v);
            }
            break;
        }
    }
    Err(Error::NoConvergence {
        what: "p-Poisson solve".into(),
        iterations: opts.max_iter,
        residual: decrement,
    })
}
