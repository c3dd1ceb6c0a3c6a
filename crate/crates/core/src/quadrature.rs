//! Gauss rules on intervals and conical-product rules on the reference simplex.

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::function::gamma::ln_gamma;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, 0.0);
            for j in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * j + 1) as f64 * z * p1 - j as f64 * p2) / (j + 1) as f64;
            }
            dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss–Jacobi rule on `[0, 1]` for the weight `(1 - t)^alpha`, built by the
/// Golub–Welsch eigenvalue method.
pub fn gauss_jacobi_unit(n: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1 && alpha > -1.0);
    let beta = 0.0;
    let ab = alpha + beta;
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let kf = k as f64;
        let diag = if k == 0 {
            (beta - alpha) / (ab + 2.0)
        } else {
            (beta * beta - alpha * alpha) / ((2.0 * kf + ab) * (2.0 * kf + ab + 2.0))
        };
        jac[(k, k)] = diag;
        if k + 1 < n {
            let j = kf + 1.0;
            let s = 2.0 * j + ab;
            let off = (4.0 * j * (j + alpha) * (j + beta) * (j + ab)
                / (s * s * (s + 1.0) * (s - 1.0)))
                .sqrt();
            jac[(k, k + 1)] = off;
            jac[(k + 1, k)] = off;
        }
    }
    let mu0 = ((ab + 1.0) * std::f64::consts::LN_2 + ln_gamma(alpha + 1.0) + ln_gamma(beta + 1.0)
        - ln_gamma(ab + 2.0))
    .exp();
    let eig = SymmetricEigen::new(jac);
    let mut nodes: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], mu0 * v0 * v0)
        })
        .collect();
    nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
    // map [-1, 1] with weight (1 - x)^alpha onto [0, 1] with (1 - t)^alpha
    let scale = 0.5f64.powf(alpha + 1.0);
    let x = nodes.iter().map(|(x, _)| 0.5 * (x + 1.0)).collect();
    let w = nodes.iter().map(|(_, w)| w * scale).collect();
    (x, w)
}

/// A quadrature rule on the reference simplex in barycentric coordinates.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub dim: usize,
    /// `points[q]` has `dim + 1` barycentric coordinates.
    pub points: Vec<Vec<f64>>,
    /// Weights summing to the reference-simplex volume `1 / dim!`.
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// Conical product (collapsed-coordinate) rule with `n` points per
    /// direction; exact for total degree `2n - 1`.
    pub fn conical(dim: usize, n: usize) -> Self {
        assert!((1..=3).contains(&dim));
        let (gl_x, gl_w) = gauss_legendre(n);
        let leg: Vec<(f64, f64)> = gl_x
            .iter()
            .zip(&gl_w)
            .map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w))
            .collect();
        let jac: Vec<Vec<(f64, f64)>> = (1..dim)
            .map(|a| {
                let (x, w) = gauss_jacobi_unit(n, a as f64);
                x.into_iter().zip(w).collect()
            })
            .collect();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        match dim {
            1 => {
                for &(t, w) in &leg {
                    points.push(vec![1.0 - t, t]);
                    weights.push(w);
                }
            }
            2 => {
                for &(s1, w1) in &jac[0] {
                    for &(s2, w2) in &leg {
                        let x = s1;
                        let y = (1.0 - s1) * s2;
                        points.push(vec![1.0 - x - y, x, y]);
                        weights.push(w1 * w2);
                    }
                }
            }
            _ => {
                for &(s1, w1) in &jac[1] {
                    for &(s2, w2) in &jac[0] {
                        for &(s3, w3) in &leg {
                            let x = s1;
                            let y = (1.0 - s1) * s2;
                            let z = (1.0 - s1) * (1.0 - s2) * s3;
                            points.push(vec![1.0 - x - y - z, x, y, z]);
                            weights.push(w1 * w2 * w3);
                        }
                    }
                }
            }
        }
        QuadratureRule {
            dim,
            points,
            weights,
            degree: 2 * n - 1,
        }
    }

    /// The degree-5 rule used for all volume integrals in the assembly.
    pub fn default_for(dim: usize) -> Self {
        Self::conical(dim, 3)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Weights rescaled so that they sum to one (multiply by a cell volume to
    /// integrate over that cell).
    pub fn unit_weights(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        self.weights.iter().map(|w| w / total).collect()
    }
}
