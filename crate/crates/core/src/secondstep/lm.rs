//! Levenberg–Marquardt with Marquardt's diagonal scaling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub trait LeastSquares {
    fn n_params(&self) -> usize;
    fn n_obs(&self) -> usize;
    /// Residuals at `p`; `false` if they cannot be evaluated.
    fn residuals(&self, p: &[f64], r: &mut [f64]) -> bool;
    /// Jacobian of the residuals, `n_obs × n_params`.
    fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmConfig {
    pub max_iter: usize,
    /// Relative change of the objective that counts as converged.
    pub tol: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            max_iter: 500,
            tol: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Mean squared residual.
    pub objective: f64,
    pub iterations: usize,
    /// Euclidean norm of the objective gradient.
    pub grad_norm: f64,
    pub converged: bool,
}

fn mean_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64
}

pub fn minimize<P: LeastSquares + ?Sized>(
    prob: &P,
    start: &[f64],
    cfg: LmConfig,
) -> Option<LmResult> {
    let (n, k) = (prob.n_obs(), prob.n_params());
    let mut p = start.to_vec();
    let mut r = vec![0.0; n];
    if !prob.residuals(&p, &mut r) {
        return None;
    }
    let mut f = mean_sq(&r);
    if !f.is_finite() {
        return None;
    }
    let mut jac = DMatrix::zeros(n, k);
    let mut trial = vec![0.0; n];
    let mut damping = 1e-3;
    let mut converged = false;
    let mut quiet = 0;
    let mut iterations = 0;
    for it in 0..cfg.max_iter {
        iterations = it + 1;
        prob.jacobian(&p, &mut jac);
        let rv = DVector::from_column_slice(&r);
        let a = jac.tr_mul(&jac);
        let grad = jac.tr_mul(&rv);
        let mut accepted = None;
        while damping < 1e16 {
            let mut m = a.clone();
            for i in 0..k {
                m[(i, i)] += damping * a[(i, i)].max(1e-300);
            }
            let Some(ch) = m.cholesky() else {
                damping *= 4.0;
                continue;
            };
            let step = ch.solve(&(-&grad));
            let cand: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            if prob.residuals(&cand, &mut trial) {
                let fc = mean_sq(&trial);
                if fc.is_finite() && fc <= f {
                    accepted = Some((cand, fc));
                    damping = (damping / 3.0).max(1e-12);
                    break;
                }
            }
            damping *= 4.0;
        }
        let Some((cand, fc)) = accepted else {
            // No descent direction left: a stationary point to working precision.
            converged = true;
            break;
        };
        let rel = (f - fc) / f.max(1e-300);
        p = cand;
        f = fc;
        std::mem::swap(&mut r, &mut trial);
        if rel < cfg.tol {
            quiet += 1;
            if quiet >= 2 {
                converged = true;
                break;
            }
        } else {
            quiet = 0;
        }
    }
    prob.jacobian(&p, &mut jac);
    let grad = jac.tr_mul(&DVector::from_column_slice(&r));
    Some(LmResult {
        params: p,
        objective: f,
        iterations,
        grad_norm: 2.0 * grad.norm() / n as f64,
        converged,
    })
}

/// Central-difference Jacobian, for checking analytic ones.
pub fn numeric_jacobian<P: LeastSquares + ?Sized>(
    prob: &P,
    p: &[f64],
    rel_step: f64,
) -> DMatrix<f64> {
    let (n, k) = (prob.n_obs(), prob.n_params());
    let mut out = DMatrix::zeros(n, k);
    let (mut hi, mut lo) = (vec![0.0; n], vec![0.0; n]);
    for c in 0..k {
        let h = rel_step * p[c].abs().max(1.0);
        let mut q = p.to_vec();
        q[c] = p[c] + h;
        prob.residuals(&q, &mut hi);
        q[c] = p[c] - h;
        prob.residuals(&q, &mut lo);
        for i in 0..n {
            out[(i, c)] = (hi[i] - lo[i]) / (2.0 * h);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Exponential decay `y = a exp(-b x)`.
    struct Decay {
        x: Vec<f64>,
        y: Vec<f64>,
    }

    impl LeastSquares for Decay {
        fn n_params(&self) -> usize {
            2
        }
        fn n_obs(&self) -> usize {
            self.x.len()
        }
        fn residuals(&self, p: &[f64], r: &mut [f64]) -> bool {
            for i in 0..self.x.len() {
                r[i] = self.y[i] - p[0] * (-p[1] * self.x[i]).exp();
            }
            true
        }
        fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>) {
            for i in 0..self.x.len() {
                let e = (-p[1] * self.x[i]).exp();
                j[(i, 0)] = -e;
                j[(i, 1)] = p[0] * self.x[i] * e;
            }
        }
    }

    #[test]
    fn fits_exact_decay() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.1).collect();
        let y = x.iter().map(|v| 2.5 * (-1.3 * v).exp()).collect();
        let prob = Decay { x, y };
        let res = minimize(&prob, &[1.0, 0.5], LmConfig::default()).unwrap();
        assert!(
            (res.params[0] - 2.5).abs() < 1e-8 && (res.params[1] - 1.3).abs() < 1e-8,
            "{res:?}"
        );
        let num = numeric_jacobian(&prob, &[1.0, 0.5], 1e-6);
        let mut ana = DMatrix::zeros(40, 2);
        prob.jacobian(&[1.0, 0.5], &mut ana);
        assert!((num - ana).abs().max() < 1e-8);
    }
}
