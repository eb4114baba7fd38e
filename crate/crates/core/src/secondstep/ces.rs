//! CES transition fits on tilde-scale draws.

use super::lm::{minimize, LeastSquares, LmConfig, LmResult};
use crate::stats::{lse2, share2};
use nalgebra::DMatrix;

/// Data for one transition.
pub struct Transition<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub z: &'a [f64],
    /// Investment residual used as control; `None` drops the term.
    pub e: Option<&'a [f64]>,
}

impl Transition<'_> {
    fn control(&self, i: usize) -> f64 {
        self.e.map_or(0.0, |e| e[i])
    }

    fn extra(&self) -> usize {
        usize::from(self.e.is_some())
    }
}

/// Free exponents: parameters `(ln|a|, ln|b|, o, ln γ1, ln γ2, κ)` for
/// `z = o · ln(γ1 e^{a x} + γ2 e^{b y}) + κ e`, with `sign(a) = sign(b) = sign`.
pub struct Invariant<'a> {
    pub d: &'a Transition<'a>,
    pub sign: f64,
}

impl Invariant<'_> {
    pub fn reduced(&self, p: &[f64]) -> ReducedFit {
        ReducedFit {
            exp_skill: self.sign * p[0].exp(),
            exp_invest: self.sign * p[1].exp(),
            outer: p[2],
            g1: p[3].exp(),
            g2: p[4].exp(),
            kappa: p.get(5).copied().unwrap_or(0.0),
        }
    }
}

impl LeastSquares for Invariant<'_> {
    fn n_params(&self) -> usize {
        5 + self.d.extra()
    }
    fn n_obs(&self) -> usize {
        self.d.z.len()
    }
    fn residuals(&self, p: &[f64], r: &mut [f64]) -> bool {
        let (a, b) = (self.sign * p[0].exp(), self.sign * p[1].exp());
        for i in 0..r.len() {
            let l = lse2(p[3] + a * self.d.x[i], p[4] + b * self.d.y[i]);
            r[i] = self.d.z[i] - p[2] * l - p.get(5).map_or(0.0, |k| k * self.d.control(i));
        }
        a.is_finite() && b.is_finite()
    }
    fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>) {
        let (a, b, o) = (self.sign * p[0].exp(), self.sign * p[1].exp(), p[2]);
        for i in 0..self.d.z.len() {
            let (x, y) = (self.d.x[i], self.d.y[i]);
            let (u, v) = (p[3] + a * x, p[4] + b * y);
            let s1 = share2(u, v);
            let s2 = 1.0 - s1;
            j[(i, 0)] = -o * s1 * a * x;
            j[(i, 1)] = -o * s2 * b * y;
            j[(i, 2)] = -lse2(u, v);
            j[(i, 3)] = -o * s1;
            j[(i, 4)] = -o * s2;
            if self.d.e.is_some() {
                j[(i, 5)] = -self.d.control(i);
            }
        }
    }
}

/// Unit scales: parameters `(ln|σ|, ln γ1, ln γ2, κ)` with `a = b = σ`, `o = 1/σ`.
pub struct FixedScale<'a> {
    pub d: &'a Transition<'a>,
    pub sign: f64,
}

impl FixedScale<'_> {
    pub fn reduced(&self, p: &[f64]) -> ReducedFit {
        let s = self.sign * p[0].exp();
        ReducedFit {
            exp_skill: s,
            exp_invest: s,
            outer: 1.0 / s,
            g1: p[1].exp(),
            g2: p[2].exp(),
            kappa: p.get(3).copied().unwrap_or(0.0),
        }
    }
}

impl LeastSquares for FixedScale<'_> {
    fn n_params(&self) -> usize {
        3 + self.d.extra()
    }
    fn n_obs(&self) -> usize {
        self.d.z.len()
    }
    fn residuals(&self, p: &[f64], r: &mut [f64]) -> bool {
        let s = self.sign * p[0].exp();
        for i in 0..r.len() {
            let l = lse2(p[1] + s * self.d.x[i], p[2] + s * self.d.y[i]);
            r[i] = self.d.z[i] - l / s - p.get(3).map_or(0.0, |k| k * self.d.control(i));
        }
        s.is_finite() && s != 0.0
    }
    fn jacobian(&self, p: &[f64], j: &mut DMatrix<f64>) {
        let s = self.sign * p[0].exp();
        for i in 0..self.d.z.len() {
            let (x, y) = (self.d.x[i], self.d.y[i]);
            let (u, v) = (p[1] + s * x, p[2] + s * y);
            let s1 = share2(u, v);
            let s2 = 1.0 - s1;
            let l = lse2(u, v);
            j[(i, 0)] = l / s - (s1 * x + s2 * y);
            j[(i, 1)] = -s1 / s;
            j[(i, 2)] = -s2 / s;
            if self.d.e.is_some() {
                j[(i, 3)] = -self.d.control(i);
            }
        }
    }
}

/// Reduced-form CES transition in tilde units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReducedFit {
    pub exp_skill: f64,
    pub exp_invest: f64,
    pub outer: f64,
    pub g1: f64,
    pub g2: f64,
    pub kappa: f64,
}

pub const SIGMA_STARTS: [f64; 4] = [-1.0, -0.5, 0.5, 1.0];

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Common log weight making the mean residual zero.
fn level(d: &Transition, a: f64, b: f64, o: f64) -> f64 {
    let m =
        d.x.iter()
            .zip(d.y)
            .map(|(x, y)| lse2(a * x, b * y))
            .sum::<f64>()
            / d.x.len() as f64;
    mean(d.z) / o - m
}

/// Best of eight starts: σ in [`SIGMA_STARTS`], crossed with two guesses of
/// the next-period scale (spread of `z`, or same as `x`). All starts are
/// expressed through sample spreads, so they move with the data's units.
pub fn fit_invariant(d: &Transition, cfg: LmConfig) -> Option<(ReducedFit, LmResult)> {
    let (sx, sy, sz) = (
        crate::stats::sd(d.x),
        crate::stats::sd(d.y),
        crate::stats::sd(d.z),
    );
    let mut best: Option<(ReducedFit, LmResult)> = None;
    for s0 in SIGMA_STARTS {
        for next_scale in [sz, sx] {
            let sign = s0.signum();
            let (a, b, o) = (s0 / sx, s0 / sy, next_scale / s0);
            let g = level(d, a, b, o);
            let start = [a.abs().ln(), b.abs().ln(), o, g, g, 0.0];
            let start = &start[..5 + d.extra()];
            let prob = Invariant { d, sign };
            let Some(res) = minimize(&prob, start, cfg) else {
                continue;
            };
            if best
                .as_ref()
                .is_none_or(|(_, b)| res.objective < b.objective)
            {
                best = Some((prob.reduced(&res.params), res));
            }
        }
    }
    best
}

/// Same multistart for the unit-scale model; the second guess splits the weights 1:3.
pub fn fit_fixed(d: &Transition, cfg: LmConfig) -> Option<(ReducedFit, LmResult)> {
    let mut best: Option<(ReducedFit, LmResult)> = None;
    for s0 in SIGMA_STARTS {
        for split in [0.0, 3f64.ln()] {
            let g = level(d, s0, s0, 1.0 / s0);
            let start = [s0.abs().ln(), g - 0.5 * split, g + 0.5 * split, 0.0];
            let start = &start[..3 + d.extra()];
            let prob = FixedScale {
                d,
                sign: s0.signum(),
            };
            let Some(res) = minimize(&prob, start, cfg) else {
                continue;
            };
            if best
                .as_ref()
                .is_none_or(|(_, b)| res.objective < b.objective)
            {
                best = Some((prob.reduced(&res.params), res));
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::secondstep::lm::numeric_jacobian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn data(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| 0.5 * v + rng.random_range(-1.0..1.0))
            .collect();
        let e: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        (x, y, e)
    }

    #[test]
    fn analytic_jacobians_match_differences() {
        let (x, y, e) = data(30, 1);
        let z: Vec<f64> = x.iter().map(|v| v * 0.7).collect();
        let d = Transition {
            x: &x,
            y: &y,
            z: &z,
            e: Some(&e),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let p: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let prob = Invariant { d: &d, sign };
            let mut ana = DMatrix::zeros(30, 6);
            prob.jacobian(&p, &mut ana);
            let num = numeric_jacobian(&prob, &p, 1e-6);
            assert!((&ana - &num).abs().max() < 1e-5);
            let prob = FixedScale { d: &d, sign };
            let mut ana = DMatrix::zeros(30, 4);
            prob.jacobian(&p[..4], &mut ana);
            let num = numeric_jacobian(&prob, &p[..4], 1e-6);
            assert!((&ana - &num).abs().max() < 1e-5);
        }
    }

    #[test]
    fn noiseless_invariant_fit_is_exact() {
        let (x, y, e) = data(400, 2);
        // σ = -0.5, loadings 2 (skill) and 0.8 (invest), next loading 1.5, ψ = 1.
        let (a, b, o) = (-0.5 / 2.0, -0.5 / 0.8, 1.5 / -0.5);
        let z: Vec<f64> = (0..400)
            .map(|i| o * lse2(0.3f64.ln() + a * x[i], 0.7f64.ln() + b * y[i]) + 0.2 * e[i])
            .collect();
        let d = Transition {
            x: &x,
            y: &y,
            z: &z,
            e: Some(&e),
        };
        let (fit, res) = fit_invariant(&d, LmConfig::default()).unwrap();
        assert!(res.objective < 1e-20, "{res:?}");
        assert!((fit.exp_skill - a).abs() < 1e-6 && (fit.exp_invest - b).abs() < 1e-6);
        assert!(
            (fit.outer - o).abs() < 1e-6
                && (fit.g1 - 0.3).abs() < 1e-6
                && (fit.kappa - 0.2).abs() < 1e-6
        );
    }

    #[test]
    fn noiseless_fixed_fit_is_exact() {
        let (x, y, e) = data(400, 3);
        let s = 0.6;
        let z: Vec<f64> = (0..400)
            .map(|i| lse2(0.4f64.ln() + s * x[i], 0.6f64.ln() + s * y[i]) / s)
            .collect();
        let d = Transition {
            x: &x,
            y: &y,
            z: &z,
            e: Some(&e),
        };
        let (fit, res) = fit_fixed(&d, LmConfig::default()).unwrap();
        assert!(res.objective < 1e-20);
        assert!(
            (fit.exp_skill - s).abs() < 1e-6
                && (fit.g2 - 0.6).abs() < 1e-6
                && fit.kappa.abs() < 1e-6
        );
    }
}
