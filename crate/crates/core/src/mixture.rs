//! Finite Gaussian mixtures over a real vector.

use crate::error::{Error, Result};
use crate::stats::{bisect_increasing, norm_cdf};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major covariance matrices.
    pub covs: Vec<Vec<Vec<f64>>>,
}

pub const MIN_EIGEN: f64 = 1e-10;

impl MixtureModel {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, covs: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let m = MixtureModel {
            weights,
            means,
            covs,
        };
        m.validate("mixture")?;
        Ok(m)
    }

    /// Single normal component.
    pub fn gaussian(mean: Vec<f64>, cov: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![cov])
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    pub fn validate(&self, key: &str) -> Result<()> {
        let k = self.weights.len();
        if k == 0 {
            return Err(Error::invalid(key, "mixture needs at least one component"));
        }
        if self.means.len() != k || self.covs.len() != k {
            return Err(Error::invalid(
                key,
                "weights, means and covs lengths differ",
            ));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid(
                format!("{key}.weights"),
                "weights must be finite and nonnegative",
            ));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                format!("{key}.weights"),
                format!("weights sum to {total}, not 1"),
            ));
        }
        let d = self.dim();
        for c in 0..k {
            if self.means[c].len() != d || self.means[c].iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(
                    format!("{key}.means[{c}]"),
                    "wrong length or non-finite",
                ));
            }
            let s = self.cov_matrix(c);
            if s.nrows() != d || self.covs[c].iter().any(|r| r.len() != d) {
                return Err(Error::invalid(format!("{key}.covs[{c}]"), "wrong shape"));
            }
            if (&s - s.transpose()).abs().max() > 1e-9 * (1.0 + s.abs().max()) {
                return Err(Error::invalid(format!("{key}.covs[{c}]"), "not symmetric"));
            }
            let ev = s.symmetric_eigenvalues().min();
            if !(ev > MIN_EIGEN) {
                return Err(Error::invalid(
                    format!("{key}.covs[{c}]"),
                    format!("not positive definite (min eigenvalue {ev:e})"),
                ));
            }
        }
        Ok(())
    }

    pub fn cov_matrix(&self, c: usize) -> DMatrix<f64> {
        let rows = &self.covs[c];
        let d = rows.len();
        DMatrix::from_fn(d, d, |i, j| rows[i].get(j).copied().unwrap_or(f64::NAN))
    }

    pub fn mean_vector(&self, c: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.means[c])
    }

    /// Overall mean.
    pub fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for i in 0..d {
                m[i] += w * mu[i];
            }
        }
        m
    }

    /// Overall covariance.
    pub fn cov(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let m = self.mean();
        let mut s = vec![vec![0.0; d]; d];
        for c in 0..self.k() {
            let w = self.weights[c];
            for i in 0..d {
                for j in 0..d {
                    s[i][j] += w
                        * (self.covs[c][i][j]
                            + (self.means[c][i] - m[i]) * (self.means[c][j] - m[j]));
                }
            }
        }
        s
    }

    pub fn marginal_cdf(&self, idx: usize, x: f64) -> f64 {
        let mut p = 0.0;
        for c in 0..self.k() {
            let sd = self.covs[c][idx][idx].sqrt();
            p += self.weights[c] * norm_cdf((x - self.means[c][idx]) / sd);
        }
        p.clamp(0.0, 1.0)
    }

    /// Marginal quantile by bisection on the CDF, to 1e-10.
    pub fn marginal_quantile(&self, idx: usize, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(
                "quantile level",
                format!("{p} is outside (0, 1)"),
            ));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in 0..self.k() {
            let sd = self.covs[c][idx][idx].sqrt();
            lo = lo.min(self.means[c][idx] - 40.0 * sd);
            hi = hi.max(self.means[c][idx] + 40.0 * sd);
        }
        bisect_increasing(|x| self.marginal_cdf(idx, x) - p, lo, hi, 1e-10, 200).ok_or_else(|| {
            Error::Mixture(format!("quantile {p} of coordinate {idx} not bracketed"))
        })
    }

    /// Mixture of the sub-vector `idx`.
    pub fn select(&self, idx: &[usize]) -> MixtureModel {
        MixtureModel {
            weights: self.weights.clone(),
            means: self
                .means
                .iter()
                .map(|m| idx.iter().map(|&i| m[i]).collect())
                .collect(),
            covs: self
                .covs
                .iter()
                .map(|s| {
                    idx.iter()
                        .map(|&i| idx.iter().map(|&j| s[i][j]).collect())
                        .collect()
                })
                .collect(),
        }
    }

    /// Law of `shift + scale * x` coordinatewise.
    pub fn affine(&self, shift: &[f64], scale: &[f64]) -> MixtureModel {
        let d = self.dim();
        MixtureModel {
            weights: self.weights.clone(),
            means: self
                .means
                .iter()
                .map(|m| (0..d).map(|i| shift[i] + scale[i] * m[i]).collect())
                .collect(),
            covs: self
                .covs
                .iter()
                .map(|s| {
                    (0..d)
                        .map(|i| (0..d).map(|j| scale[i] * scale[j] * s[i][j]).collect())
                        .collect()
                })
                .collect(),
        }
    }

    pub fn sampler(&self) -> Result<MixtureSampler> {
        let mut chol = Vec::with_capacity(self.k());
        for c in 0..self.k() {
            let l = self
                .cov_matrix(c)
                .cholesky()
                .ok_or_else(|| {
                    Error::Mixture(format!("component {c} covariance not positive definite"))
                })?
                .l();
            chol.push(l);
        }
        let mut cum = Vec::with_capacity(self.k());
        let mut acc = 0.0;
        for w in &self.weights {
            acc += w;
            cum.push(acc);
        }
        Ok(MixtureSampler {
            cum,
            means: self.means.clone(),
            chol,
        })
    }

    /// Log density at `x`.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let d = self.dim() as f64;
        let mut terms = Vec::with_capacity(self.k());
        for c in 0..self.k() {
            if self.weights[c] <= 0.0 {
                continue;
            }
            let ch = self.cov_matrix(c).cholesky().expect("validated covariance");
            let r = DVector::from_fn(self.dim(), |i, _| x[i] - self.means[c][i]);
            let u = ch.l().solve_lower_triangular(&r).expect("triangular");
            let logdet: f64 = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
            terms.push(
                self.weights[c].ln()
                    - 0.5 * (d * (2.0 * std::f64::consts::PI).ln() + logdet + u.norm_squared()),
            );
        }
        let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
    }
}

pub struct MixtureSampler {
    cum: Vec<f64>,
    means: Vec<Vec<f64>>,
    chol: Vec<DMatrix<f64>>,
}

impl MixtureSampler {
    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// One draw written into `out`.
    pub fn sample_into<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        let u: f64 = rng.random();
        let d = self.dim();
        let mut z = [0.0f64; 32];
        assert!(d <= z.len(), "mixture dimension above 32");
        for zi in z.iter_mut().take(d) {
            *zi = rng.sample(StandardNormal);
        }
        self.sample_with(u, &z[..d], out);
    }

    /// Maps a uniform and `dim` standard normals to a draw.
    pub fn sample_with(&self, u: f64, z: &[f64], out: &mut [f64]) {
        let last = self.cum.len() - 1;
        let c = self.cum.iter().position(|&w| u < w).unwrap_or(last);
        let l = &self.chol[c];
        for i in 0..self.dim() {
            let mut v = self.means[c][i];
            for j in 0..=i {
                v += l[(i, j)] * z[j];
            }
            out[i] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn two_comp() -> MixtureModel {
        MixtureModel::new(
            vec![0.3, 0.7],
            vec![vec![-1.0, 0.0], vec![2.0, 1.0]],
            vec![
                vec![vec![1.0, 0.2], vec![0.2, 0.5]],
                vec![vec![0.4, -0.1], vec![-0.1, 2.0]],
            ],
        )
        .unwrap()
    }

    #[test]
    fn rejects_bad_weights() {
        let r = MixtureModel::new(
            vec![0.5, 0.6],
            vec![vec![0.0], vec![1.0]],
            vec![vec![vec![1.0]]; 2],
        );
        assert!(r.is_err());
    }

    #[test]
    fn quantile_inverts_cdf() {
        let m = two_comp();
        for p in [0.01, 0.3, 0.5, 0.77, 0.99] {
            let q = m.marginal_quantile(0, p).unwrap();
            assert!((m.marginal_cdf(0, q) - p).abs() < 1e-9);
        }
    }

    #[test]
    fn moments_match_draws() {
        let m = two_comp();
        let s = m.sampler().unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 200_000;
        let mut acc = [0.0; 2];
        let mut x = [0.0; 2];
        for _ in 0..n {
            s.sample_into(&mut rng, &mut x);
            acc[0] += x[0];
            acc[1] += x[1];
        }
        let mean = m.mean();
        let cov = m.cov();
        for i in 0..2 {
            let se = (cov[i][i] / n as f64).sqrt();
            assert!((acc[i] / n as f64 - mean[i]).abs() < 4.0 * se);
        }
    }

    #[test]
    fn affine_maps_quantiles() {
        let m = two_comp();
        let a = m.affine(&[1.0, 0.0], &[3.0, 1.0]);
        let q = m.marginal_quantile(0, 0.4).unwrap();
        let qa = a.marginal_quantile(0, 0.4).unwrap();
        assert!((qa - (1.0 + 3.0 * q)).abs() < 1e-8);
    }

    #[test]
    fn log_density_integrates_for_gaussian() {
        let g = MixtureModel::gaussian(vec![0.0], vec![vec![4.0]]).unwrap();
        let expected = -0.5 * (2.0 * std::f64::consts::PI * 4.0).ln();
        assert!((g.log_density(&[0.0]) - expected).abs() < 1e-12);
    }
}
