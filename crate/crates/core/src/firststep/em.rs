//! EM for a Gaussian mixture over the latent vector observed through a
//! linear factor layer with fixed loadings and error variances.
//!
//! The fit runs on standardized observables and standardized latents, so
//! a change of measurement units leaves the iterations unchanged.

use super::loadings::{Layout, LoadingEstimates};
use crate::error::{Error, Result};
use crate::mixture::MixtureModel;
use crate::model::Latent;
use crate::rng::{child_seed, Slot, Streams};
use crate::simulate::LatentPanel;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    pub restarts: usize,
    pub restart_iters: usize,
    /// Restarts are ranked on at most this many individuals.
    pub restart_sample: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
    /// Floor on error variances and latent covariance eigenvalues (standardized units).
    pub floor: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            restarts: 10,
            restart_iters: 25,
            restart_sample: 5000,
            max_iter: 1000,
            tol: 1e-8,
            seed: 0x00e3_1f17,
            floor: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MixtureFit {
    /// Mixture over (ln θ̃_0..T, ln Ĩ_0..T-1, ln Y).
    pub mixture: MixtureModel,
    /// Observed-data log-likelihood of the standardized observables.
    pub loglik: f64,
    pub ll_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub bic: f64,
    /// True if a covariance had to be lifted to the floor.
    pub regularized: bool,
}

/// Linear observation layer in standardized units: `x = c + A u + e`, `e ~ N(0, diag(psi))`.
struct Layer {
    c: DVector<f64>,
    a: DMatrix<f64>,
    psi: DVector<f64>,
    lat_loc: Vec<f64>,
    lat_scale: Vec<f64>,
}

fn layer(panel: &LatentPanel, est: &LoadingEstimates, floor: f64) -> Result<(Layer, DMatrix<f64>)> {
    let lay = Layout::of_panel(panel);
    if est.layout() != lay {
        return Err(Error::invalid("loadings", "shape does not match the panel"));
    }
    let cols = panel.columns();
    let p = cols.len();
    let n = panel.n;
    let d = lay.latent_dim();
    let loc: Vec<f64> = cols.iter().map(|c| crate::stats::mean(c)).collect();
    let scale: Vec<f64> = cols
        .iter()
        .map(|c| {
            let s = crate::stats::sd(c);
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let mut x = DMatrix::zeros(p, n);
    for (r, c) in cols.iter().enumerate() {
        for i in 0..n {
            x[(r, i)] = (c[i] - loc[r]) / scale[r];
        }
    }
    // Latents are standardized with the moments of their first measure.
    let mut lat_loc = vec![0.0; d];
    let mut lat_scale = vec![1.0; d];
    for v in [Latent::Skill, Latent::Invest] {
        for t in 0..lay.slots(v) {
            let k = lay.latent_index(v, t);
            let c0 = lay.col(v, t, 0);
            lat_loc[k] = loc[c0];
            lat_scale[k] = scale[c0];
        }
    }
    lat_loc[d - 1] = loc[Layout::LN_Y];
    lat_scale[d - 1] = scale[Layout::LN_Y];

    // Raw layer: obs = mu + lambda * latent + error.
    let mut c = DVector::zeros(p);
    let mut a = DMatrix::zeros(p, d);
    let mut psi = DVector::zeros(p);
    let mut set = |row: usize, mu: f64, lam: f64, k: usize, ev: f64| {
        c[row] = (mu + lam * lat_loc[k] - loc[row]) / scale[row];
        a[(row, k)] = lam * lat_scale[k] / scale[row];
        psi[row] = (ev / (scale[row] * scale[row])).max(floor);
    };
    set(Layout::LN_Y, 0.0, 1.0, d - 1, 0.0);
    set(Layout::Q, est.rho0, est.rho1, lay.periods, est.q_error_var);
    for v in [Latent::Skill, Latent::Invest] {
        let b = est.block(v);
        for t in 0..lay.slots(v) {
            for m in 0..lay.measures(v) {
                set(
                    lay.col(v, t, m),
                    b.mu[t][m],
                    b.lambda[t][m],
                    lay.latent_index(v, t),
                    b.error_var[t][m],
                );
            }
        }
    }
    Ok((
        Layer {
            c,
            a,
            psi,
            lat_loc,
            lat_scale,
        },
        x,
    ))
}

#[derive(Clone)]
struct Params {
    w: Vec<f64>,
    m: Vec<DVector<f64>>,
    s: Vec<DMatrix<f64>>,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

struct Step {
    ll: f64,
    next: Params,
    regularized: bool,
}

/// One EM step from `par`; the returned log-likelihood is that of `par`.
fn em_step(lay: &Layer, x: &DMatrix<f64>, par: &Params, floor: f64) -> Result<Step> {
    let (p, n) = x.shape();
    let k = par.w.len();
    let mut logp = DMatrix::zeros(k, n);
    let mut chols = Vec::with_capacity(k);
    for j in 0..k {
        let sigma = &lay.a * &par.s[j] * lay.a.transpose() + DMatrix::from_diagonal(&lay.psi);
        let ch = Cholesky::new(sigma).ok_or_else(|| {
            Error::Mixture(format!("component {j} covariance is not positive definite"))
        })?;
        let mean = &lay.c + &lay.a * &par.m[j];
        let mut z = x.clone();
        for mut col in z.column_iter_mut() {
            col -= &mean;
        }
        let l = ch.l();
        if !l.solve_lower_triangular_mut(&mut z) {
            return Err(Error::Mixture("singular covariance".into()));
        }
        let logdet = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let base = par.w[j].ln() - 0.5 * (logdet + p as f64 * LN_2PI);
        for (i, col) in z.column_iter().enumerate() {
            logp[(j, i)] = base - 0.5 * col.norm_squared();
        }
        chols.push(ch);
    }
    let mut ll = 0.0;
    for i in 0..n {
        let mx = (0..k)
            .map(|j| logp[(j, i)])
            .fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = (0..k).map(|j| (logp[(j, i)] - mx).exp()).sum();
        let lse = mx + s.ln();
        ll += lse;
        for j in 0..k {
            logp[(j, i)] = (logp[(j, i)] - lse).exp();
        }
    }
    let resp = logp;
    let mut next = par.clone();
    let mut regularized = false;
    for j in 0..k {
        let r = resp.row(j);
        let nk: f64 = r.sum();
        if !(nk > 1e-8 * n as f64) {
            return Err(Error::Mixture(format!("component {j} lost all its weight")));
        }
        let xbar = (x * r.transpose()) / nk;
        let mut xc = x.clone();
        for (i, mut col) in xc.column_iter_mut().enumerate() {
            col -= &xbar;
            col *= r[i].sqrt();
        }
        let ck = (&xc * xc.transpose()) / nk;
        // Gain G = S A' Σ^-1, obtained as (Σ^-1 A S)'.
        let gt = chols[j].solve(&(&lay.a * &par.s[j]));
        let g = gt.transpose();
        let resid = &xbar - (&lay.c + &lay.a * &par.m[j]);
        next.m[j] = &par.m[j] + &g * resid;
        let post = &par.s[j] - &g * &lay.a * &par.s[j];
        let mut s_new = post + &g * ck * g.transpose();
        s_new = (&s_new + s_new.transpose()) * 0.5;
        let eig = s_new.clone().symmetric_eigen();
        let min = eig.eigenvalues.min();
        if min < floor {
            s_new += DMatrix::identity(s_new.nrows(), s_new.nrows()) * (floor - min);
            regularized = true;
        }
        next.s[j] = s_new;
        next.w[j] = nk / n as f64;
    }
    Ok(Step {
        ll,
        next,
        regularized,
    })
}

/// Implied standardized latent per individual: average over measures of `(x - c) / a`.
fn composite(lay: &Layer, x: &DMatrix<f64>) -> DMatrix<f64> {
    let d = lay.a.ncols();
    let (p, n) = x.shape();
    let mut out = DMatrix::zeros(d, n);
    for k in 0..d {
        let rows: Vec<usize> = (0..p).filter(|r| lay.a[(*r, k)] != 0.0).collect();
        for i in 0..n {
            out[(k, i)] = rows
                .iter()
                .map(|&r| (x[(r, i)] - lay.c[r]) / lay.a[(r, k)])
                .sum::<f64>()
                / rows.len() as f64;
        }
    }
    out
}

/// k-means++ seeding and a few Lloyd passes on the composite scores.
fn kmeans_init(scores: &DMatrix<f64>, k: usize, seed: u64, floor: f64) -> Params {
    let (d, n) = scores.shape();
    let mut rng = Streams::new(seed).get(0, Slot::Misc);
    let dist2 = |i: usize, c: &DVector<f64>| (scores.column(i) - c).norm_squared();
    let mut centers: Vec<DVector<f64>> = vec![scores.column(rng.random_range(0..n)).into_owned()];
    while centers.len() < k {
        let dmin: Vec<f64> = (0..n)
            .map(|i| {
                centers
                    .iter()
                    .map(|c| dist2(i, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = dmin.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, v) in dmin.iter().enumerate() {
            if u < *v {
                pick = i;
                break;
            }
            u -= v;
        }
        centers.push(scores.column(pick).into_owned());
    }
    let mut assign = vec![0usize; n];
    for _ in 0..10 {
        for (i, a) in assign.iter_mut().enumerate() {
            *a = (0..k)
                .min_by(|&x, &y| dist2(i, &centers[x]).total_cmp(&dist2(i, &centers[y])))
                .unwrap_or(0);
        }
        for (j, c) in centers.iter_mut().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&i| assign[i] == j).collect();
            if !members.is_empty() {
                *c = members
                    .iter()
                    .map(|&i| scores.column(i).into_owned())
                    .fold(DVector::zeros(d), |a, b| a + b)
                    / members.len() as f64;
            }
        }
    }
    let mut par = Params {
        w: vec![0.0; k],
        m: centers,
        s: vec![DMatrix::identity(d, d); k],
    };
    for j in 0..k {
        let members: Vec<usize> = (0..n).filter(|&i| assign[i] == j).collect();
        par.w[j] = (members.len().max(1)) as f64 / n as f64;
        if members.len() > d {
            let mut s = DMatrix::zeros(d, d);
            for &i in &members {
                let e = scores.column(i) - &par.m[j];
                s += &e * e.transpose();
            }
            s /= members.len() as f64;
            par.s[j] = s + DMatrix::identity(d, d) * (1e-3 + floor);
        }
    }
    let tw: f64 = par.w.iter().sum();
    par.w.iter_mut().for_each(|w| *w /= tw);
    par
}

fn subsample(x: &DMatrix<f64>, max: usize) -> DMatrix<f64> {
    let n = x.ncols();
    if n <= max {
        return x.clone();
    }
    let step = n as f64 / max as f64;
    let idx: Vec<usize> = (0..max).map(|i| (i as f64 * step) as usize).collect();
    x.select_columns(&idx)
}

/// Maximum-likelihood mixture for the latent vector.
pub fn fit_latent_mixture(
    panel: &LatentPanel,
    est: &LoadingEstimates,
    k: usize,
    cfg: &EmConfig,
) -> Result<MixtureFit> {
    if k == 0 {
        return Err(Error::invalid("em.k", "must be at least 1"));
    }
    let (lay, x) = layer(panel, est, cfg.floor)?;
    let d = lay.a.ncols();
    if panel.n < k * (d + 1) {
        return Err(Error::Mixture(format!(
            "{k} components need more than {} individuals",
            panel.n
        )));
    }
    let scores = composite(&lay, &x);
    let small = subsample(&x, cfg.restart_sample);
    let small_scores = subsample(&scores, cfg.restart_sample);

    let restarts = if k == 1 { 1 } else { cfg.restarts.max(1) };
    let mut best: Option<(f64, Params)> = None;
    for r in 0..restarts {
        let mut par = kmeans_init(&small_scores, k, child_seed(cfg.seed, r as u64), cfg.floor);
        let mut ll = f64::NEG_INFINITY;
        let mut ok = true;
        for _ in 0..cfg.restart_iters {
            match em_step(&lay, &small, &par, cfg.floor) {
                Ok(s) => {
                    ll = s.ll;
                    par = s.next;
                }
                Err(e) => {
                    log::debug!("restart {r} abandoned: {e}");
                    ok = false;
                    break;
                }
            }
        }
        if ok && best.as_ref().is_none_or(|(b, _)| ll > *b) {
            best = Some((ll, par));
        }
    }
    let (_, mut par) = best.ok_or_else(|| Error::Mixture("every EM restart failed".into()))?;

    let mut trace = Vec::new();
    let mut converged = false;
    let mut regularized = false;
    let mut iterations = 0;
    for it in 0..cfg.max_iter {
        let step = em_step(&lay, &x, &par, cfg.floor)?;
        iterations = it + 1;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if step.ll < prev - 1e-9 * prev.abs().max(1.0) && !regularized {
                return Err(Error::Mixture(format!(
                    "log-likelihood decreased at iteration {it}: {prev} -> {}",
                    step.ll
                )));
            }
            if ((step.ll - prev) / prev.abs().max(1.0)).abs() < cfg.tol {
                trace.push(step.ll);
                converged = true;
                break;
            }
        }
        trace.push(step.ll);
        if step.regularized {
            log::warn!("latent covariance lifted to the floor at iteration {it}");
        }
        regularized |= step.regularized;
        par = step.next;
    }
    let loglik = *trace.last().unwrap_or(&f64::NAN);
    let n_par = (k - 1) + k * (d + d * (d + 1) / 2);
    let bic = -2.0 * loglik + n_par as f64 * (panel.n as f64).ln();

    // Back to tilde units.
    let means = par
        .m
        .iter()
        .map(|m| {
            (0..d)
                .map(|i| lay.lat_loc[i] + lay.lat_scale[i] * m[i])
                .collect()
        })
        .collect();
    let covs = par
        .s
        .iter()
        .map(|s| {
            (0..d)
                .map(|i| {
                    (0..d)
                        .map(|j| lay.lat_scale[i] * lay.lat_scale[j] * s[(i, j)])
                        .collect()
                })
                .collect()
        })
        .collect();
    let mixture = MixtureModel::new(par.w.clone(), means, covs)?;
    Ok(MixtureFit {
        mixture,
        loglik,
        ll_trace: trace,
        iterations,
        converged,
        bic,
        regularized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::firststep::estimate_loadings;
    use crate::model::fixtures;
    use crate::simulate::{scale_measures, simulate_panel, ScaleChange};

    fn quick() -> EmConfig {
        EmConfig {
            restarts: 4,
            max_iter: 300,
            ..EmConfig::default()
        }
    }

    #[test]
    fn single_component_noiseless_is_sample_moments() {
        let mut spec = fixtures::mc_default();
        for b in [&mut spec.measurement.skill, &mut spec.measurement.invest] {
            for t in 0..b.periods() {
                b.error_sd[t] = vec![0.0; 3];
            }
        }
        spec.anchor.eta_q_sd = 0.0;
        let p = simulate_panel(&spec, 400, 2).unwrap();
        let est = estimate_loadings(&p).unwrap();
        let fit = fit_latent_mixture(&p, &est, 1, &quick()).unwrap();
        let l = p.latent.as_ref().unwrap();
        let th0 = &l.ln_theta[0];
        let m = fit.mixture.mean();
        assert!((m[0] - crate::stats::mean(th0)).abs() < 1e-6);
        assert!(
            (fit.mixture.cov()[0][0] - crate::stats::var(th0)).abs()
                < 1e-4 * crate::stats::var(th0)
        );
        assert!((m[5] - crate::stats::mean(&p.ln_y)).abs() < 1e-6);
    }

    #[test]
    fn recovers_two_components_and_is_monotone() {
        let spec = fixtures::mc_default();
        let p = simulate_panel(&spec, 20_000, 7).unwrap();
        let est = estimate_loadings(&p).unwrap();
        let fit = fit_latent_mixture(&p, &est, 2, &quick()).unwrap();
        assert!(fit
            .ll_trace
            .windows(2)
            .all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));
        let mix = &fit.mixture;
        // Period-0 marginal of the latent law is the known initial mixture.
        let lo = if mix.means[0][0] < mix.means[1][0] {
            0
        } else {
            1
        };
        assert!((mix.weights[lo] - 0.5).abs() < 0.02, "{:?}", mix.weights);
        assert!((mix.means[lo][0] + 4.0).abs() < 0.1, "{:?}", mix.means);
        assert!((mix.means[lo][5] + 2.0).abs() < 0.1);
        assert!((mix.means[1 - lo][0] - 2.0).abs() < 0.1);
    }

    #[test]
    fn rescaled_measures_give_scaled_fit() {
        let spec = fixtures::mc_default();
        let p = simulate_panel(&spec, 2000, 11).unwrap();
        let cfg = quick();
        let fit = |s: f64| {
            let q = scale_measures(&p, ScaleChange::new(s, 1.0).unwrap());
            fit_latent_mixture(&q, &estimate_loadings(&q).unwrap(), 2, &cfg).unwrap()
        };
        let (a, b) = (fit(1.0), fit(2.0 / 3.0));
        let ka = if a.mixture.means[0][0] < a.mixture.means[1][0] {
            0
        } else {
            1
        };
        let kb = if b.mixture.means[0][0] < b.mixture.means[1][0] {
            0
        } else {
            1
        };
        for t in 0..3 {
            let (x, y) = (a.mixture.means[ka][t], b.mixture.means[kb][t]);
            assert!(
                (y - 2.0 / 3.0 * x).abs() < 1e-6 * (1.0 + x.abs()),
                "{t}: {x} {y}"
            );
        }
        assert!((a.mixture.weights[ka] - b.mixture.weights[kb]).abs() < 1e-6);
    }
}
