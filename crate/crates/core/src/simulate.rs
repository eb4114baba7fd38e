//! Synthetic panels from a [`ModelSpec`].

use crate::error::{Error, Result};
use crate::model::{Latent, ModelSpec};
use crate::rng::{Slot, Streams};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

pub const FORMAT_VERSION: &str = concat!("skillform ", env!("CARGO_PKG_VERSION"));

/// True latent trajectories; absent for panels read back from CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct Latents {
    /// `[t][i]`, t = 0..=T.
    pub ln_theta: Vec<Vec<f64>>,
    /// `[t][i]`, t = 0..T.
    pub ln_invest: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentPanel {
    pub n: usize,
    pub periods: usize,
    pub seed: u64,
    pub spec_ref: String,
    pub ln_y: Vec<f64>,
    pub q: Vec<f64>,
    /// Skill measures `[t][m][i]`.
    pub skill: Vec<Vec<Vec<f64>>>,
    /// Investment measures `[t][m][i]`.
    pub invest: Vec<Vec<Vec<f64>>>,
    pub latent: Option<Latents>,
}

impl LatentPanel {
    pub fn measures(&self, v: Latent) -> &Vec<Vec<Vec<f64>>> {
        match v {
            Latent::Skill => &self.skill,
            Latent::Invest => &self.invest,
        }
    }

    /// Column names in export order.
    pub fn column_names(&self) -> Vec<String> {
        observable_names(
            &self.skill.iter().map(Vec::len).collect::<Vec<_>>(),
            &self.invest.iter().map(Vec::len).collect::<Vec<_>>(),
        )
    }

    /// Observables in export order, one vector per column.
    pub fn columns(&self) -> Vec<&[f64]> {
        let mut c: Vec<&[f64]> = vec![&self.ln_y, &self.q];
        for block in [&self.skill, &self.invest] {
            for t in block {
                for m in t {
                    c.push(m);
                }
            }
        }
        c
    }
}

fn observable_names(skill: &[usize], invest: &[usize]) -> Vec<String> {
    let mut v = vec!["lnY".to_string(), "Q".to_string()];
    for (t, m) in skill.iter().enumerate() {
        v.extend((0..*m).map(|j| format!("Z_skill_t{t}_m{j}")));
    }
    for (t, m) in invest.iter().enumerate() {
        v.extend((0..*m).map(|j| format!("Z_invest_t{t}_m{j}")));
    }
    v
}

/// Observable names for a spec, in panel column order.
pub fn spec_observable_names(spec: &ModelSpec) -> Vec<String> {
    let m = &spec.measurement;
    observable_names(
        &m.skill.lambda.iter().map(Vec::len).collect::<Vec<_>>(),
        &m.invest.lambda.iter().map(Vec::len).collect::<Vec<_>>(),
    )
}

/// Multiplicative change of measurement units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaleChange {
    pub s_theta: f64,
    pub s_invest: f64,
}

impl ScaleChange {
    pub fn new(s_theta: f64, s_invest: f64) -> Result<Self> {
        for (k, v) in [("s_theta", s_theta), ("s_invest", s_invest)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(k, "must be a positive finite number"));
            }
        }
        Ok(ScaleChange { s_theta, s_invest })
    }

    pub fn identity() -> Self {
        ScaleChange {
            s_theta: 1.0,
            s_invest: 1.0,
        }
    }
}

/// One individual's draws.
#[derive(Default)]
struct Row {
    ln_theta: Vec<f64>,
    ln_invest: Vec<f64>,
    ln_y: f64,
    q: f64,
    z: Vec<f64>,
}

/// Fills `raw` with individual `i`'s unit draws: one uniform, then standard
/// normals in the order they enter the model.
fn draw_raw(spec: &ModelSpec, streams: &Streams, i: u64, raw: &mut Vec<f64>) {
    let m = &spec.measurement;
    let count = 2
        + 2 * spec.periods
        + 1
        + m.skill.periods() * m.skill.measures()
        + m.invest.periods() * m.invest.measures();
    let mut rng = streams.get(i, Slot::Initial);
    raw.clear();
    raw.push(rng.random());
    raw.extend((0..count).map(|_| rng.sample::<f64, _>(StandardNormal)));
}

fn apply_raw(
    spec: &ModelSpec,
    sampler: &crate::mixture::MixtureSampler,
    raw: &[f64],
    row: &mut Row,
) -> Result<()> {
    let nt = spec.periods;
    let mut init = [0.0; 2];
    sampler.sample_with(raw[0], &raw[1..3], &mut init);
    let mut next_raw = raw[3..].iter().copied();
    let mut normal = move || next_raw.next().expect("raw draw count matches the spec");
    let (mut x, ln_y) = (init[0], init[1]);
    row.ln_theta.clear();
    row.ln_invest.clear();
    row.z.clear();
    row.ln_theta.push(x);
    let inv = &spec.investment;
    let shock = spec.tech.shock_sd();
    let kappa = spec.tech.kappa();
    for t in 0..nt {
        let eta_i = inv.eta_sd[t] * normal();
        let y = inv.b0[t] + inv.b1[t] * x + inv.b2[t] * ln_y + eta_i;
        let resid_sd = (shock[t] * shock[t] - (kappa[t] * inv.eta_sd[t]).powi(2))
            .max(0.0)
            .sqrt();
        let eta_th = kappa[t] * eta_i + resid_sd * normal();
        let next = spec.tech.mean_next(t, x, y) + eta_th;
        if !next.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite {
                what: "simulated log skill",
                period: t,
            });
        }
        row.ln_invest.push(y);
        row.ln_theta.push(next);
        x = next;
    }
    let a = &spec.anchor;
    row.ln_y = ln_y;
    row.q = a.rho0 + a.rho1 * x + a.eta_q_sd * normal();
    for (block, lat) in [
        (&spec.measurement.skill, &row.ln_theta),
        (&spec.measurement.invest, &row.ln_invest),
    ] {
        for t in 0..block.periods() {
            for m in 0..block.measures() {
                row.z.push(
                    block.mu[t][m] + block.lambda[t][m] * lat[t] + block.error_sd[t][m] * normal(),
                );
            }
        }
    }
    Ok(())
}

fn simulate_one(
    spec: &ModelSpec,
    sampler: &crate::mixture::MixtureSampler,
    streams: &Streams,
    i: u64,
) -> Result<Row> {
    let mut raw = Vec::new();
    draw_raw(spec, streams, i, &mut raw);
    let mut row = Row::default();
    apply_raw(spec, sampler, &raw, &mut row)?;
    Ok(row)
}

/// Simulates `n` individuals. Individual `i` uses its own random streams, so
/// the panel does not depend on the thread count.
pub fn simulate_panel(spec: &ModelSpec, n: usize, seed: u64) -> Result<LatentPanel> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let sampler = spec.init.sampler()?;
    let streams = Streams::new(seed);
    let rows: Vec<Row> = (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_one(spec, &sampler, &streams, i))
        .collect::<Result<_>>()?;

    let nt = spec.periods;
    let ms = spec.measurement.skill.measures();
    let mi = spec.measurement.invest.measures();
    let mut skill = vec![vec![Vec::with_capacity(n); ms]; nt + 1];
    let mut invest = vec![vec![Vec::with_capacity(n); mi]; nt];
    let mut ln_theta = vec![Vec::with_capacity(n); nt + 1];
    let mut ln_invest = vec![Vec::with_capacity(n); nt];
    let mut ln_y = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    for r in rows {
        ln_y.push(r.ln_y);
        q.push(r.q);
        for t in 0..=nt {
            ln_theta[t].push(r.ln_theta[t]);
        }
        for t in 0..nt {
            ln_invest[t].push(r.ln_invest[t]);
        }
        let mut k = 0;
        for t in skill.iter_mut() {
            for m in t.iter_mut() {
                m.push(r.z[k]);
                k += 1;
            }
        }
        for t in invest.iter_mut() {
            for m in t.iter_mut() {
                m.push(r.z[k]);
                k += 1;
            }
        }
    }
    Ok(LatentPanel {
        n,
        periods: nt,
        seed,
        spec_ref: spec.fingerprint(),
        ln_y,
        q,
        skill,
        invest,
        latent: Some(Latents {
            ln_theta,
            ln_invest,
        }),
    })
}

/// Multiplies every skill measure by `s_theta` and every investment measure by `s_invest`.
pub fn scale_measures(panel: &LatentPanel, change: ScaleChange) -> LatentPanel {
    let mut out = panel.clone();
    for (block, s) in [
        (&mut out.skill, change.s_theta),
        (&mut out.invest, change.s_invest),
    ] {
        for t in block.iter_mut() {
            for m in t.iter_mut() {
                m.iter_mut().for_each(|z| *z *= s);
            }
        }
    }
    out
}

/// The spec whose panels equal `scale_measures` of the original's.
pub fn scale_spec(spec: &ModelSpec, change: ScaleChange) -> ModelSpec {
    let mut out = spec.clone();
    for (b, s) in [
        (&mut out.measurement.skill, change.s_theta),
        (&mut out.measurement.invest, change.s_invest),
    ] {
        for x in [&mut b.mu, &mut b.lambda, &mut b.error_sd] {
            x.iter_mut().flatten().for_each(|v| *v *= s);
        }
    }
    out
}

/// Means and covariances of the observables (lnY, Q, measures).
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTable {
    pub names: Vec<String>,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
    /// Monte Carlo standard errors; `None` for exact moments.
    pub mean_se: Option<Vec<f64>>,
    pub cov_se: Option<Vec<Vec<f64>>>,
}

impl MomentTable {
    pub fn is_exact(&self) -> bool {
        self.mean_se.is_none()
    }

    /// Largest difference to `other` in units of the combined standard
    /// error, or the largest relative difference when both are exact.
    pub fn max_z(&self, other: &MomentTable) -> f64 {
        let se = |a: &Option<Vec<f64>>, i: usize| a.as_ref().map_or(0.0, |v| v[i]);
        let cse =
            |a: &Option<Vec<Vec<f64>>>, i: usize, j: usize| a.as_ref().map_or(0.0, |v| v[i][j]);
        let score = |d: f64, s: f64, scale: f64| {
            if s > 0.0 {
                d.abs() / s
            } else {
                d.abs() / (1.0 + scale.abs()) / 1e-12
            }
        };
        let mut worst: f64 = 0.0;
        for i in 0..self.mean.len() {
            let s = se(&self.mean_se, i).hypot(se(&other.mean_se, i));
            worst = worst.max(score(self.mean[i] - other.mean[i], s, self.mean[i]));
            for j in 0..=i {
                let s = cse(&self.cov_se, i, j).hypot(cse(&other.cov_se, i, j));
                worst = worst.max(score(self.cov[i][j] - other.cov[i][j], s, self.cov[i][j]));
            }
        }
        worst
    }
}

/// Draws used by [`population_moments`] when no closed form exists.
pub const MOMENT_DRAWS: usize = 10_000_000;
pub const MOMENT_SEED: u64 = 0x5eed_0f_40_3e47;

/// Exact moments for trans-log models without interaction, simulated otherwise.
pub fn population_moments(spec: &ModelSpec) -> Result<MomentTable> {
    match analytic_moments(spec)? {
        Some(m) => Ok(m),
        None => simulated_moments(spec, MOMENT_DRAWS, MOMENT_SEED),
    }
}

/// Closed-form moments; `None` unless the model is linear in logs.
pub fn analytic_moments(spec: &ModelSpec) -> Result<Option<MomentTable>> {
    spec.validate()?;
    let crate::model::Technology::TransLog(p) = &spec.tech else {
        return Ok(None);
    };
    if p.g3.iter().any(|g| *g != 0.0) {
        return Ok(None);
    }
    // Every quantity is an affine form in [1, lnθ0, lnY, independent unit shocks...].
    let nt = spec.periods;
    let m = &spec.measurement;
    let n_shocks = 2 * nt
        + 1
        + m.skill.periods() * m.skill.measures()
        + m.invest.periods() * m.invest.measures();
    let width = 3 + n_shocks;
    let unit = |k: usize| {
        let mut v = vec![0.0; width];
        v[k] = 1.0;
        v
    };
    let axpy =
        |a: f64, x: &[f64], y: &mut Vec<f64>| y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
    let mut shock = 3;
    let mut next_shock = || {
        shock += 1;
        shock - 1
    };
    let inv = &spec.investment;
    let mut theta = vec![unit(1)];
    let mut invest = Vec::new();
    let ln_y = unit(2);
    for t in 0..nt {
        let ki = next_shock();
        let ks = next_shock();
        let mut y = vec![0.0; width];
        y[0] = inv.b0[t];
        axpy(inv.b1[t], &theta[t], &mut y);
        axpy(inv.b2[t], &ln_y, &mut y);
        y[ki] = inv.eta_sd[t];
        let mut x = vec![0.0; width];
        x[0] = p.a[t];
        axpy(p.g1[t], &theta[t], &mut x);
        axpy(p.g2[t], &y, &mut x);
        x[ki] += p.kappa[t] * inv.eta_sd[t];
        x[ks] = (p.shock_sd[t].powi(2) - (p.kappa[t] * inv.eta_sd[t]).powi(2))
            .max(0.0)
            .sqrt();
        invest.push(y);
        theta.push(x);
    }
    let mut forms = vec![ln_y.clone()];
    let mut q = vec![0.0; width];
    q[0] = spec.anchor.rho0;
    axpy(spec.anchor.rho1, &theta[nt], &mut q);
    q[next_shock()] = spec.anchor.eta_q_sd;
    forms.push(q);
    for (block, lat) in [(&m.skill, &theta), (&m.invest, &invest)] {
        for t in 0..block.periods() {
            for j in 0..block.measures() {
                let mut z = vec![0.0; width];
                z[0] = block.mu[t][j];
                axpy(block.lambda[t][j], &lat[t], &mut z);
                z[next_shock()] = block.error_sd[t][j];
                forms.push(z);
            }
        }
    }
    let mu0 = spec.init.mean();
    let c0 = spec.init.cov();
    let mean: Vec<f64> = forms
        .iter()
        .map(|f| f[0] + f[1] * mu0[0] + f[2] * mu0[1])
        .collect();
    let k = forms.len();
    let mut cov = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let (a, b) = (&forms[i], &forms[j]);
            let mut v = a[1] * b[1] * c0[0][0]
                + (a[1] * b[2] + a[2] * b[1]) * c0[0][1]
                + a[2] * b[2] * c0[1][1];
            v += (3..width).map(|s| a[s] * b[s]).sum::<f64>();
            cov[i][j] = v;
            cov[j][i] = v;
        }
    }
    Ok(Some(MomentTable {
        names: spec_observable_names(spec),
        mean,
        cov,
        mean_se: None,
        cov_se: None,
    }))
}

const BATCHES: usize = 50;
const CHUNK: usize = 4096;

/// Running mean and lower-triangle co-moment, merged in a fixed order.
struct Accum {
    n: f64,
    mean: Vec<f64>,
    comoment: Vec<f64>,
}

/// Sums of deviations from the chunk's first row.
struct ChunkSums {
    n: usize,
    shift: Vec<f64>,
    sum: Vec<f64>,
    /// Row-major lower triangle of cross products.
    cross: Vec<f64>,
    d: Vec<f64>,
}

impl ChunkSums {
    fn new(k: usize) -> Self {
        ChunkSums {
            n: 0,
            shift: vec![0.0; k],
            sum: vec![0.0; k],
            cross: vec![0.0; k * (k + 1) / 2],
            d: vec![0.0; k],
        }
    }

    fn push(&mut self, x: &[f64]) {
        if self.n == 0 {
            self.shift.copy_from_slice(x);
        }
        self.n += 1;
        for ((d, xi), s) in self.d.iter_mut().zip(x).zip(&self.shift) {
            *d = xi - s;
        }
        for (s, d) in self.sum.iter_mut().zip(&self.d) {
            *s += d;
        }
        let mut start = 0;
        for i in 0..self.d.len() {
            let di = self.d[i];
            let row = &mut self.cross[start..start + i + 1];
            for (c, dj) in row.iter_mut().zip(&self.d[..=i]) {
                *c += di * dj;
            }
            start += i + 1;
        }
    }

    fn into_accum(self) -> Accum {
        let k = self.shift.len();
        let mut acc = Accum::new(k);
        if self.n == 0 {
            return acc;
        }
        let n = self.n as f64;
        acc.n = n;
        for i in 0..k {
            acc.mean[i] = self.shift[i] + self.sum[i] / n;
        }
        let mut idx = 0;
        for i in 0..k {
            for j in 0..=i {
                acc.comoment[i * k + j] = self.cross[idx] - self.sum[i] * self.sum[j] / n;
                idx += 1;
            }
        }
        acc
    }
}

impl Accum {
    fn new(k: usize) -> Self {
        Accum {
            n: 0.0,
            mean: vec![0.0; k],
            comoment: vec![0.0; k * k],
        }
    }

    fn merge(&mut self, o: &Accum) {
        if o.n == 0.0 {
            return;
        }
        let k = self.mean.len();
        let n = self.n + o.n;
        let d: Vec<f64> = o.mean.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let w = self.n * o.n / n;
        for i in 0..k {
            for j in 0..=i {
                self.comoment[i * k + j] += o.comoment[i * k + j] + w * d[i] * d[j];
            }
        }
        for i in 0..k {
            self.mean[i] += d[i] * o.n / n;
        }
        self.n = n;
    }
}

/// Moments from `n` simulated individuals with batch-means standard errors.
/// Works in blocks so memory stays bounded for large `n`.
pub fn simulated_moments(spec: &ModelSpec, n: usize, seed: u64) -> Result<MomentTable> {
    Ok(simulated_moments_many(&[spec], n, seed)?.remove(0))
}

/// Moment tables of several specs with the same shape, all driven by the same
/// unit draws. Differences between the tables then carry little simulation noise.
pub fn simulated_moments_many(
    specs: &[&ModelSpec],
    n: usize,
    seed: u64,
) -> Result<Vec<MomentTable>> {
    let Some(first) = specs.first() else {
        return Ok(Vec::new());
    };
    for spec in specs {
        spec.validate()?;
        let (a, b) = (&spec.measurement, &first.measurement);
        if spec.periods != first.periods
            || a.skill.measures() != b.skill.measures()
            || a.invest.measures() != b.invest.measures()
        {
            return Err(Error::invalid(
                "specs",
                "moment tables need specs of the same shape",
            ));
        }
    }
    if n < BATCHES * 2 {
        return Err(Error::invalid(
            "n",
            format!("need at least {} draws", BATCHES * 2),
        ));
    }
    let samplers = specs
        .iter()
        .map(|s| s.init.sampler())
        .collect::<Result<Vec<_>>>()?;
    let streams = Streams::new(seed);
    let names = spec_observable_names(first);
    let k = names.len();
    let per = n / BATCHES;
    // batch_stats[b][s] holds spec s's mean and covariance in batch b.
    let batch_stats: Vec<Vec<(Vec<f64>, Vec<f64>)>> = (0..BATCHES)
        .map(|b| -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
            let lo = b * per;
            let chunks: Vec<(usize, usize)> = (lo..lo + per)
                .step_by(CHUNK)
                .map(|c| (c, (lo + per - c).min(CHUNK)))
                .collect();
            let parts = chunks
                .into_par_iter()
                .map(|(c, len)| -> Result<Vec<Accum>> {
                    let mut acc: Vec<ChunkSums> = specs.iter().map(|_| ChunkSums::new(k)).collect();
                    let mut raw = Vec::new();
                    let mut row = Row::default();
                    let mut v = vec![0.0; k];
                    for i in c..c + len {
                        draw_raw(first, &streams, i as u64, &mut raw);
                        for ((spec, sampler), a) in specs.iter().zip(&samplers).zip(acc.iter_mut())
                        {
                            apply_raw(spec, sampler, &raw, &mut row)?;
                            v[0] = row.ln_y;
                            v[1] = row.q;
                            v[2..].copy_from_slice(&row.z);
                            a.push(&v);
                        }
                    }
                    Ok(acc
                        .into_iter()
                        .map(ChunkSums::into_accum)
                        .collect::<Vec<Accum>>())
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((0..specs.len())
                .map(|s| {
                    let mut acc = Accum::new(k);
                    for p in &parts {
                        acc.merge(&p[s]);
                    }
                    let cov = acc.comoment.iter().map(|c| c / per as f64).collect();
                    (acc.mean, cov)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok((0..specs.len())
        .map(|s| {
            let stats: Vec<&(Vec<f64>, Vec<f64>)> = batch_stats.iter().map(|b| &b[s]).collect();
            pool_batches(names.clone(), &stats)
        })
        .collect())
}

/// Pools per-batch means and covariances, with batch-means standard errors.
fn pool_batches(names: Vec<String>, batch_stats: &[&(Vec<f64>, Vec<f64>)]) -> MomentTable {
    let k = names.len();
    let bf = BATCHES as f64;
    let avg_se = |get: &dyn Fn(&(Vec<f64>, Vec<f64>)) -> f64| -> (f64, f64) {
        let vals: Vec<f64> = batch_stats.iter().map(|s| get(s)).collect();
        let m = vals.iter().sum::<f64>() / bf;
        let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (bf - 1.0);
        (m, (v / bf).sqrt())
    };
    let mut mean = vec![0.0; k];
    let mut mean_se = vec![0.0; k];
    let mut cov = vec![vec![0.0; k]; k];
    let mut cov_se = vec![vec![0.0; k]; k];
    for i in 0..k {
        (mean[i], mean_se[i]) = avg_se(&|s| s.0[i]);
    }
    for i in 0..k {
        for j in 0..=i {
            // Pooled covariance: within-batch average plus between-batch spread of means.
            let (w, se) = avg_se(&|s| s.1[i * k + j]);
            let between = batch_stats
                .iter()
                .map(|s| (s.0[i] - mean[i]) * (s.0[j] - mean[j]))
                .sum::<f64>()
                / bf;
            cov[i][j] = w + between;
            cov[j][i] = cov[i][j];
            cov_se[i][j] = se;
            cov_se[j][i] = se;
        }
    }
    MomentTable {
        names,
        mean,
        cov,
        mean_se: Some(mean_se),
        cov_se: Some(cov_se),
    }
}

/// Writes observables as CSV with a `#` header block.
pub fn write_panel_csv<W: Write>(panel: &LatentPanel, mut w: W) -> Result<()> {
    writeln!(w, "# version: {FORMAT_VERSION}")?;
    writeln!(w, "# seed: {}", panel.seed)?;
    writeln!(w, "# spec: {}", panel.spec_ref)?;
    writeln!(w, "# periods: {}", panel.periods)?;
    let mut cw = csv::Writer::from_writer(w);
    cw.write_record(panel.column_names())?;
    let cols = panel.columns();
    let mut rec = Vec::with_capacity(cols.len());
    for i in 0..panel.n {
        rec.clear();
        rec.extend(cols.iter().map(|c| format!("{:?}", c[i])));
        cw.write_record(&rec)?;
    }
    cw.flush()?;
    Ok(())
}

pub fn save_panel_csv(panel: &LatentPanel, path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_panel_csv(panel, f)
}

fn parse_header(line: &str, key: &str) -> Option<String> {
    line.strip_prefix("# ")?
        .strip_prefix(key)?
        .strip_prefix(": ")
        .map(str::to_string)
}

/// Reads a panel written by [`write_panel_csv`]; latents are not restored.
pub fn read_panel_csv<R: Read>(r: R) -> Result<LatentPanel> {
    let mut br = BufReader::new(r);
    let (mut seed, mut spec_ref, mut periods) = (0u64, String::new(), None);
    let header;
    loop {
        let mut line = String::new();
        if br.read_line(&mut line)? == 0 {
            return Err(Error::Format("panel CSV has no column header".into()));
        }
        let l = line.trim_end();
        if !l.starts_with('#') {
            header = line;
            break;
        }
        if let Some(v) = parse_header(l, "seed") {
            seed = v
                .parse()
                .map_err(|_| Error::Format(format!("bad seed `{v}`")))?;
        } else if let Some(v) = parse_header(l, "spec") {
            spec_ref = v;
        } else if let Some(v) = parse_header(l, "periods") {
            periods = Some(
                v.parse::<usize>()
                    .map_err(|_| Error::Format(format!("bad periods `{v}`")))?,
            );
        }
    }
    let periods =
        periods.ok_or_else(|| Error::Format("panel CSV lacks a `# periods:` line".into()))?;
    let names: Vec<String> = header.trim_end().split(',').map(str::to_string).collect();
    let count = |prefix: &str, t: usize| {
        names
            .iter()
            .filter(|n| n.starts_with(&format!("{prefix}_t{t}_m")))
            .count()
    };
    let ms = count("Z_skill", 0);
    let mi = if periods > 0 { count("Z_invest", 0) } else { 0 };
    if names.len() < 2 || names[0] != "lnY" || names[1] != "Q" {
        return Err(Error::Format(
            "panel CSV must start with columns lnY,Q".into(),
        ));
    }
    let expected = observable_names(&vec![ms; periods + 1], &vec![mi; periods]);
    if names != expected {
        return Err(Error::Format(format!(
            "panel CSV columns do not match the layout for {periods} periods"
        )));
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(br);
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::Format(format!(
                "row {} has {} fields, expected {}",
                line + 1,
                rec.len(),
                names.len()
            )));
        }
        for (c, f) in cols.iter_mut().zip(rec.iter()) {
            c.push(
                f.trim()
                    .parse()
                    .map_err(|_| Error::Format(format!("row {}: bad number `{f}`", line + 1)))?,
            );
        }
    }
    let n = cols[0].len();
    let mut it = cols.into_iter();
    let ln_y = it.next().unwrap_or_default();
    let q = it.next().unwrap_or_default();
    let skill = (0..=periods)
        .map(|_| (0..ms).map(|_| it.next().unwrap_or_default()).collect())
        .collect();
    let invest = (0..periods)
        .map(|_| (0..mi).map(|_| it.next().unwrap_or_default()).collect())
        .collect();
    Ok(LatentPanel {
        n,
        periods,
        seed,
        spec_ref,
        ln_y,
        q,
        skill,
        invest,
        latent: None,
    })
}

pub fn load_panel_csv(path: &Path) -> Result<LatentPanel> {
    read_panel_csv(std::fs::File::open(path)?)
}

const MAGIC: &[u8; 8] = b"SKFPANL1";

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_f64s(w: &mut impl Write, v: &[f64]) -> std::io::Result<()> {
    for x in v {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

/// Binary cache: magic, seed, fingerprint, shape, then little-endian doubles.
pub fn write_panel_bin<W: Write>(panel: &LatentPanel, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u64(&mut w, panel.seed)?;
    put_u64(&mut w, panel.spec_ref.len() as u64)?;
    w.write_all(panel.spec_ref.as_bytes())?;
    let ms = panel.skill.first().map_or(0, Vec::len);
    let mi = panel.invest.first().map_or(0, Vec::len);
    for v in [
        panel.n,
        panel.periods,
        ms,
        mi,
        panel.latent.is_some() as usize,
    ] {
        put_u64(&mut w, v as u64)?;
    }
    for c in panel.columns() {
        put_f64s(&mut w, c)?;
    }
    if let Some(l) = &panel.latent {
        for c in l.ln_theta.iter().chain(&l.ln_invest) {
            put_f64s(&mut w, c)?;
        }
    }
    Ok(())
}

pub fn read_panel_bin<R: Read>(r: R) -> Result<LatentPanel> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a panel cache file".into()));
    }
    let mut u = || -> Result<u64> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    };
    let seed = u()?;
    let len = u()? as usize;
    if len > 1 << 16 {
        return Err(Error::Format("corrupt fingerprint length".into()));
    }
    drop(u);
    let mut fp = vec![0u8; len];
    r.read_exact(&mut fp)?;
    let spec_ref =
        String::from_utf8(fp).map_err(|_| Error::Format("fingerprint is not UTF-8".into()))?;
    let mut shape = [0usize; 5];
    for s in shape.iter_mut() {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        *s = u64::from_le_bytes(b) as usize;
    }
    let [n, periods, ms, mi, has_latent] = shape;
    let mut col = || -> Result<Vec<f64>> {
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    };
    let ln_y = col()?;
    let q = col()?;
    let skill = (0..=periods)
        .map(|_| (0..ms).map(|_| col()).collect())
        .collect::<Result<_>>()?;
    let invest = (0..periods)
        .map(|_| (0..mi).map(|_| col()).collect())
        .collect::<Result<_>>()?;
    let latent = if has_latent == 1 {
        Some(Latents {
            ln_theta: (0..=periods).map(|_| col()).collect::<Result<_>>()?,
            ln_invest: (0..periods).map(|_| col()).collect::<Result<_>>()?,
        })
    } else {
        None
    };
    Ok(LatentPanel {
        n,
        periods,
        seed,
        spec_ref,
        ln_y,
        q,
        skill,
        invest,
        latent,
    })
}
