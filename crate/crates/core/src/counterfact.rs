//! Policy functionals that do not depend on how skills are scaled: rank
//! features, anchored outcome probabilities, elasticities, income splits and
//! income-distribution counterfactuals.

use crate::error::{Error, Result};
use crate::firststep::LatentDraws;
use crate::mixture::MixtureModel;
use crate::model::{Ces, ModelSpec};
use crate::rng::{Slot, Streams};
use crate::simulate::simulate_panel;
use crate::stats::{halton, mean, norm_cdf, norm_quantile, sd, sorted_cdf, sorted_quantile};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Var {
    Skill(usize),
    Invest(usize),
    Income,
}

/// Distribution of the latent log-vector (θ_0..T, I_0..T-1, Y) in the units of some spec.
pub trait LatentLaw: Sync {
    fn periods(&self) -> usize;
    fn cdf(&self, v: Var, x: f64) -> f64;
    fn quantile(&self, v: Var, p: f64) -> Result<f64>;
    /// `n` draws of `(ln θ_0, ln Y)`; draw `i` uses its own stream.
    fn initial(&self, n: usize, seed: u64) -> Result<Vec<[f64; 2]>>;
}

fn index(periods: usize, v: Var) -> usize {
    match v {
        Var::Skill(t) => t,
        Var::Invest(t) => periods + 1 + t,
        Var::Income => 2 * periods + 1,
    }
}

fn check_level(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "quantile level",
            format!("{p} is outside (0, 1)"),
        ))
    }
}

fn sample_initial(init: &MixtureModel, n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
    let sampler = init.sampler()?;
    let streams = Streams::new(seed);
    Ok((0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut v = [0.0; 2];
            sampler.sample_into(&mut streams.get(i, Slot::Initial), &mut v);
            v
        })
        .collect())
}

/// Gaussian-mixture law, as produced by the first step.
#[derive(Clone, Debug)]
pub struct MixtureLaw {
    mix: MixtureModel,
    periods: usize,
    init: MixtureModel,
}

impl MixtureLaw {
    pub fn new(mix: MixtureModel) -> Result<Self> {
        mix.validate("latent law")?;
        let d = mix.dim();
        if d < 4 || d % 2 != 0 {
            return Err(Error::invalid("latent law", "expected 2T+2 coordinates"));
        }
        let init = mix.select(&[0, d - 1]);
        Ok(MixtureLaw {
            periods: (d - 2) / 2,
            init,
            mix,
        })
    }

    pub fn mixture(&self) -> &MixtureModel {
        &self.mix
    }
}

impl LatentLaw for MixtureLaw {
    fn periods(&self) -> usize {
        self.periods
    }
    fn cdf(&self, v: Var, x: f64) -> f64 {
        self.mix.marginal_cdf(index(self.periods, v), x)
    }
    fn quantile(&self, v: Var, p: f64) -> Result<f64> {
        check_level(p)?;
        self.mix.marginal_quantile(index(self.periods, v), p)
    }
    fn initial(&self, n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
        sample_initial(&self.init, n, seed)
    }
}

/// Empirical marginals from a large simulation, with the initial law kept exact.
#[derive(Clone, Debug)]
pub struct EmpiricalLaw {
    sorted: Vec<Vec<f64>>,
    periods: usize,
    init: MixtureModel,
}

impl EmpiricalLaw {
    pub fn from_draws(draws: &LatentDraws, init: MixtureModel) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::invalid("draws", "empty"));
        }
        let mut sorted: Vec<Vec<f64>> = draws
            .ln_theta
            .iter()
            .chain(&draws.ln_invest)
            .chain(std::iter::once(&draws.ln_y))
            .cloned()
            .collect();
        for s in &mut sorted {
            s.sort_by(f64::total_cmp);
        }
        Ok(EmpiricalLaw {
            sorted,
            periods: draws.periods(),
            init,
        })
    }

    /// Simulates `n` individuals from `spec`.
    pub fn from_spec(spec: &ModelSpec, n: usize, seed: u64) -> Result<Self> {
        let panel = simulate_panel(spec, n, seed)?;
        let draws = LatentDraws::from_panel(&panel).expect("simulated panels keep latents");
        Self::from_draws(&draws, spec.init.clone())
    }

    pub fn len(&self) -> usize {
        self.sorted[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted[0].is_empty()
    }
}

impl LatentLaw for EmpiricalLaw {
    fn periods(&self) -> usize {
        self.periods
    }
    fn cdf(&self, v: Var, x: f64) -> f64 {
        sorted_cdf(&self.sorted[index(self.periods, v)], x)
    }
    fn quantile(&self, v: Var, p: f64) -> Result<f64> {
        check_level(p)?;
        Ok(sorted_quantile(&self.sorted[index(self.periods, v)], p))
    }
    fn initial(&self, n: usize, seed: u64) -> Result<Vec<[f64; 2]>> {
        sample_initial(&self.init, n, seed)
    }
}

fn check_periods(spec: &ModelSpec, law: &dyn LatentLaw) -> Result<()> {
    if spec.periods != law.periods() {
        return Err(Error::invalid(
            "latent law",
            format!("{} periods, spec has {}", law.periods(), spec.periods),
        ));
    }
    Ok(())
}

/// Sd of the part of the skill shock not explained by the investment shock.
fn own_shock_sd(spec: &ModelSpec, t: usize) -> f64 {
    let s = spec.tech.shock_sd()[t];
    let k = spec.tech.kappa()[t] * spec.investment.eta_sd[t];
    (s * s - k * k).max(0.0).sqrt()
}

/// Log investment from the investment equation.
fn invest_eq(spec: &ModelSpec, t: usize, ln_theta: f64, ln_y: f64, eta_i: f64) -> f64 {
    let b = &spec.investment;
    b.b0[t] + b.b1[t] * ln_theta + b.b2[t] * ln_y + eta_i
}

/// Point value with an optional Monte Carlo standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub se: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankMode {
    /// Skill, investment and shock all at given quantiles.
    FixedQuantiles,
    /// Shock integrated out.
    AverageOverShocks,
    /// Current skill integrated out.
    AverageOverSkills,
    /// Investment set through the investment equation at an income quantile.
    IncomeChannel,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankQuery {
    pub period: usize,
    pub skill: f64,
    /// Investment quantile, or income quantile under [`RankMode::IncomeChannel`].
    pub input: f64,
    pub shock: f64,
    /// Investment-shock quantile; used by the income channel only.
    pub invest_shock: f64,
    pub mode: RankMode,
}

impl RankQuery {
    pub fn fixed(period: usize, skill: f64, input: f64, shock: f64) -> Self {
        RankQuery {
            period,
            skill,
            input,
            shock,
            invest_shock: 0.5,
            mode: RankMode::FixedQuantiles,
        }
    }
}

/// Number of quasi-random points for the averaging modes.
pub const QMC_POINTS: usize = 100_000;

fn qmc_mean<F: Fn(f64) -> f64 + Sync>(points: usize, f: F) -> Estimate {
    let vals: Vec<f64> = (0..points as u64)
        .into_par_iter()
        .map(|i| f(halton(i, 1)[0]))
        .collect();
    Estimate {
        value: mean(&vals),
        se: Some(sd(&vals) / (points as f64).sqrt()),
    }
}

/// Position of next-period skill in its own distribution for quantile-specified inputs.
pub fn rank_feature(spec: &ModelSpec, law: &dyn LatentLaw, q: &RankQuery) -> Result<Estimate> {
    check_periods(spec, law)?;
    let t = q.period;
    if t >= spec.periods {
        return Err(Error::invalid(
            "query.period",
            format!("must be below {}", spec.periods),
        ));
    }
    let tech = &spec.tech;
    let shock_sd = tech.shock_sd()[t];
    let next = Var::Skill(t + 1);
    let fixed = |v: f64| Estimate { value: v, se: None };
    match q.mode {
        RankMode::FixedQuantiles => {
            let x = law.quantile(Var::Skill(t), q.skill)?;
            let y = law.quantile(Var::Invest(t), q.input)?;
            check_level(q.shock)?;
            let c = tech.mean_next(t, x, y) + norm_quantile(q.shock) * shock_sd;
            Ok(fixed(law.cdf(next, c)))
        }
        RankMode::AverageOverShocks => {
            let x = law.quantile(Var::Skill(t), q.skill)?;
            let y = law.quantile(Var::Invest(t), q.input)?;
            let m = tech.mean_next(t, x, y);
            Ok(qmc_mean(QMC_POINTS, |u| {
                law.cdf(next, m + norm_quantile(u) * shock_sd)
            }))
        }
        RankMode::AverageOverSkills => {
            let y = law.quantile(Var::Invest(t), q.input)?;
            check_level(q.shock)?;
            let e = norm_quantile(q.shock) * shock_sd;
            // Quantiles are computed up front so errors surface before averaging.
            let xs: Vec<f64> = (0..QMC_POINTS as u64)
                .into_par_iter()
                .map(|i| law.quantile(Var::Skill(t), halton(i, 1)[0]))
                .collect::<Result<_>>()?;
            let vals: Vec<f64> = xs
                .par_iter()
                .map(|&x| law.cdf(next, tech.mean_next(t, x, y) + e))
                .collect();
            Ok(Estimate {
                value: mean(&vals),
                se: Some(sd(&vals) / (vals.len() as f64).sqrt()),
            })
        }
        RankMode::IncomeChannel => {
            let x = law.quantile(Var::Skill(t), q.skill)?;
            let ln_y = law.quantile(Var::Income, q.input)?;
            check_level(q.shock)?;
            check_level(q.invest_shock)?;
            let eta_i = norm_quantile(q.invest_shock) * spec.investment.eta_sd[t];
            let y = invest_eq(spec, t, x, ln_y, eta_i);
            let c = tech.mean_next(t, x, y)
                + tech.kappa()[t] * eta_i
                + norm_quantile(q.shock) * own_shock_sd(spec, t);
            Ok(fixed(law.cdf(next, c)))
        }
    }
}

/// Per-period inputs after the first period of a rank path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathStep {
    pub invest: f64,
    pub shock: f64,
}

/// Ranks are kept this far inside (0, 1) when fed forward.
const RANK_EDGE: f64 = 1e-12;

/// Feeds each period's output rank forward as the next period's skill quantile.
pub fn recursive_rank_path(
    spec: &ModelSpec,
    law: &dyn LatentLaw,
    initial: f64,
    steps: &[PathStep],
) -> Result<Vec<f64>> {
    let mut alpha = initial;
    let mut out = Vec::with_capacity(steps.len());
    for (t, s) in steps.iter().enumerate() {
        let r = rank_feature(spec, law, &RankQuery::fixed(t, alpha, s.invest, s.shock))?.value;
        out.push(r);
        alpha = r.clamp(RANK_EDGE, 1.0 - RANK_EDGE);
    }
    Ok(out)
}

/// How investment is pinned down along a conditioning path.
#[derive(Clone, Debug, PartialEq)]
pub enum Inputs {
    /// Investment quantile per period.
    Invest(Vec<f64>),
    /// Income quantile per period with investment-shock quantiles.
    Income {
        income: Vec<f64>,
        invest_shock: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning {
    pub start: usize,
    pub skill: f64,
    pub inputs: Inputs,
    /// Skill-shock quantile per period from `start`.
    pub shocks: Vec<f64>,
}

/// Final log skill along a deterministic conditioning path.
pub fn conditioned_final_skill(
    spec: &ModelSpec,
    law: &dyn LatentLaw,
    c: &Conditioning,
) -> Result<f64> {
    check_periods(spec, law)?;
    let nt = spec.periods;
    if c.start > nt {
        return Err(Error::invalid(
            "conditioning.start",
            format!("must be at most {nt}"),
        ));
    }
    let steps = nt - c.start;
    let n_inputs = match &c.inputs {
        Inputs::Invest(a) => a.len(),
        Inputs::Income {
            income,
            invest_shock,
        } => {
            if income.len() != invest_shock.len() {
                return Err(Error::invalid(
                    "conditioning.inputs",
                    "income and shock paths differ in length",
                ));
            }
            income.len()
        }
    };
    if n_inputs != steps || c.shocks.len() != steps {
        return Err(Error::invalid(
            "conditioning",
            format!("expected {steps} periods of inputs and shocks"),
        ));
    }
    let mut x = law.quantile(Var::Skill(c.start), c.skill)?;
    for k in 0..steps {
        let t = c.start + k;
        check_level(c.shocks[k])?;
        let z = norm_quantile(c.shocks[k]);
        x = match &c.inputs {
            Inputs::Invest(a) => {
                let y = law.quantile(Var::Invest(t), a[k])?;
                spec.tech.mean_next(t, x, y) + z * spec.tech.shock_sd()[t]
            }
            Inputs::Income {
                income,
                invest_shock,
            } => {
                check_level(invest_shock[k])?;
                let eta_i = norm_quantile(invest_shock[k]) * spec.investment.eta_sd[t];
                let ln_y = law.quantile(Var::Income, income[k])?;
                let y = invest_eq(spec, t, x, ln_y, eta_i);
                spec.tech.mean_next(t, x, y)
                    + spec.tech.kappa()[t] * eta_i
                    + z * own_shock_sd(spec, t)
            }
        };
    }
    Ok(x)
}

/// `P(Q ≤ q)` given the conditioning path.
pub fn adult_outcome_cdf(
    spec: &ModelSpec,
    law: &dyn LatentLaw,
    c: &Conditioning,
    q: f64,
) -> Result<f64> {
    let x = conditioned_final_skill(spec, law, c)?;
    let a = &spec.anchor;
    let gap = q - a.rho0 - a.rho1 * x;
    Ok(if a.eta_q_sd > 0.0 {
        norm_cdf(gap / a.eta_q_sd)
    } else if gap >= 0.0 {
        1.0
    } else {
        0.0
    })
}

/// `(∂ln θ'/∂ln θ, ∂ln θ'/∂ln I)` for CES period `t`.
pub fn ces_log_derivatives(tech: &Ces, t: usize, ln_theta: f64, ln_invest: f64) -> (f64, f64) {
    tech.log_derivatives(t, ln_theta, ln_invest)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Skill,
    Invest,
}

/// Log-derivative along quantiles of one input with the other at its median.
pub fn derivative_profile(
    spec: &ModelSpec,
    law: &dyn LatentLaw,
    t: usize,
    axis: Axis,
    grid: &[f64],
) -> Result<Vec<f64>> {
    check_periods(spec, law)?;
    if t >= spec.periods {
        return Err(Error::invalid(
            "period",
            format!("must be below {}", spec.periods),
        ));
    }
    grid.iter()
        .map(|&a| {
            Ok(match axis {
                Axis::Skill => {
                    let x = law.quantile(Var::Skill(t), a)?;
                    spec.tech
                        .log_derivatives(t, x, law.quantile(Var::Invest(t), 0.5)?)
                        .0
                }
                Axis::Invest => {
                    let y = law.quantile(Var::Invest(t), a)?;
                    spec.tech
                        .log_derivatives(t, law.quantile(Var::Skill(t), 0.5)?, y)
                        .1
                }
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShareObjective {
    /// Mean change of final log skill in baseline sds.
    LogSkillStd,
    /// Same in skill levels; depends on the units of skill.
    LevelStd,
    /// Final rank of one individual at the given skill quantile, unobservables at medians,
    /// whose per-period income at the given quantile is pooled and split.
    RankAtQuantile { skill: f64, income: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShareConfig {
    /// Total extra income in sds of income levels.
    pub boost: f64,
    /// Shares of the total going to period 0.
    pub grid: Vec<f64>,
    pub paths: usize,
    pub seed: u64,
}

impl Default for ShareConfig {
    fn default() -> Self {
        ShareConfig {
            boost: 1.0,
            grid: (0..=20).map(|i| i as f64 / 20.0).collect(),
            paths: 100_000,
            seed: 0x5348_4152,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShareCurve {
    pub grid: Vec<f64>,
    pub value: Vec<f64>,
    pub se: Vec<Option<f64>>,
    /// Share with the highest value (first on ties).
    pub argmax: f64,
}

fn argmax(grid: &[f64], value: &[f64]) -> f64 {
    let mut best = 0;
    for i in 1..value.len() {
        if value[i] > value[best] {
            best = i;
        }
    }
    grid[best]
}

/// Final log skill for one path given per-period log incomes and shocks.
fn forward(spec: &ModelSpec, x0: f64, ln_y: impl Fn(usize) -> f64, shocks: &[[f64; 2]]) -> f64 {
    let mut x = x0;
    for t in 0..spec.periods {
        let [eta_i, own] = shocks[t];
        let y = invest_eq(spec, t, x, ln_y(t), eta_i);
        x = spec.tech.mean_next(t, x, y) + spec.tech.kappa()[t] * eta_i + own;
    }
    x
}

/// Shock draws per path, shared by every arm.
fn path_shocks(spec: &ModelSpec, n: usize, seed: u64) -> Vec<Vec<[f64; 2]>> {
    let streams = Streams::new(seed);
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut r = streams.get(i, Slot::Counterfactual);
            (0..spec.periods)
                .map(|t| {
                    let a: f64 = r.sample(StandardNormal);
                    let b: f64 = r.sample(StandardNormal);
                    [a * spec.investment.eta_sd[t], b * own_shock_sd(spec, t)]
                })
                .collect()
        })
        .collect()
}

/// Value of splitting an income increase between periods 0 and 1, over a grid of shares.
pub fn optimal_income_share(
    spec: &ModelSpec,
    law: &dyn LatentLaw,
    objective: ShareObjective,
    cfg: &ShareConfig,
) -> Result<ShareCurve> {
    check_periods(spec, law)?;
    if cfg.grid.is_empty() || cfg.grid.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::invalid("shares.grid", "shares must lie in [0, 1]"));
    }
    if !(cfg.boost >= 0.0) {
        return Err(Error::invalid("shares.boost", "must be non-negative"));
    }
    if spec.periods < 2 {
        return Err(Error::invalid(
            "periods",
            "splitting income needs two investment periods",
        ));
    }
    match objective {
        ShareObjective::RankAtQuantile { skill, income } => {
            let x0 = law.quantile(Var::Skill(0), skill)?;
            let level = law.quantile(Var::Income, income)?.exp();
            let zero = vec![[0.0, 0.0]; spec.periods];
            let value: Vec<f64> = cfg
                .grid
                .iter()
                .map(|&w| {
                    let split = [2.0 * w * level, 2.0 * (1.0 - w) * level];
                    let x = forward(
                        spec,
                        x0,
                        |t| split.get(t).map_or(level.ln(), |v| v.ln()),
                        &zero,
                    );
                    if x.is_nan() {
                        0.0
                    } else {
                        law.cdf(Var::Skill(spec.periods), x)
                    }
                })
                .collect();
            Ok(ShareCurve {
                argmax: argmax(&cfg.grid, &value),
                se: vec![None; value.len()],
                grid: cfg.grid.clone(),
                value,
            })
        }
        ShareObjective::LogSkillStd | ShareObjective::LevelStd => {
            let init = law.initial(cfg.paths, cfg.seed)?;
            let shocks = path_shocks(spec, cfg.paths, cfg.seed);
            let levels: Vec<f64> = init.iter().map(|v| v[1].exp()).collect();
            let extra = cfg.boost * sd(&levels);
            let f = |x: f64| match objective {
                ShareObjective::LevelStd => x.exp(),
                _ => x,
            };
            let run = |w: Option<f64>| -> Vec<f64> {
                init.par_iter()
                    .zip(&shocks)
                    .map(|(v, s)| {
                        let y = v[1].exp();
                        let ln_y = |t: usize| match (w, t) {
                            (Some(w), 0) => (y + w * extra).ln(),
                            (Some(w), 1) => (y + (1.0 - w) * extra).ln(),
                            _ => v[1],
                        };
                        f(forward(spec, v[0], ln_y, s))
                    })
                    .collect()
            };
            let base = run(None);
            let (m0, s0) = (mean(&base), sd(&base));
            let mut value = Vec::with_capacity(cfg.grid.len());
            let mut se = Vec::with_capacity(cfg.grid.len());
            for &w in &cfg.grid {
                let arm = run(Some(w));
                let diff: Vec<f64> = arm.iter().zip(&base).map(|(a, b)| a - b).collect();
                value.push((mean(&arm) - m0) / s0);
                se.push(Some(sd(&diff) / s0 / (diff.len() as f64).sqrt()));
            }
            Ok(ShareCurve {
                argmax: argmax(&cfg.grid, &value),
                grid: cfg.grid.clone(),
                value,
                se,
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Null,
    BoostPeriod0,
    BoostPeriod1,
    MedianForAll,
    BoostLowSkillLowIncome,
}

impl Scenario {
    pub const ALL: [Scenario; 5] = [
        Scenario::Null,
        Scenario::BoostPeriod0,
        Scenario::BoostPeriod1,
        Scenario::MedianForAll,
        Scenario::BoostLowSkillLowIncome,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Null => "null",
            Scenario::BoostPeriod0 => "boost_period0",
            Scenario::BoostPeriod1 => "boost_period1",
            Scenario::MedianForAll => "median_for_all",
            Scenario::BoostLowSkillLowIncome => "boost_low_skill_low_income",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IncomeConfig {
    pub individuals: usize,
    /// Boost in sds of log income.
    pub boost_sd: f64,
    /// Apply the boost to income levels instead of logs.
    pub level_scale: bool,
    pub seed: u64,
}

impl Default for IncomeConfig {
    fn default() -> Self {
        IncomeConfig {
            individuals: 100_000,
            boost_sd: 2.0,
            level_scale: false,
            seed: 0x494e_434d,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IncomeOutcome {
    /// Each individual's final rank under the baseline.
    pub baseline_rank: Vec<f64>,
    /// The same individual's final skill placed in the baseline distribution.
    pub scenario_rank: Vec<f64>,
    /// First final-period skill measure without error, baseline and scenario.
    pub baseline_measure: Vec<f64>,
    pub scenario_measure: Vec<f64>,
}

impl IncomeOutcome {
    /// Mean scenario rank within equal-width bins of baseline rank.
    pub fn quantile_map(&self, bins: usize) -> Vec<(f64, f64, f64)> {
        let mut groups = vec![Vec::new(); bins];
        for (b, s) in self.baseline_rank.iter().zip(&self.scenario_rank) {
            let k = ((b * bins as f64) as usize).min(bins - 1);
            groups[k].push(*s);
        }
        groups
            .iter()
            .enumerate()
            .map(|(k, g)| {
                let c = (k as f64 + 0.5) / bins as f64;
                if g.is_empty() {
                    (c, f64::NAN, f64::NAN)
                } else {
                    (c, mean(g), sd(g) / (g.len() as f64).sqrt())
                }
            })
            .collect()
    }
}

/// Final skill ranks and measure under a change of the income distribution,
/// with every unobservable after period 0 at its median.
pub fn income_distribution_counterfactual(
    spec: &ModelSpec,
    law: &dyn LatentLaw,
    scenario: Scenario,
    cfg: &IncomeConfig,
) -> Result<IncomeOutcome> {
    Ok(income_scenarios(spec, law, &[scenario], cfg)?.remove(0))
}

/// Several scenarios against one shared baseline.
pub fn income_scenarios(
    spec: &ModelSpec,
    law: &dyn LatentLaw,
    scenarios: &[Scenario],
    cfg: &IncomeConfig,
) -> Result<Vec<IncomeOutcome>> {
    check_periods(spec, law)?;
    if cfg.individuals < 2 {
        return Err(Error::invalid("income.individuals", "must be at least 2"));
    }
    let init = law.initial(cfg.individuals, cfg.seed)?;
    let ln_y: Vec<f64> = init.iter().map(|v| v[1]).collect();
    let levels: Vec<f64> = ln_y.iter().map(|v| v.exp()).collect();
    let (sd_log, sd_level) = (sd(&ln_y), sd(&levels));
    let median = law.quantile(Var::Income, 0.5)?;
    let zero = vec![[0.0, 0.0]; spec.periods];
    let boost = |y: f64| {
        if cfg.level_scale {
            (y.exp() + cfg.boost_sd * sd_level).ln()
        } else {
            y + cfg.boost_sd * sd_log
        }
    };
    let arm = |scn: Scenario| -> Vec<f64> {
        init.par_iter()
            .map(|v| {
                let (x0, y) = (v[0], v[1]);
                let low = || law.cdf(Var::Skill(0), x0) < 0.5 && law.cdf(Var::Income, y) < 0.5;
                let target = match scn {
                    Scenario::BoostLowSkillLowIncome => low(),
                    _ => true,
                };
                let path = |t: usize| match scn {
                    Scenario::BoostPeriod0 if t == 0 => boost(y),
                    Scenario::BoostPeriod1 if t == 1 => boost(y),
                    Scenario::MedianForAll => median,
                    Scenario::BoostLowSkillLowIncome if target => boost(y),
                    _ => y,
                };
                forward(spec, x0, path, &zero)
            })
            .collect()
    };
    let base = arm(Scenario::Null);
    let mut sorted = base.clone();
    sorted.sort_by(f64::total_cmp);
    let rank = |x: &f64| sorted_cdf(&sorted, *x);
    let b = &spec.measurement.skill;
    let nt = spec.periods;
    let measure = |x: &f64| b.mu[nt][0] + b.lambda[nt][0] * x;
    let baseline_rank: Vec<f64> = base.iter().map(rank).collect();
    let baseline_measure: Vec<f64> = base.iter().map(measure).collect();
    Ok(scenarios
        .iter()
        .map(|&s| {
            let (scenario_rank, scenario_measure) = if s == Scenario::Null {
                (baseline_rank.clone(), baseline_measure.clone())
            } else {
                let alt = arm(s);
                (
                    alt.iter().map(rank).collect(),
                    alt.iter().map(measure).collect(),
                )
            };
            IncomeOutcome {
                baseline_rank: baseline_rank.clone(),
                scenario_rank,
                baseline_measure: baseline_measure.clone(),
                scenario_measure,
            }
        })
        .collect())
}

/// One row of a figure table.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub grid: f64,
    pub series: String,
    pub value: f64,
    pub mc_se: Option<f64>,
}

/// Rows of one figure table plus its provenance.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CounterfactualResult {
    pub figure: String,
    /// `key value` lines written as `#` comments above the table.
    pub header: Vec<(String, String)>,
    pub rows: Vec<Point>,
}

impl CounterfactualResult {
    pub fn new(figure: &str) -> Self {
        CounterfactualResult {
            figure: figure.to_string(),
            ..Default::default()
        }
    }

    pub fn push_curve(&mut self, series: &str, grid: &[f64], values: &[f64], se: &[Option<f64>]) {
        for i in 0..grid.len() {
            self.rows.push(Point {
                grid: grid[i],
                series: series.to_string(),
                value: values[i],
                mc_se: se.get(i).copied().flatten(),
            });
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# figure {}", self.figure)?;
        for (k, v) in &self.header {
            writeln!(w, "# {k} {v}")?;
        }
        let mut cw = csv::Writer::from_writer(w);
        cw.write_record(["grid", "series", "value", "mcSe"])?;
        for p in &self.rows {
            cw.write_record([
                format!("{:?}", p.grid),
                p.series.clone(),
                format!("{:?}", p.value),
                p.mc_se.map_or(String::new(), |v| format!("{v:?}")),
            ])?;
        }
        cw.flush()?;
        Ok(())
    }
}

/// Quantile grid `k/(m+1)`, k = 1..m.
pub fn quantile_grid(m: usize) -> Vec<f64> {
    (1..=m).map(|k| k as f64 / (m + 1) as f64).collect()
}

/// Sample quantiles at `grid`.
pub fn quantiles_of(values: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    grid.iter().map(|&p| sorted_quantile(&s, p)).collect()
}
