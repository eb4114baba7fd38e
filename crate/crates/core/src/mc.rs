//! Monte Carlo replications over a grid of measurement scales.
//!
//! Each replication simulates one panel, rescales its measures for every
//! entry of the scale grid, runs both steps and evaluates the figure
//! functionals on each estimate. The same estimation seed is used at every
//! scale of a replication.

use crate::counterfact::{
    derivative_profile, income_scenarios, optimal_income_share, quantile_grid, quantiles_of, Axis,
    CounterfactualResult, EmpiricalLaw, IncomeConfig, IncomeOutcome, LatentLaw, MixtureLaw,
    Scenario, ShareConfig, ShareObjective,
};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::pipeline::{estimate, PipelineConfig};
use crate::rng::child_seed;
use crate::secondstep::{OutputRecord, Variant};
use crate::simulate::{scale_measures, simulate_panel, ScaleChange, FORMAT_VERSION};
use crate::stats::{mean, sd};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Figure {
    /// Mean response to splitting an income increase.
    F1,
    /// Partial derivatives of the technology along input quantiles.
    F2,
    /// Best attainable rank and the share that attains it, by income quantile.
    F3,
    /// Final skill quantiles under income scenarios.
    F4,
    /// Distribution of the final first skill measure under income scenarios.
    F5,
}

impl Figure {
    pub const ALL: [Figure; 5] = [Figure::F1, Figure::F2, Figure::F3, Figure::F4, Figure::F5];

    pub fn stem(self) -> &'static str {
        match self {
            Figure::F1 => "fig1",
            Figure::F2 => "fig2",
            Figure::F3 => "fig3",
            Figure::F4 => "fig4",
            Figure::F5 => "fig5",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
}

/// Grids and simulation sizes of the figure functionals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FigureConfig {
    /// Income split curves of F1.
    pub shares: ShareConfig,
    /// Share grid searched in F3.
    pub rank_shares: Vec<f64>,
    /// Initial skill quantile of the F3 individual.
    pub rank_skill: f64,
    /// Income quantiles on the F3 axis.
    pub income_quantiles: Vec<f64>,
    /// Quantile grid of F2.
    pub derivative_grid: Vec<f64>,
    /// Scenario simulation of F4 and F5.
    pub income: IncomeConfig,
    /// Baseline-rank bins of F4.
    pub bins: usize,
    /// Probability grid of F5.
    pub measure_grid: Vec<f64>,
    /// Simulated individuals behind the truth series.
    pub truth_draws: usize,
}

impl Default for FigureConfig {
    fn default() -> Self {
        FigureConfig {
            shares: ShareConfig::default(),
            rank_shares: (1..=99).map(|i| i as f64 / 100.0).collect(),
            rank_skill: 0.1,
            income_quantiles: (1..=19).map(|i| i as f64 / 20.0).collect(),
            derivative_grid: (1..=19).map(|i| i as f64 / 20.0).collect(),
            income: IncomeConfig::default(),
            bins: 20,
            measure_grid: quantile_grid(99),
            truth_draws: 500_000,
        }
    }
}

impl FigureConfig {
    fn validate(&self) -> Result<()> {
        let open = |k: &str, g: &[f64]| {
            if g.is_empty() || g.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
                Err(Error::invalid(
                    k,
                    "needs probabilities strictly inside (0, 1)",
                ))
            } else {
                Ok(())
            }
        };
        open("figures.income_quantiles", &self.income_quantiles)?;
        open("figures.derivative_grid", &self.derivative_grid)?;
        open("figures.measure_grid", &self.measure_grid)?;
        open("figures.rank_skill", &[self.rank_skill])?;
        if self.rank_shares.is_empty() || self.rank_shares.iter().any(|w| !(0.0..=1.0).contains(w))
        {
            return Err(Error::invalid(
                "figures.rank_shares",
                "shares must lie in [0, 1]",
            ));
        }
        if self.bins == 0 {
            return Err(Error::invalid("figures.bins", "must be at least 1"));
        }
        if self.truth_draws < 2 {
            return Err(Error::invalid("figures.truth_draws", "must be at least 2"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McPlan {
    pub spec: ModelSpec,
    pub replications: usize,
    pub n: usize,
    pub scales: Vec<ScaleChange>,
    pub estimators: Vec<Variant>,
    pub figures: Vec<Figure>,
    pub seed: u64,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub figure: FigureConfig,
}

fn theta_scales(s: &[f64]) -> Vec<ScaleChange> {
    s.iter()
        .map(|&s_theta| ScaleChange {
            s_theta,
            s_invest: 1.0,
        })
        .collect()
}

impl McPlan {
    /// 200 replications of 5000 individuals at scales 2/3, 1 and 2.
    pub fn full(spec: ModelSpec, seed: u64) -> Self {
        McPlan {
            spec,
            replications: 200,
            n: 5000,
            scales: theta_scales(&[2.0 / 3.0, 1.0, 2.0]),
            estimators: vec![Variant::Invariant, Variant::FixedScale],
            figures: Figure::ALL.to_vec(),
            seed,
            aggregation: Aggregation::Mean,
            pipeline: PipelineConfig::default(),
            figure: FigureConfig::default(),
        }
    }

    /// Smaller run for routine checks: 50 replications of 2000 individuals.
    pub fn desk(spec: ModelSpec, seed: u64) -> Self {
        McPlan {
            replications: 50,
            n: 2000,
            ..McPlan::full(spec, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.replications == 0 {
            return Err(Error::invalid("replications", "must be at least 1"));
        }
        if self.n < 2 {
            return Err(Error::invalid("n", "must be at least 2"));
        }
        if self.scales.is_empty() {
            return Err(Error::invalid("scales", "list at least one scale change"));
        }
        for s in &self.scales {
            ScaleChange::new(s.s_theta, s.s_invest)?;
        }
        if self.estimators.is_empty() {
            return Err(Error::invalid(
                "estimators",
                "select at least one estimator",
            ));
        }
        if self.figures.is_empty() {
            return Err(Error::invalid("figures", "select at least one figure"));
        }
        self.figure.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let plan: McPlan = toml::from_str(s)?;
        plan.validate()?;
        Ok(plan)
    }
}

/// Label of one scale change inside series names.
pub fn scale_tag(s: ScaleChange) -> String {
    if s.s_invest == 1.0 {
        format!("s{:.4}", s.s_theta)
    } else {
        format!("s{:.4}i{:.4}", s.s_theta, s.s_invest)
    }
}

/// `estimator/scale` label.
pub fn series_tag(v: Variant, s: ScaleChange) -> String {
    format!("{}/{}", v.name(), scale_tag(s))
}

/// One curve of one figure.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub figure: Figure,
    pub panel: String,
    pub grid: Vec<f64>,
    pub value: Vec<f64>,
}

impl Curve {
    fn new(figure: Figure, panel: &str, grid: &[f64], value: Vec<f64>) -> Self {
        Curve {
            figure,
            panel: panel.to_string(),
            grid: grid.to_vec(),
            value,
        }
    }
}

/// Evaluates the requested figure functionals for one spec and latent law.
///
/// F5 reports the final measure divided by `measure_scale`, so estimates from
/// rescaled measures are shown in the units of the unscaled data.
pub fn figure_curves(
    spec: &ModelSpec,
    law: &dyn LatentLaw,
    figures: &[Figure],
    cfg: &FigureConfig,
    measure_scale: f64,
) -> Result<Vec<Curve>> {
    let mut out = Vec::new();
    let has = |f: Figure| figures.contains(&f);
    if has(Figure::F1) {
        for (panel, obj) in [
            ("log_std", ShareObjective::LogSkillStd),
            ("level_std", ShareObjective::LevelStd),
        ] {
            let c = optimal_income_share(spec, law, obj, &cfg.shares)?;
            out.push(Curve::new(Figure::F1, panel, &c.grid, c.value));
        }
    }
    if has(Figure::F2) {
        let g = &cfg.derivative_grid;
        out.push(Curve::new(
            Figure::F2,
            "skill_t0",
            g,
            derivative_profile(spec, law, 0, Axis::Skill, g)?,
        ));
        let t = 1.min(spec.periods - 1);
        let panel = format!("invest_t{t}");
        out.push(Curve::new(
            Figure::F2,
            &panel,
            g,
            derivative_profile(spec, law, t, Axis::Invest, g)?,
        ));
    }
    if has(Figure::F3) {
        let share_cfg = ShareConfig {
            grid: cfg.rank_shares.clone(),
            ..cfg.shares.clone()
        };
        let (mut best, mut share) = (Vec::new(), Vec::new());
        for &p in &cfg.income_quantiles {
            let obj = ShareObjective::RankAtQuantile {
                skill: cfg.rank_skill,
                income: p,
            };
            let c = optimal_income_share(spec, law, obj, &share_cfg)?;
            best.push(c.value.iter().copied().fold(f64::NEG_INFINITY, f64::max));
            share.push(c.argmax);
        }
        out.push(Curve::new(
            Figure::F3,
            "max_rank",
            &cfg.income_quantiles,
            best,
        ));
        out.push(Curve::new(
            Figure::F3,
            "share",
            &cfg.income_quantiles,
            share,
        ));
    }
    if has(Figure::F4) || has(Figure::F5) {
        let outcomes = income_scenarios(spec, law, &Scenario::ALL, &cfg.income)?;
        let runs: Vec<(Scenario, IncomeOutcome)> =
            Scenario::ALL.into_iter().zip(outcomes).collect();
        if has(Figure::F4) {
            for (s, o) in runs.iter().filter(|(s, _)| *s != Scenario::Null) {
                let map = o.quantile_map(cfg.bins);
                let grid: Vec<f64> = map.iter().map(|m| m.0).collect();
                let value = map.iter().map(|m| m.1).collect();
                out.push(Curve::new(Figure::F4, s.name(), &grid, value));
            }
        }
        if has(Figure::F5) {
            for (s, o) in &runs {
                let q = quantiles_of(&o.scenario_measure, &cfg.measure_grid);
                let value = q.iter().map(|v| v / measure_scale).collect();
                let panel = if *s == Scenario::Null {
                    "baseline"
                } else {
                    s.name()
                };
                out.push(Curve::new(Figure::F5, panel, &cfg.measure_grid, value));
            }
        }
    }
    Ok(out)
}

/// Result of one estimator at one scale in one replication.
#[derive(Clone, Debug)]
pub struct Entry {
    pub scale: ScaleChange,
    pub variant: Variant,
    pub em_converged: bool,
    pub outcome: std::result::Result<(OutputRecord, Vec<(String, f64)>, Vec<Curve>), String>,
}

#[derive(Clone, Debug)]
pub struct Replication {
    pub index: usize,
    pub seed: u64,
    pub entries: Vec<Entry>,
}

const SIM_TAG: u64 = 0x53_494d;
const EST_TAG: u64 = 0x45_5354;
const TRUTH_TAG: u64 = 0x54_5255;

fn evaluate(
    plan: &McPlan,
    out: &crate::secondstep::EstimatorOutput,
    est: &crate::pipeline::Estimates,
    scale: ScaleChange,
) -> Result<Vec<Curve>> {
    let law = MixtureLaw::new(out.structural_law(&est.first.fit.mixture))?;
    let curves = figure_curves(&out.spec, &law, &plan.figures, &plan.figure, scale.s_theta)?;
    for c in &curves {
        if let Some(t) = c.value.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "figure value",
                period: t,
            });
        }
    }
    Ok(curves)
}

pub fn run_replication(plan: &McPlan, index: usize) -> Result<Replication> {
    let seed = child_seed(plan.seed, index as u64);
    let panel = simulate_panel(&plan.spec, plan.n, child_seed(seed, SIM_TAG))?;
    let cfg = PipelineConfig {
        estimators: plan.estimators.clone(),
        ..plan.pipeline.clone()
    };
    let mut entries = Vec::new();
    for &scale in &plan.scales {
        let scaled = scale_measures(&panel, scale);
        match estimate(&scaled, &cfg, child_seed(seed, EST_TAG)) {
            Err(e) => {
                log::warn!(
                    "replication {index}, {}: estimation failed: {e}",
                    scale_tag(scale)
                );
                for &variant in &plan.estimators {
                    entries.push(Entry {
                        scale,
                        variant,
                        em_converged: false,
                        outcome: Err(e.to_string()),
                    });
                }
            }
            Ok(est) => {
                for &variant in &plan.estimators {
                    let outcome = match est.output(variant) {
                        None => Err("estimator not run".to_string()),
                        Some(o) => evaluate(plan, o, &est, scale)
                            .map(|c| (o.record(), o.flat_params(), c))
                            .map_err(|e| e.to_string()),
                    };
                    if let Err(e) = &outcome {
                        log::warn!("replication {index}, {}: {e}", series_tag(variant, scale));
                    }
                    entries.push(Entry {
                        scale,
                        variant,
                        em_converged: est.first.fit.converged,
                        outcome,
                    });
                }
            }
        }
    }
    Ok(Replication {
        index,
        seed,
        entries,
    })
}

/// Included and excluded replications of one series tag.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub included: usize,
    pub excluded: usize,
}

#[derive(Clone, Debug)]
pub struct McOutcome {
    pub truth: Vec<Curve>,
    pub replications: Vec<Replication>,
    pub aggregates: Vec<CounterfactualResult>,
    /// Keyed by `estimator/scale`.
    pub counts: BTreeMap<String, Counts>,
}

impl McOutcome {
    pub fn aggregate(&self, figure: Figure) -> Option<&CounterfactualResult> {
        self.aggregates.iter().find(|a| a.figure == figure.stem())
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn aggregate(
    plan: &McPlan,
    truth: &[Curve],
    reps: &[Replication],
) -> (Vec<CounterfactualResult>, BTreeMap<String, Counts>) {
    let mut counts = BTreeMap::new();
    let mut tags = Vec::new();
    for &scale in &plan.scales {
        for &variant in &plan.estimators {
            let tag = series_tag(variant, scale);
            let mut c = Counts::default();
            for r in reps {
                let ok = r
                    .entries
                    .iter()
                    .any(|e| e.scale == scale && e.variant == variant && e.outcome.is_ok());
                if ok {
                    c.included += 1;
                } else {
                    c.excluded += 1;
                }
            }
            counts.insert(tag.clone(), c);
            tags.push((scale, variant, tag));
        }
    }
    let mut results = Vec::new();
    for &fig in Figure::ALL.iter().filter(|f| plan.figures.contains(f)) {
        let mut res = CounterfactualResult::new(fig.stem());
        res.header = vec![
            ("version".into(), FORMAT_VERSION.into()),
            ("seed".into(), plan.seed.to_string()),
            ("spec".into(), plan.spec.fingerprint()),
            ("replications".into(), plan.replications.to_string()),
            ("n".into(), plan.n.to_string()),
            (
                "aggregation".into(),
                format!("{:?}", plan.aggregation).to_lowercase(),
            ),
        ];
        for (_, _, tag) in &tags {
            let c = counts[tag];
            res.header
                .push(("included".into(), format!("{tag} {}", c.included)));
            res.header
                .push(("excluded".into(), format!("{tag} {}", c.excluded)));
        }
        for t in truth.iter().filter(|c| c.figure == fig) {
            res.push_curve(&format!("{}/truth", t.panel), &t.grid, &t.value, &[]);
        }
        for (scale, variant, tag) in &tags {
            let curves: Vec<&[Curve]> = reps
                .iter()
                .filter_map(|r| {
                    r.entries
                        .iter()
                        .find(|e| e.scale == *scale && e.variant == *variant)
                        .and_then(|e| e.outcome.as_ref().ok())
                        .map(|o| o.2.as_slice())
                })
                .collect();
            if curves.is_empty() {
                continue;
            }
            for (k, c0) in curves[0]
                .iter()
                .enumerate()
                .filter(|(_, c)| c.figure == fig)
            {
                let mut value = Vec::with_capacity(c0.grid.len());
                let mut se = Vec::with_capacity(c0.grid.len());
                for i in 0..c0.grid.len() {
                    let mut xs: Vec<f64> = curves.iter().map(|c| c[k].value[i]).collect();
                    se.push((xs.len() > 1).then(|| sd(&xs) / (xs.len() as f64).sqrt()));
                    value.push(match plan.aggregation {
                        Aggregation::Mean => mean(&xs),
                        Aggregation::Median => median(&mut xs),
                    });
                }
                res.push_curve(&format!("{}/{tag}", c0.panel), &c0.grid, &value, &se);
            }
        }
        results.push(res);
    }
    (results, counts)
}

/// Runs every replication and aggregates the figure curves.
pub fn run_mc(plan: &McPlan) -> Result<McOutcome> {
    plan.validate()?;
    let truth_law = EmpiricalLaw::from_spec(
        &plan.spec,
        plan.figure.truth_draws,
        child_seed(plan.seed, TRUTH_TAG),
    )?;
    let truth = figure_curves(&plan.spec, &truth_law, &plan.figures, &plan.figure, 1.0)?;
    let replications: Vec<Replication> = (0..plan.replications)
        .into_par_iter()
        .map(|r| run_replication(plan, r))
        .collect::<Result<_>>()?;
    let (aggregates, counts) = aggregate(plan, &truth, &replications);
    Ok(McOutcome {
        truth,
        replications,
        aggregates,
        counts,
    })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Writes `plan.cfg`, `reps/` and `aggregates/fig*.csv` under `dir`.
pub fn write_archive(plan: &McPlan, out: &McOutcome, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("reps"))?;
    fs::create_dir_all(dir.join("aggregates"))?;
    fs::write(dir.join("plan.cfg"), plan.to_toml()?)?;
    let mut status = csv::Writer::from_writer(create(&dir.join("reps").join("status.csv"))?);
    status.write_record([
        "rep",
        "seed",
        "series",
        "em_converged",
        "included",
        "message",
    ])?;
    for r in &out.replications {
        let stem = format!("rep_{:04}", r.index);
        let mut records = BTreeMap::new();
        let mut params = csv::Writer::from_writer(create(
            &dir.join("reps").join(format!("{stem}_params.csv")),
        )?);
        params.write_record(["series", "param", "value"])?;
        let mut curves = CounterfactualResult::new(&stem);
        for e in &r.entries {
            let tag = series_tag(e.variant, e.scale);
            let (ok, msg) = match &e.outcome {
                Ok((rec, flat, cs)) => {
                    records.insert(tag.clone(), rec.clone());
                    for (k, v) in flat {
                        params.write_record([tag.as_str(), k.as_str(), &format!("{v:?}")])?;
                    }
                    for c in cs {
                        curves.push_curve(
                            &format!("{}/{}/{tag}", c.figure.stem(), c.panel),
                            &c.grid,
                            &c.value,
                            &[],
                        );
                    }
                    (true, String::new())
                }
                Err(m) => (false, m.clone()),
            };
            status.write_record([
                r.index.to_string(),
                r.seed.to_string(),
                tag,
                e.em_converged.to_string(),
                ok.to_string(),
                msg,
            ])?;
        }
        params.flush()?;
        fs::write(
            dir.join("reps").join(format!("{stem}.toml")),
            toml::to_string(&records)?,
        )?;
        curves.write_csv(create(
            &dir.join("reps").join(format!("{stem}_curves.csv")),
        )?)?;
    }
    status.flush()?;
    for a in &out.aggregates {
        let mut w = create(&dir.join("aggregates").join(format!("{}.csv", a.figure)))?;
        a.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}
