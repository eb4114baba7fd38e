use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use serde::{Deserialize, Serialize};
use skillform::counterfact::{CounterfactualResult, EmpiricalLaw, LatentLaw, MixtureLaw};
use skillform::mc::{
    figure_curves, run_mc, scale_tag, series_tag, write_archive, Curve, Figure, McPlan,
};
use skillform::model::fixtures::max_rel_diff;
use skillform::model::{obs_equivalent, ModelSpec, RestrictionSet, Technology};
use skillform::pipeline::{estimate, PipelineConfig};
use skillform::secondstep::{OutputRecord, Variant};
use skillform::simulate::{
    analytic_moments, load_panel_csv, read_panel_bin, save_panel_csv, scale_measures,
    simulate_panel, simulated_moments, write_panel_bin, LatentPanel, MomentTable, ScaleChange,
    FORMAT_VERSION,
};
use skillform::MixtureModel;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Everything a subcommand needs: the merged configuration and the model.
pub struct Context {
    pub cfg: RunConfig,
    pub spec: ModelSpec,
}

fn create(path: &Path) -> CliResult<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn out_dir(cfg: &RunConfig) -> CliResult<&Path> {
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    Ok(&cfg.out)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn scale(cfg: &RunConfig) -> CliResult<ScaleChange> {
    Ok(ScaleChange::new(cfg.scale_theta, cfg.scale_invest)?)
}

fn restrictions(cfg: &RunConfig) -> CliResult<Option<RestrictionSet>> {
    cfg.restrictions
        .as_deref()
        .map(RestrictionSet::parse)
        .transpose()
        .map_err(CliError::from)
}

fn header_block(w: &mut impl Write, seed: u64, spec: &str) -> CliResult<()> {
    let line = |w: &mut dyn Write, s: String| {
        w.write_all(s.as_bytes())
            .map_err(|e| CliError::io(Path::new("output"), e))
    };
    line(w, format!("# version: {FORMAT_VERSION}\n"))?;
    line(w, format!("# seed: {seed}\n"))?;
    line(w, format!("# spec: {spec}\n"))
}

pub fn simulate(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let n = cfg.simulate.n.ok_or_else(|| {
        CliError::config("simulate.n", "sample size is required (set it or pass --n)")
    })?;
    if n == 0 {
        return Err(CliError::config("simulate.n", "must be at least 1"));
    }
    let panel = scale_measures(&simulate_panel(&ctx.spec, n, cfg.seed)?, scale(cfg)?);
    let dir = out_dir(cfg)?;
    let path = if cfg.simulate.binary {
        let path = dir.join("panel.bin");
        let mut w = create(&path)?;
        write_panel_bin(&panel, &mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        path
    } else {
        let path = dir.join("panel.csv");
        save_panel_csv(&panel, &path)?;
        path
    };
    write_text(&dir.join("spec.toml"), &ctx.spec.to_toml()?)?;
    println!(
        "simulated {n} individuals over {} periods -> {}",
        panel.periods,
        path.display()
    );
    println!("spec fingerprint {}", panel.spec_ref);
    Ok(())
}

fn load_panel(path: &Path) -> CliResult<LatentPanel> {
    if path.extension().is_some_and(|e| e == "bin") {
        let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
        Ok(read_panel_bin(std::io::BufReader::new(f))?)
    } else if path.exists() {
        Ok(load_panel_csv(path)?)
    } else {
        Err(CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "panel not found"),
        ))
    }
}

/// One estimator's result as written by `estimate`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateFile {
    pub version: String,
    pub seed: u64,
    /// Fingerprint recorded in the panel.
    pub panel_spec: String,
    pub scale: ScaleChange,
    pub tag: String,
    pub record: OutputRecord,
    /// Latent law in the estimator's structural units.
    pub law: MixtureModel,
}

pub fn estimate_path(dir: &Path, v: Variant) -> PathBuf {
    dir.join(format!("estimate_{}.toml", v.name()))
}

pub fn estimate_cmd(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let Some(r) = restrictions(cfg)? else {
        return Err(CliError::config(
            "restrictions",
            format!(
                "no restriction set given; pass --restrictions with one of\n{}",
                RestrictionSet::valid_combinations()
            ),
        ));
    };
    let panel_path = cfg
        .estimate
        .panel
        .clone()
        .unwrap_or_else(|| cfg.out.join("panel.csv"));
    let s = scale(cfg)?;
    let panel = scale_measures(&load_panel(&panel_path)?, s);
    let pipeline = PipelineConfig {
        restrictions: r,
        estimators: cfg.estimator.variants(),
        ..cfg.estimate.pipeline.clone()
    };
    let est = estimate(&panel, &pipeline, cfg.seed)?;
    let dir = out_dir(cfg)?;
    let fit = &est.first.fit;
    println!(
        "first step: {} components, {} iterations, converged {}, log-likelihood {:.3}",
        pipeline.components, fit.iterations, fit.converged, fit.loglik
    );
    let params_path = dir.join("params.csv");
    let mut w = create(&params_path)?;
    header_block(&mut w, cfg.seed, &panel.spec_ref)?;
    let mut table = csv::Writer::from_writer(w);
    table.write_record(["series", "param", "value"])?;
    for o in &est.outputs {
        let tag = series_tag(o.variant, s);
        let file = EstimateFile {
            version: FORMAT_VERSION.to_string(),
            seed: cfg.seed,
            panel_spec: panel.spec_ref.clone(),
            scale: s,
            tag: tag.clone(),
            record: o.record(),
            law: o.structural_law(&fit.mixture),
        };
        let text = toml::to_string(&file).map_err(skillform::Error::from)?;
        write_text(&estimate_path(dir, o.variant), &text)?;
        let flat = o.flat_params();
        for (k, v) in &flat {
            table.write_record([tag.as_str(), k.as_str(), &format!("{v:?}")])?;
        }
        let shown: Vec<String> = flat
            .iter()
            .filter(|(k, _)| {
                ["sigma", "psi", "b1", "b2"]
                    .iter()
                    .any(|p| k.starts_with(&format!("{p}_")))
            })
            .map(|(k, v)| format!("{k}={v:.4}"))
            .collect();
        println!("{tag}: converged {} {}", o.converged(), shown.join(" "));
    }
    table.flush().map_err(|e| CliError::io(&params_path, e))?;
    println!("wrote {}", params_path.display());
    Ok(())
}

fn load_estimate(path: &Path) -> CliResult<EstimateFile> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(CliError::from)
}

pub fn counterfact(ctx: &Context, inputs: &[PathBuf], truth: bool) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let cf = &cfg.counterfact;
    let mut paths: Vec<PathBuf> = if inputs.is_empty() {
        cf.inputs.clone()
    } else {
        inputs.to_vec()
    };
    if paths.is_empty() {
        paths = cfg
            .estimator
            .variants()
            .into_iter()
            .map(|v| estimate_path(&cfg.out, v))
            .collect();
    }
    let mut series: Vec<(String, String, Vec<Curve>)> = Vec::new();
    if truth || cf.truth {
        let law = EmpiricalLaw::from_spec(&ctx.spec, cf.figure.truth_draws, cfg.seed)?;
        let curves = figure_curves(&ctx.spec, &law, &cf.figures, &cf.figure, 1.0)?;
        series.push(("truth".into(), ctx.spec.fingerprint(), curves));
    }
    for p in &paths {
        let e = load_estimate(p)?;
        let law = MixtureLaw::new(e.law.clone())?;
        let curves = figure_curves(
            &e.record.spec,
            &law as &dyn LatentLaw,
            &cf.figures,
            &cf.figure,
            e.scale.s_theta,
        )?;
        series.push((e.tag.clone(), e.record.spec.fingerprint(), curves));
    }
    let dir = out_dir(cfg)?;
    for fig in Figure::ALL.into_iter().filter(|f| cf.figures.contains(f)) {
        let mut res = CounterfactualResult::new(fig.stem());
        res.header = vec![
            ("version".into(), FORMAT_VERSION.into()),
            ("seed".into(), cfg.seed.to_string()),
            ("spec".into(), ctx.spec.fingerprint()),
        ];
        for (tag, fp, _) in &series {
            res.header.push(("input".into(), format!("{tag} {fp}")));
        }
        for (tag, _, curves) in &series {
            for c in curves.iter().filter(|c| c.figure == fig) {
                res.push_curve(&format!("{}/{tag}", c.panel), &c.grid, &c.value, &[]);
            }
        }
        let path = dir.join(format!("{}.csv", fig.stem()));
        let mut w = create(&path)?;
        res.write_csv(&mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        println!("wrote {} ({} rows)", path.display(), res.rows.len());
    }
    Ok(())
}

fn moments(spec: &ModelSpec, draws: usize, seed: u64) -> CliResult<MomentTable> {
    match analytic_moments(spec)? {
        Some(m) => Ok(m),
        None => Ok(simulated_moments(spec, draws, seed)?),
    }
}

fn first_measures(spec: &ModelSpec) -> String {
    let b = &spec.measurement.skill;
    let row = |name: &str, v: Vec<f64>| {
        let cells: Vec<String> = v.iter().map(|x| format!("{x:.6}")).collect();
        format!("  {name:<14}{}\n", cells.join(" "))
    };
    let mut s = String::new();
    s += &row("skill mu", b.mu.iter().map(|m| m[0]).collect());
    s += &row("skill lambda", b.lambda.iter().map(|m| m[0]).collect());
    s += &row("exp(mu)", b.mu.iter().map(|m| m[0].exp()).collect());
    match &spec.tech {
        Technology::TransLog(g) => {
            s += &row("a", g.a.clone());
            s += &row("g1", g.g1.clone());
            s += &row("g2", g.g2.clone());
            s += &row("g3", g.g3.clone());
        }
        Technology::Ces(c) => {
            s += &row("g1", c.g1.clone());
            s += &row("g2", c.g2.clone());
            s += &row("sigma", c.sigma.clone());
            s += &row("psi", c.psi.clone());
        }
        Technology::CesReduced(c) => {
            s += &row("g1", c.g1.clone());
            s += &row("g2", c.g2.clone());
            s += &row("outer", c.outer.clone());
        }
    }
    s
}

pub fn equiv(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let target = match restrictions(cfg)? {
        Some(r) => r,
        None => match &cfg.equiv.target {
            Some(t) => RestrictionSet::parse(t)?,
            None => {
                return Err(CliError::config(
                    "equiv.target",
                    format!(
                        "no target restriction set; pass --restrictions with one of\n{}",
                        RestrictionSet::valid_combinations()
                    ),
                ))
            }
        },
    };
    let out = obs_equivalent(&ctx.spec, &target)?;
    let a = moments(&ctx.spec, cfg.equiv.draws, cfg.seed)?;
    let b = moments(&out, cfg.equiv.draws, cfg.seed)?;
    let z = a.max_z(&b);
    let verdict = if max_rel_diff(&out, &ctx.spec) < 1e-12 {
        "unchanged"
    } else if z <= cfg.equiv.max_se {
        "PASS"
    } else {
        "FAIL"
    };
    let mut report = String::new();
    report += &format!(
        "# version: {FORMAT_VERSION}\n# seed: {}\n# spec: {}\n",
        cfg.seed,
        ctx.spec.fingerprint()
    );
    report += &format!(
        "target: {target}\n\noriginal\n{}",
        first_measures(&ctx.spec)
    );
    report += &format!("\nequivalent\n{}", first_measures(&out));
    report +=
        "\nmoments (observable, original mean, equivalent mean, original var, equivalent var)\n";
    for (i, name) in a.names.iter().enumerate() {
        report += &format!(
            "  {name:<12} {:>14.6} {:>14.6} {:>14.6} {:>14.6}\n",
            a.mean[i], b.mean[i], a.cov[i][i], b.cov[i][i]
        );
    }
    let basis = if a.is_exact() {
        "exact moments"
    } else {
        "simulated moments"
    };
    report += &format!(
        "\nlargest gap: {z:.3} ({basis}), tolerance {}\nverdict: {verdict}\n",
        cfg.equiv.max_se
    );
    let dir = out_dir(cfg)?;
    write_text(&dir.join("equivalent.toml"), &out.to_toml()?)?;
    write_text(&dir.join("equiv_report.txt"), &report)?;
    print!("{report}");
    if verdict == "FAIL" {
        return Err(CliError::Failed(format!(
            "moments differ by {z:.3} standard errors"
        )));
    }
    Ok(())
}

pub fn plan(ctx: &Context) -> CliResult<McPlan> {
    let cfg = &ctx.cfg;
    let m = &cfg.mc;
    let mut plan = match m.preset {
        crate::config::McPreset::Desk => McPlan::desk(ctx.spec.clone(), cfg.seed),
        crate::config::McPreset::Full => McPlan::full(ctx.spec.clone(), cfg.seed),
    };
    if let Some(r) = m.replications {
        plan.replications = r;
    }
    if let Some(n) = m.n {
        plan.n = n;
    }
    if let Some(s) = &m.scales {
        plan.scales = s
            .iter()
            .map(|&v| ScaleChange::new(v, 1.0))
            .collect::<Result<_, _>>()?;
    }
    if let Some(f) = &m.figures {
        plan.figures = f.clone();
    }
    if let Some(p) = &m.pipeline {
        plan.pipeline = p.clone();
    }
    if let Some(f) = &m.figure {
        plan.figure = f.clone();
    }
    if let Some(r) = restrictions(cfg)? {
        plan.pipeline.restrictions = r;
    }
    plan.aggregation = m.aggregation;
    plan.estimators = cfg.estimator.variants();
    plan.validate()?;
    Ok(plan)
}

pub fn mc(ctx: &Context) -> CliResult<()> {
    let plan = plan(ctx)?;
    let out = run_mc(&plan)?;
    let dir = out_dir(&ctx.cfg)?;
    write_archive(&plan, &out, dir)?;
    println!(
        "{} replications of n = {} at scales {}",
        plan.replications,
        plan.n,
        plan.scales
            .iter()
            .map(|s| scale_tag(*s))
            .collect::<Vec<_>>()
            .join(", ")
    );
    for (tag, c) in &out.counts {
        println!("  {tag}: included {}, excluded {}", c.included, c.excluded);
    }
    println!("archive written to {}", dir.display());
    Ok(())
}
