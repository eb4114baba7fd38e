//! Acceptance report: one PASS/FAIL line per headline property.
//!
//! Runs without the libtest harness so the lines always reach the terminal.
//! The process fails when any property fails, except those listed in
//! `KNOWN_GAPS`, which are reported but tolerated.

mod common;

use skillform::firststep::{estimate_loadings, LoadingBlock};
use skillform::mc::{run_mc, write_archive, Figure, McOutcome, McPlan};
use skillform::model::fixtures::{ces_example, example1, mc_default, random_ces, random_translog};
use skillform::model::{
    obs_equivalent, to_tilde, CesScale, InvestRestriction, ModelSpec, RestrictionSet,
    SkillRestriction, Technology,
};
use skillform::pipeline::{estimate, PipelineConfig};
use skillform::secondstep::Variant;
use skillform::simulate::{scale_measures, simulate_panel, write_panel_csv, ScaleChange};
use std::path::Path;
use std::time::{Duration, Instant};

const KNOWN_GAPS: [&str; 1] = ["estimator sanity"];

struct Report {
    failed: Vec<String>,
}

impl Report {
    fn line(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failed.push(name.to_string());
        }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn example_sequences(r: &mut Report) {
    let start = Instant::now();
    let target = RestrictionSet::translog(
        SkillRestriction::KnownScaleTech,
        InvestRestriction::AgeInvariantInvest,
    );
    let out = obs_equivalent(&example1(), &target).unwrap();
    let Technology::TransLog(p) = &out.tech else {
        unreachable!()
    };
    let lam = [1.0, 6.5, 9.25, 10.625, 11.3125];
    let g1 = [0.077, 0.351, 0.435, 0.470, 0.485];
    let mut gap: f64 = 0.0;
    for t in 0..5 {
        gap = gap.max((out.measurement.skill.lambda[t][0] - lam[t]).abs());
        gap = gap.max((p.g1[t] - g1[t]).abs());
    }
    let target = RestrictionSet::ces(
        SkillRestriction::KnownScaleTech,
        InvestRestriction::AgeInvariantInvest,
        CesScale::AgeInvariantLoading,
    );
    let out = obs_equivalent(&ces_example(), &target).unwrap();
    let mut ces_gap: f64 = 0.0;
    for (t, e) in [1.0, 6.5, 9.25, 10.625].iter().enumerate() {
        ces_gap = ces_gap.max((out.measurement.skill.mu[t][0].exp() - e).abs());
    }
    let took = start.elapsed();
    r.line(
        "example sequences",
        gap < 1e-3 && ces_gap < 1e-3 && took < Duration::from_secs(1),
        format!(
            "trans-log gap {gap:.1e}, CES gap {ces_gap:.1e}, {}",
            secs(took)
        ),
    );
}

fn tilde_fixture(r: &mut Report) {
    let start = Instant::now();
    let t = to_tilde(&example1()).unwrap();
    let p = t.translog().unwrap();
    let s = t.as_spec();
    let (g2, b1, rho1) = (p.g2[0], s.investment.b1[0], s.anchor.rho1);
    let took = start.elapsed();
    r.line(
        "tilde fixture",
        g2 == 6.0 && b1 == 1.0 / 24.0 && rho1 == 1.0 / 12.0 && took < Duration::from_secs(1),
        format!("g2 {g2}, b1 {b1}, rho1 {rho1}, {}", secs(took)),
    );
}

fn equivalence_suite(r: &mut Report) {
    let start = Instant::now();
    let mut total = common::EquivCheck::default();
    let mut errors = Vec::new();
    let translog = RestrictionSet::all_translog();
    let ces = RestrictionSet::all_ces();
    for seed in 0..100 {
        for (spec, sets) in [(random_translog(seed), &translog), (random_ces(seed), &ces)] {
            match common::equivalence_check(&spec, sets) {
                Ok(c) => total = total.merge(c),
                Err(e) => errors.push(format!("seed {seed}: {e}")),
            }
        }
    }
    let took = start.elapsed();
    let expected = 100 * (translog.len() + ces.len());
    r.line(
        "observational equivalence",
        errors.is_empty()
            && total.checked == expected
            && total.passes()
            && took < Duration::from_secs(600),
        format!(
            "{} of {expected} pairs, max {:.2} SE, exact gap {:.1e}, round trip {:.1e}, {}{}",
            total.checked,
            total.max_z,
            total.exact_gap,
            total.round_trip,
            secs(took),
            errors
                .first()
                .map_or(String::new(), |e| format!(", first error: {e}")),
        ),
    );
}

fn derivatives(r: &mut Report) {
    let (gap, sums) = common::derivative_check(50, 5);
    r.line(
        "CES log derivatives",
        gap < 1e-8 && sums,
        format!("max finite-difference gap {gap:.1e}, sums equal psi: {sums}"),
    );
}

/// Values of `series` in a figure table, in grid order.
fn series(out: &McOutcome, fig: Figure, name: &str) -> Vec<(f64, f64)> {
    let table = out.aggregate(fig).expect("figure was requested");
    table
        .rows
        .iter()
        .filter(|p| p.series == name)
        .map(|p| (p.grid, p.value))
        .collect()
}

fn max_gap(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x.1 - y.1).abs())
        .fold(0.0, f64::max)
}

fn at(curve: &[(f64, f64)], p: f64) -> f64 {
    curve
        .iter()
        .find(|(g, _)| (g - p).abs() < 1e-9)
        .expect("grid point")
        .1
}

fn desk_mc(r: &mut Report) {
    let plan = McPlan::desk(mc_default(), 7);
    let start = Instant::now();
    let out = run_mc(&plan).unwrap();
    let took = start.elapsed();
    let included = out.counts.values().map(|c| c.included).min().unwrap_or(0);
    let tags = ["s0.6667", "s1.0000", "s2.0000"];

    let mut panels: Vec<(Figure, String)> = vec![
        (Figure::F1, "log_std".into()),
        (Figure::F2, "skill_t0".into()),
        (Figure::F2, "invest_t1".into()),
        (Figure::F3, "max_rank".into()),
        (Figure::F3, "share".into()),
    ];
    let table = out.aggregate(Figure::F4).unwrap();
    let mut f4: Vec<String> = table
        .rows
        .iter()
        .filter_map(|p| {
            p.series
                .strip_suffix("/invariant/s1.0000")
                .map(str::to_string)
        })
        .collect();
    f4.dedup();
    panels.extend(f4.into_iter().map(|p| (Figure::F4, p)));

    let mut worst: f64 = 0.0;
    let mut worst_at = String::new();
    for (fig, panel) in &panels {
        let base = series(&out, *fig, &format!("{panel}/invariant/{}", tags[1]));
        for tag in [tags[0], tags[2]] {
            let g = max_gap(
                &base,
                &series(&out, *fig, &format!("{panel}/invariant/{tag}")),
            );
            if g >= worst {
                worst = g;
                worst_at = format!("{}:{panel}", fig.stem());
            }
        }
    }
    r.line(
        "invariance across skill units",
        worst < 1e-3 && took < Duration::from_secs(1800),
        format!(
            "{} panels, max gap {worst:.1e} ({worst_at}), {} replications per series, {}",
            panels.len(),
            included,
            secs(took)
        ),
    );

    let truth = series(&out, Figure::F2, "skill_t0/truth");
    let fixed = series(&out, Figure::F2, "skill_t0/fixed/s0.6667");
    let (t10, f10, t90, f90) = (
        at(&truth, 0.1),
        at(&fixed, 0.1),
        at(&truth, 0.9),
        at(&fixed, 0.9),
    );
    let share = |v: &str, tag: &str| series(&out, Figure::F3, &format!("share/{v}/{tag}"));
    let fixed_gap = max_gap(&share("fixed", tags[0]), &share("fixed", tags[2]));
    let inv_gap = max_gap(&share("invariant", tags[0]), &share("invariant", tags[2]));
    r.line(
        "fixed-scale bias",
        f10 < t10 && f90 > t90 && fixed_gap > 0.10 && inv_gap < 0.02,
        format!(
            "derivative at 10%: {f10:.3} vs truth {t10:.3}; at 90%: {f90:.3} vs {t90:.3}; \
             share gap 2/3 vs 2: fixed {fixed_gap:.3}, invariant {inv_gap:.3}"
        ),
    );
}

fn sanity_and_first_step(r: &mut Report) {
    let spec = mc_default();
    let n = 100_000;
    let panel = simulate_panel(&spec, n, 7).unwrap();
    let cfg = PipelineConfig::default();
    let est = estimate(&panel, &cfg, 11).unwrap();
    let mut traces = vec![est.first.fit.ll_trace.clone()];
    let mut detail = Vec::new();
    let mut inv_pass = false;
    for v in [Variant::Invariant, Variant::FixedScale] {
        let o = est.output(v).unwrap();
        let c = o.spec.ces().unwrap();
        let inv = &o.spec.investment;
        let ok = c.sigma.iter().all(|s| (s + 0.5).abs() <= 0.05)
            && inv.b1.iter().all(|b| (b - 0.1).abs() <= 0.02)
            && inv.b2.iter().all(|b| (b - 0.9).abs() <= 0.02);
        if v == Variant::Invariant {
            inv_pass = ok;
        }
        detail.push(format!(
            "{v:?} sigma {:.3?} b1 {:.3?} b2 {:.3?}",
            c.sigma, inv.b1, inv.b2
        ));
    }
    r.line("estimator sanity", inv_pass, detail.join("; "));

    for seed in 0..5u64 {
        let p = simulate_panel(&spec, 2000, 100 + seed).unwrap();
        let p = scale_measures(
            &p,
            ScaleChange::new([1.0, 2.0 / 3.0, 2.0][seed as usize % 3], 1.0).unwrap(),
        );
        traces.push(estimate(&p, &cfg, seed).unwrap().first.fit.ll_trace);
    }
    let drops = traces
        .iter()
        .flat_map(|tr| tr.windows(2).map(|w| w[0] - w[1]))
        .fold(0.0, f64::max);
    let monotone = traces
        .iter()
        .all(|tr| tr.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs()));

    let ratio_gap = |spec: &ModelSpec, n: usize| -> f64 {
        let est = estimate_loadings(&simulate_panel(spec, n, 3).unwrap()).unwrap();
        let rel = |got: &LoadingBlock, truth: &[Vec<f64>]| -> f64 {
            let mut worst: f64 = 0.0;
            for (g, t) in got.lambda.iter().zip(truth) {
                for m in 1..t.len() {
                    let want = t[m] / t[0];
                    worst = worst.max((g[m] - want).abs() / want.abs());
                }
            }
            worst
        };
        rel(&est.skill, &spec.measurement.skill.lambda)
            .max(rel(&est.invest, &spec.measurement.invest.lambda))
    };
    let noisy = ratio_gap(&spec, 50_000);
    let mut clean = spec.clone();
    for b in [&mut clean.measurement.skill, &mut clean.measurement.invest] {
        b.error_sd.iter_mut().flatten().for_each(|s| *s = 0.0);
    }
    let exact = ratio_gap(&clean, 2_000);
    r.line(
        "first step",
        monotone && noisy < 0.02 && exact < 1e-9,
        format!(
            "{} EM runs, largest log-likelihood decrease {drops:.1e}; loading ratio error {noisy:.4} at n=50000, {exact:.1e} without noise",
            traces.len()
        ),
    );
}

fn oracle(r: &mut Report) {
    let rows: Vec<common::OracleRow> = common::rank_oracle(10, 41)
        .into_iter()
        .chain(common::adult_oracle(10, 43))
        .collect();
    let worst = rows
        .iter()
        .map(|o| (o.got - o.want).abs() / o.se)
        .fold(0.0, f64::max);
    let bad: Vec<&str> = rows
        .iter()
        .filter(|o| !o.within(3.0))
        .map(|o| o.label.as_str())
        .collect();
    r.line(
        "counterfactual oracle",
        bad.is_empty() && rows.len() == 20,
        format!(
            "{} queries, worst {worst:.2} SE{}",
            rows.len(),
            if bad.is_empty() {
                String::new()
            } else {
                format!(", off: {bad:?}")
            }
        ),
    );
}

fn archive_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in ["aggregates", "reps"] {
        let mut entries: Vec<_> = std::fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        entries.sort();
        for p in entries {
            files.push((p.display().to_string(), std::fs::read(&p).unwrap()));
        }
    }
    files
}

fn determinism(r: &mut Report) {
    let spec = mc_default();
    let mut plan = McPlan::desk(spec.clone(), 5);
    plan.replications = 3;
    plan.n = 400;
    plan.scales = vec![ScaleChange::identity(), ScaleChange::new(2.0, 1.0).unwrap()];
    plan.figure.truth_draws = 20_000;
    plan.figure.shares.paths = 5_000;
    plan.figure.income.individuals = 5_000;
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let mut panel = Vec::new();
            write_panel_csv(&simulate_panel(&spec, 5000, 9).unwrap(), &mut panel).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let out = run_mc(&plan).unwrap();
            write_archive(&plan, &out, dir.path()).unwrap();
            let files = archive_bytes(dir.path())
                .into_iter()
                .map(|(name, bytes)| (name.replace(&dir.path().display().to_string(), ""), bytes))
                .collect::<Vec<_>>();
            (panel, files)
        })
    };
    let (p1, a1) = run(1);
    let (p4, a4) = run(4);
    let same_files = a1 == a4;
    r.line(
        "determinism",
        p1 == p4 && same_files && !a1.is_empty(),
        format!(
            "panel bytes equal: {}, {} archive files equal: {same_files}",
            p1 == p4,
            a1.len()
        ),
    );
}

fn main() {
    let mut r = Report { failed: Vec::new() };
    example_sequences(&mut r);
    tilde_fixture(&mut r);
    derivatives(&mut r);
    oracle(&mut r);
    determinism(&mut r);
    sanity_and_first_step(&mut r);
    equivalence_suite(&mut r);
    desk_mc(&mut r);
    let unexpected: Vec<&String> = r
        .failed
        .iter()
        .filter(|f| !KNOWN_GAPS.contains(&f.as_str()))
        .collect();
    for gap in r.failed.iter().filter(|f| KNOWN_GAPS.contains(&f.as_str())) {
        println!("note: `{gap}` is a known gap, see README");
    }
    if !unexpected.is_empty() {
        eprintln!("failed: {unexpected:?}");
        std::process::exit(1);
    }
}
