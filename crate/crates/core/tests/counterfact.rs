mod common;

use common::{ces, ces_next};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skillform::counterfact::*;
use skillform::firststep::LatentDraws;
use skillform::model::fixtures::mc_default;
use skillform::model::rescale::{rescale, LatentMap};
use skillform::model::{Ces, ModelSpec, Technology};
use skillform::simulate::simulate_panel;
use skillform::stats::{norm_quantile, sd};

#[test]
fn log_derivative_hand_values() {
    let c = Ces {
        g1: vec![0.5],
        g2: vec![0.5],
        sigma: vec![1.0],
        psi: vec![1.0],
        shock_sd: vec![0.1],
        kappa: vec![0.0],
    };
    let (a, b) = ces_log_derivatives(&c, 0, 0.0, 0.0);
    assert!((a - 0.5).abs() < 1e-15 && (b - 0.5).abs() < 1e-15);
    let (a, b) = ces_log_derivatives(&c, 0, 0.0, 2f64.ln());
    assert!((a - 1.0 / 3.0).abs() < 1e-15 && (b - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn log_derivatives_match_differences_and_sum_to_psi() {
    let (gap, sums) = common::derivative_check(50, 5);
    assert!(gap < 1e-8, "{gap:e}");
    assert!(sums);
}

#[test]
fn cobb_douglas_limit_is_flat() {
    let mut spec = mc_default();
    if let Technology::Ces(c) = &mut spec.tech {
        c.sigma = vec![1e-4; 2];
    }
    let law = EmpiricalLaw::from_spec(&spec, 20_000, 3).unwrap();
    let grid = quantile_grid(9);
    let prof = derivative_profile(&spec, &law, 0, Axis::Skill, &grid).unwrap();
    for v in prof {
        assert!((v - 0.5).abs() < 2e-3, "{v}");
    }
}

#[test]
fn rank_features_match_brute_force() {
    for r in common::rank_oracle(20, 17) {
        assert!(r.within(3.0), "{r:?}");
    }
}

#[test]
fn averaging_over_skills_matches_brute_force() {
    let spec = mc_default();
    let c = ces(&spec).clone();
    let n = 1_000_000;
    let law = EmpiricalLaw::from_spec(&spec, n, 5).unwrap();
    let other = LatentDraws::from_panel(&simulate_panel(&spec, n, 6).unwrap()).unwrap();
    let q = RankQuery {
        period: 0,
        skill: 0.5,
        input: 0.3,
        shock: 0.6,
        invest_shock: 0.5,
        mode: RankMode::AverageOverSkills,
    };
    let got = rank_feature(&spec, &law, &q).unwrap();
    let y = law.quantile(Var::Invest(0), 0.3).unwrap();
    let e = norm_quantile(0.6) * c.shock_sd[0];
    // Pair each skill with another individual's next-period skill.
    let hits = (0..n)
        .filter(|&j| other.ln_theta[1][(j + 1) % n] <= ces_next(&c, 0, other.ln_theta[0][j], y) + e)
        .count();
    let want = hits as f64 / n as f64;
    let se = (2.0 * want * (1.0 - want) / n as f64).sqrt() + got.se.unwrap();
    assert!((got.value - want).abs() < 3.0 * se, "{got:?} vs {want}");
}

#[test]
fn adult_outcome_matches_brute_force() {
    for r in common::adult_oracle(10, 23) {
        assert!(r.within(3.0), "{r:?}");
    }
}

#[test]
fn noiseless_anchor_is_a_step() {
    let mut spec = mc_default();
    spec.anchor.eta_q_sd = 0.0;
    let law = EmpiricalLaw::from_spec(&spec, 10_000, 1).unwrap();
    let cond = Conditioning {
        start: 2,
        skill: 0.4,
        inputs: Inputs::Invest(vec![]),
        shocks: vec![],
    };
    let x = law.quantile(Var::Skill(2), 0.4).unwrap();
    assert_eq!(
        adult_outcome_cdf(&spec, &law, &cond, x + 1e-9).unwrap(),
        1.0
    );
    assert_eq!(
        adult_outcome_cdf(&spec, &law, &cond, x - 1e-9).unwrap(),
        0.0
    );
}

#[test]
fn one_period_path_is_the_rank_feature() {
    let spec = mc_default();
    let law = EmpiricalLaw::from_spec(&spec, 50_000, 2).unwrap();
    let path = recursive_rank_path(
        &spec,
        &law,
        0.3,
        &[PathStep {
            invest: 0.6,
            shock: 0.4,
        }],
    )
    .unwrap();
    let direct = rank_feature(&spec, &law, &RankQuery::fixed(0, 0.3, 0.6, 0.4))
        .unwrap()
        .value;
    assert_eq!(path, vec![direct]);
}

#[test]
fn median_path_stays_near_half_in_a_symmetric_design() {
    // Gaussian design: linear transitions with equal weights keep medians aligned.
    let mut spec = mc_default();
    if let Technology::Ces(c) = &mut spec.tech {
        c.sigma = vec![1e-6; 2];
    }
    spec.investment.b1 = vec![0.0; 2];
    spec.investment.b2 = vec![1.0; 2];
    spec.init =
        skillform::MixtureModel::gaussian(vec![0.0, 0.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]])
            .unwrap();
    let law = EmpiricalLaw::from_spec(&spec, 400_000, 9).unwrap();
    let steps = [PathStep {
        invest: 0.5,
        shock: 0.5,
    }; 2];
    for r in recursive_rank_path(&spec, &law, 0.5, &steps).unwrap() {
        assert!((r - 0.5).abs() < 0.01, "{r}");
    }
}

#[test]
fn rank_path_matches_brute_force() {
    let spec = mc_default();
    let c = ces(&spec).clone();
    let law = EmpiricalLaw::from_spec(&spec, 1_000_000, 31).unwrap();
    let steps = [
        PathStep {
            invest: 0.7,
            shock: 0.4,
        },
        PathStep {
            invest: 0.2,
            shock: 0.6,
        },
    ];
    let got = recursive_rank_path(&spec, &law, 0.25, &steps).unwrap();
    let other = LatentDraws::from_panel(&simulate_panel(&spec, 1_000_000, 32).unwrap()).unwrap();
    let mut alpha: f64 = 0.25;
    for t in 0..2 {
        let x = law.quantile(Var::Skill(t), alpha).unwrap();
        let y = law.quantile(Var::Invest(t), steps[t].invest).unwrap();
        let cut = ces_next(&c, t, x, y) + norm_quantile(steps[t].shock) * c.shock_sd[t];
        let n = other.len() as f64;
        let want = other.ln_theta[t + 1].iter().filter(|v| **v <= cut).count() as f64 / n;
        let se = (2.0 * want * (1.0 - want) / n).sqrt();
        assert!(
            (got[t] - want).abs() < 3.0 * se,
            "period {t}: {} vs {want}",
            got[t]
        );
        alpha = got[t];
    }
}

/// Same draws pushed through an increasing affine change of every latent.
fn rescaled_pair() -> (ModelSpec, EmpiricalLaw, ModelSpec, EmpiricalLaw) {
    let spec = mc_default();
    let map = LatentMap {
        skill_shift: vec![0.3, -1.0, 2.0],
        skill_scale: vec![0.5, 1.7, 2.5],
        invest_shift: vec![0.4, -0.2],
        invest_scale: vec![0.5, 1.7],
    };
    let other = rescale(&spec, &map).unwrap();
    let a = EmpiricalLaw::from_spec(&spec, 200_000, 44).unwrap();
    let b = EmpiricalLaw::from_spec(&other, 200_000, 44).unwrap();
    (spec, a, other, b)
}

#[test]
fn functionals_do_not_depend_on_latent_units() {
    let (s1, l1, s2, l2) = rescaled_pair();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..10 {
        let q = RankQuery {
            period: k % 2,
            skill: rng.random_range(0.05..0.95),
            input: rng.random_range(0.05..0.95),
            shock: rng.random_range(0.05..0.95),
            invest_shock: 0.5,
            mode: if k % 2 == 0 {
                RankMode::FixedQuantiles
            } else {
                RankMode::IncomeChannel
            },
        };
        let a = rank_feature(&s1, &l1, &q).unwrap().value;
        let b = rank_feature(&s2, &l2, &q).unwrap().value;
        assert!((a - b).abs() < 1e-3, "{a} {b}");
    }
    let cond = Conditioning {
        start: 0,
        skill: 0.2,
        inputs: Inputs::Invest(vec![0.3, 0.8]),
        shocks: vec![0.5, 0.7],
    };
    let a = adult_outcome_cdf(&s1, &l1, &cond, 0.5).unwrap();
    let b = adult_outcome_cdf(&s2, &l2, &cond, 0.5).unwrap();
    assert!((a - b).abs() < 1e-6, "{a} {b}");
}

#[test]
fn zero_boost_gives_a_flat_curve() {
    let spec = mc_default();
    let law = EmpiricalLaw::from_spec(&spec, 20_000, 4).unwrap();
    let cfg = ShareConfig {
        boost: 0.0,
        paths: 5_000,
        ..ShareConfig::default()
    };
    let c = optimal_income_share(&spec, &law, ShareObjective::LogSkillStd, &cfg).unwrap();
    assert!(c.value.iter().all(|v| *v == 0.0));
}

#[test]
fn log_scale_share_curve_ignores_skill_units() {
    let (s1, l1, s2, l2) = rescaled_pair();
    let cfg = ShareConfig {
        paths: 20_000,
        ..ShareConfig::default()
    };
    let a = optimal_income_share(&s1, &l1, ShareObjective::LogSkillStd, &cfg).unwrap();
    let b = optimal_income_share(&s2, &l2, ShareObjective::LogSkillStd, &cfg).unwrap();
    for (x, y) in a.value.iter().zip(&b.value) {
        assert!((x - y).abs() < 1e-3, "{x} {y}");
    }
    assert_eq!(a.argmax, b.argmax);
    let a = optimal_income_share(&s1, &l1, ShareObjective::LevelStd, &cfg).unwrap();
    let b = optimal_income_share(&s2, &l2, ShareObjective::LevelStd, &cfg).unwrap();
    let gap = a
        .value
        .iter()
        .zip(&b.value)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(
        gap > 1e-2,
        "level objective should move with the units, gap {gap}"
    );
}

#[test]
fn income_scenarios_behave() {
    let spec = mc_default();
    let law = EmpiricalLaw::from_spec(&spec, 100_000, 12).unwrap();
    let cfg = IncomeConfig {
        individuals: 50_000,
        ..IncomeConfig::default()
    };
    let null = income_distribution_counterfactual(&spec, &law, Scenario::Null, &cfg).unwrap();
    assert_eq!(null.baseline_rank, null.scenario_rank);
    for (c, v, _) in null.quantile_map(20) {
        assert!((c - v).abs() < 0.03, "{c} {v}");
    }
    let med =
        income_distribution_counterfactual(&spec, &law, Scenario::MedianForAll, &cfg).unwrap();
    assert!(sd(&med.scenario_measure) < sd(&med.baseline_measure));
    let low =
        income_distribution_counterfactual(&spec, &law, Scenario::BoostLowSkillLowIncome, &cfg)
            .unwrap();
    let map = low.quantile_map(20);
    let null_map = null.quantile_map(20);
    assert!(
        map[1].1 > null_map[1].1 + 0.01,
        "{:?} {:?}",
        map[1],
        null_map[1]
    );
    for k in 12..20 {
        assert!(
            (map[k].1 - null_map[k].1).abs() < 3.0 * map[k].2.max(1e-4),
            "{:?} {:?}",
            map[k],
            null_map[k]
        );
    }
    let b0 = income_distribution_counterfactual(&spec, &law, Scenario::BoostPeriod0, &cfg).unwrap();
    assert!(b0
        .scenario_rank
        .iter()
        .zip(&b0.baseline_rank)
        .all(|(s, b)| s >= b));
}

#[test]
fn quantile_map_is_invariant_to_units() {
    let (s1, l1, s2, l2) = rescaled_pair();
    let cfg = IncomeConfig {
        individuals: 20_000,
        ..IncomeConfig::default()
    };
    for scn in Scenario::ALL {
        let a = income_distribution_counterfactual(&s1, &l1, scn, &cfg)
            .unwrap()
            .quantile_map(20);
        let b = income_distribution_counterfactual(&s2, &l2, scn, &cfg)
            .unwrap()
            .quantile_map(20);
        for (x, y) in a.iter().zip(&b) {
            assert!((x.1 - y.1).abs() < 1e-3, "{scn:?} {x:?} {y:?}");
        }
    }
}
