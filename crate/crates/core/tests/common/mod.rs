//! Oracles shared by the integration tests. Each returns the observed
//! numbers so callers can either assert on them or report them.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use skillform::counterfact::*;
use skillform::firststep::LatentDraws;
use skillform::model::fixtures::{max_rel_diff, mc_default};
use skillform::model::{obs_equivalent, to_tilde, Ces, ModelSpec, RestrictionSet, Technology};
use skillform::simulate::{analytic_moments, simulate_panel, simulated_moments_many, MomentTable};
use skillform::stats::norm_quantile;

pub const MOMENT_DRAWS: usize = 1_000_000;
const MOMENT_SEED: u64 = 0x00e9_0001;

pub fn ces(spec: &ModelSpec) -> &Ces {
    match &spec.tech {
        Technology::Ces(c) => c,
        _ => panic!("CES fixture expected"),
    }
}

/// Next-period log skill written out from the CES formula.
pub fn ces_next(c: &Ces, t: usize, x: f64, y: f64) -> f64 {
    let s = c.sigma[t];
    c.psi[t] / s * (c.g1[t] * (s * x).exp() + c.g2[t] * (s * y).exp()).ln()
}

pub fn with_kappa() -> ModelSpec {
    let mut spec = mc_default();
    if let Technology::Ces(c) = &mut spec.tech {
        c.kappa = vec![0.3; 2];
    }
    spec
}

fn rel_gap(a: &MomentTable, b: &MomentTable) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.mean.len() {
        worst = worst.max((a.mean[i] - b.mean[i]).abs() / (1.0 + a.mean[i].abs()));
        for j in 0..a.mean.len() {
            worst = worst.max((a.cov[i][j] - b.cov[i][j]).abs() / (1.0 + a.cov[i][j].abs()));
        }
    }
    worst
}

/// Worst discrepancies of one spec against its equivalents under `sets`.
#[derive(Debug, Default, Clone, Copy)]
pub struct EquivCheck {
    pub checked: usize,
    /// Largest moment gap in standard errors over simulated tables.
    pub max_z: f64,
    /// Largest relative gap over closed-form tables.
    pub exact_gap: f64,
    pub round_trip: f64,
}

impl EquivCheck {
    pub fn merge(self, o: EquivCheck) -> EquivCheck {
        EquivCheck {
            checked: self.checked + o.checked,
            max_z: self.max_z.max(o.max_z),
            exact_gap: self.exact_gap.max(o.exact_gap),
            round_trip: self.round_trip.max(o.round_trip),
        }
    }

    pub fn passes(&self) -> bool {
        self.max_z <= 4.0 && self.exact_gap < 1e-8 && self.round_trip < 1e-8
    }
}

/// Builds every equivalent spec, verifies its restrictions and compares
/// moments and tilde parameters with the input.
pub fn equivalence_check(spec: &ModelSpec, sets: &[RestrictionSet]) -> Result<EquivCheck, String> {
    let tilde = to_tilde(spec).map_err(|e| e.to_string())?;
    let mut outs = Vec::new();
    let mut res = EquivCheck::default();
    for r in sets {
        let out = obs_equivalent(spec, r).map_err(|e| format!("{r}: {e}"))?;
        r.check(&out, 1e-8).map_err(|e| format!("{r}: {e}"))?;
        let back = to_tilde(&out).map_err(|e| e.to_string())?;
        res.round_trip = res
            .round_trip
            .max(max_rel_diff(back.as_spec(), tilde.as_spec()));
        outs.push(out);
    }
    let all: Vec<&ModelSpec> = std::iter::once(spec).chain(&outs).collect();
    let exact: Vec<Option<MomentTable>> = all
        .iter()
        .map(|s| analytic_moments(s).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    let exact: Option<Vec<MomentTable>> = exact.into_iter().collect();
    match exact {
        Some(tables) => {
            for m in &tables[1..] {
                res.exact_gap = res.exact_gap.max(rel_gap(&tables[0], m));
            }
        }
        None => {
            let tables = simulated_moments_many(&all, MOMENT_DRAWS, MOMENT_SEED)
                .map_err(|e| e.to_string())?;
            for m in &tables[1..] {
                res.max_z = res.max_z.max(tables[0].max_z(m));
            }
        }
    }
    res.checked = sets.len();
    Ok(res)
}

/// One brute-force comparison.
#[derive(Debug, Clone)]
pub struct OracleRow {
    pub label: String,
    pub got: f64,
    pub want: f64,
    pub se: f64,
}

impl OracleRow {
    pub fn within(&self, k: f64) -> bool {
        (self.got - self.want).abs() < k * self.se
    }
}

/// Random rank queries against counts over an independent simulated panel.
pub fn rank_oracle(queries: usize, seed: u64) -> Vec<OracleRow> {
    let spec = with_kappa();
    let c = ces(&spec).clone();
    let n = 1_000_000;
    let law = EmpiricalLaw::from_spec(&spec, n, 101).unwrap();
    let other = LatentDraws::from_panel(&simulate_panel(&spec, n, 202).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let modes = [
        RankMode::FixedQuantiles,
        RankMode::AverageOverShocks,
        RankMode::IncomeChannel,
    ];
    (0..queries)
        .map(|k| {
            let t = k % 2;
            let mode = modes[k % 3];
            let q = RankQuery {
                period: t,
                skill: rng.random_range(0.05..0.95),
                input: rng.random_range(0.05..0.95),
                shock: rng.random_range(0.05..0.95),
                invest_shock: rng.random_range(0.05..0.95),
                mode,
            };
            let got = rank_feature(&spec, &law, &q).unwrap().value;
            let x = law.quantile(Var::Skill(t), q.skill).unwrap();
            let next = &other.ln_theta[t + 1];
            let hits = match mode {
                RankMode::FixedQuantiles => {
                    let y = law.quantile(Var::Invest(t), q.input).unwrap();
                    let cut = ces_next(&c, t, x, y) + norm_quantile(q.shock) * c.shock_sd[t];
                    next.iter().filter(|v| **v <= cut).count()
                }
                RankMode::AverageOverShocks => {
                    let y = law.quantile(Var::Invest(t), q.input).unwrap();
                    let m = ces_next(&c, t, x, y);
                    next.iter()
                        .zip(&eta)
                        .filter(|(v, e)| **v <= m + *e * c.shock_sd[t])
                        .count()
                }
                _ => {
                    let ln_y = law.quantile(Var::Income, q.input).unwrap();
                    let b = &spec.investment;
                    let ei = norm_quantile(q.invest_shock) * b.eta_sd[t];
                    let y = b.b0[t] + b.b1[t] * x + b.b2[t] * ln_y + ei;
                    let own = (c.shock_sd[t].powi(2) - (c.kappa[t] * b.eta_sd[t]).powi(2)).sqrt();
                    let cut =
                        ces_next(&c, t, x, y) + c.kappa[t] * ei + norm_quantile(q.shock) * own;
                    next.iter().filter(|v| **v <= cut).count()
                }
            };
            let want = hits as f64 / n as f64;
            // Both the law and the oracle panel carry sampling noise.
            let se = (2.0 * want * (1.0 - want) / n as f64).sqrt().max(1e-6);
            OracleRow {
                label: format!("rank {k} {mode:?}"),
                got,
                want,
                se,
            }
        })
        .collect()
}

/// Random adult-outcome probabilities against direct anchor draws.
pub fn adult_oracle(queries: usize, seed: u64) -> Vec<OracleRow> {
    let spec = mc_default();
    let c = ces(&spec).clone();
    let law = EmpiricalLaw::from_spec(&spec, 200_000, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 1_000_000;
    let draws: Vec<f64> = (0..n)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    (0..queries)
        .map(|k| {
            let cond = Conditioning {
                start: 0,
                skill: rng.random_range(0.05..0.95),
                inputs: Inputs::Invest(vec![
                    rng.random_range(0.05..0.95),
                    rng.random_range(0.05..0.95),
                ]),
                shocks: vec![rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)],
            };
            let Inputs::Invest(a) = &cond.inputs else {
                unreachable!()
            };
            let mut x = law.quantile(Var::Skill(0), cond.skill).unwrap();
            for t in 0..2 {
                let y = law.quantile(Var::Invest(t), a[t]).unwrap();
                x = ces_next(&c, t, x, y) + norm_quantile(cond.shocks[t]) * c.shock_sd[t];
            }
            let q = x + rng.random_range(-1.5..1.5);
            let got = adult_outcome_cdf(&spec, &law, &cond, q).unwrap();
            let a = &spec.anchor;
            let want = draws
                .iter()
                .filter(|e| a.rho0 + a.rho1 * x + a.eta_q_sd * **e <= q)
                .count() as f64
                / n as f64;
            let se = (want * (1.0 - want) / n as f64).sqrt().max(1e-6);
            OracleRow {
                label: format!("adult {k}"),
                got,
                want,
                se,
            }
        })
        .collect()
}

/// Largest gap between analytic and central-difference log derivatives at
/// random points, and whether every pair summed to the returns parameter.
pub fn derivative_check(points: usize, seed: u64) -> (f64, bool) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut sums_exact = true;
    for _ in 0..points {
        let mut sigma: f64 = rng.random_range(-2.0..2.0);
        if sigma.abs() < 0.05 {
            sigma = 0.05f64.copysign(sigma);
        }
        let c = Ces {
            g1: vec![rng.random_range(0.1..2.0)],
            g2: vec![rng.random_range(0.1..2.0)],
            sigma: vec![sigma],
            psi: vec![rng.random_range(0.3..1.5)],
            shock_sd: vec![0.1],
            kappa: vec![0.0],
        };
        let (x, y) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let (a, b) = ces_log_derivatives(&c, 0, x, y);
        let h = 1e-5;
        let fa = (ces_next(&c, 0, x + h, y) - ces_next(&c, 0, x - h, y)) / (2.0 * h);
        let fb = (ces_next(&c, 0, x, y + h) - ces_next(&c, 0, x, y - h)) / (2.0 * h);
        worst = worst.max((a - fa).abs()).max((b - fb).abs());
        sums_exact &= a + b == c.psi[0];
    }
    (worst, sums_exact)
}
