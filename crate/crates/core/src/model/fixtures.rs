//! Reference models: the worked examples, the Monte Carlo default, and
//! random draws for property tests.

use super::spec::*;
use crate::mixture::MixtureModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_init() -> MixtureModel {
    MixtureModel::gaussian(vec![0.0, 0.0], vec![vec![1.0, 0.3], vec![0.3, 1.0]]).expect("valid")
}

/// Trans-log example with first skill loadings 12 in every period.
pub fn example1() -> ModelSpec {
    let nt = 5;
    ModelSpec {
        periods: nt,
        tech: Technology::TransLog(TransLog {
            a: vec![0.0; nt],
            g1: vec![0.5; nt],
            g2: vec![0.5; nt],
            g3: vec![0.0; nt],
            shock_sd: vec![0.3; nt],
            kappa: vec![0.0; nt],
        }),
        measurement: Measurement {
            skill: MeasureBlock::uniform(nt + 1, &[0.0, 0.0], &[12.0, 6.0], &[1.0, 1.0]),
            invest: MeasureBlock::uniform(nt, &[0.0, 0.0], &[1.0, 0.8], &[0.5, 0.5]),
        },
        investment: Investment {
            b0: vec![0.0; nt],
            b1: vec![0.5; nt],
            b2: vec![0.5; nt],
            eta_sd: vec![0.2; nt],
        },
        anchor: Anchor {
            rho0: 0.0,
            rho1: 1.0,
            eta_q_sd: 0.5,
        },
        init: unit_init(),
    }
}

/// CES example: first skill measures with intercept ln 12, σ = 1, equal weights.
pub fn ces_example() -> ModelSpec {
    let nt = 3;
    let ln12 = 12f64.ln();
    ModelSpec {
        periods: nt,
        tech: Technology::Ces(Ces {
            g1: vec![0.5; nt],
            g2: vec![0.5; nt],
            sigma: vec![1.0; nt],
            psi: vec![1.0; nt],
            shock_sd: vec![0.1; nt],
            kappa: vec![0.0; nt],
        }),
        measurement: Measurement {
            skill: MeasureBlock::uniform(nt + 1, &[ln12, 0.0], &[1.0, 0.9], &[0.5, 0.5]),
            invest: MeasureBlock::uniform(nt, &[0.0, 0.0], &[1.0, 1.1], &[0.5, 0.5]),
        },
        investment: Investment {
            b0: vec![0.0; nt],
            b1: vec![0.5; nt],
            b2: vec![0.5; nt],
            eta_sd: vec![0.2; nt],
        },
        anchor: Anchor {
            rho0: 0.0,
            rho1: 1.0,
            eta_q_sd: 0.5,
        },
        init: unit_init(),
    }
}

/// Latent sds of the default Monte Carlo design from a 2·10^6 pilot run,
/// used to size measurement error (sd = 0.5 × loading × latent sd).
pub const MC_SKILL_SD: [f64; 3] = [3.162, 2.536, 2.210];
pub const MC_INVEST_SD: [f64; 2] = [1.897, 1.858];

/// The Monte Carlo design. Values not stated in the source are defaults,
/// not ground truth: `A_t = 1`, `γ_t = 0.5`, shock sd 0.1, a two-component
/// initial mixture with means (−4, −2) and (2, 1), unit variances, correlation 0.3.
pub fn mc_default() -> ModelSpec {
    let nt = 2;
    let skill_l = [1.0, 0.8, 1.2];
    let invest_l = [1.0, 0.9, 1.1];
    let err =
        |l: &[f64; 3], sd: f64| -> Vec<f64> { l.iter().map(|v| round4(0.5 * v * sd)).collect() };
    ModelSpec {
        periods: nt,
        tech: Technology::Ces(Ces {
            g1: vec![0.5; nt],
            g2: vec![0.5; nt],
            sigma: vec![-0.5; nt],
            psi: vec![1.0; nt],
            shock_sd: vec![0.1; nt],
            kappa: vec![0.0; nt],
        }),
        measurement: Measurement {
            skill: MeasureBlock {
                mu: vec![vec![0.0; 3]; nt + 1],
                lambda: vec![skill_l.to_vec(); nt + 1],
                error_sd: MC_SKILL_SD.iter().map(|s| err(&skill_l, *s)).collect(),
            },
            invest: MeasureBlock {
                mu: vec![vec![0.0; 3]; nt],
                lambda: vec![invest_l.to_vec(); nt],
                error_sd: MC_INVEST_SD.iter().map(|s| err(&invest_l, *s)).collect(),
            },
        },
        investment: Investment {
            b0: vec![0.0; nt],
            b1: vec![0.1; nt],
            b2: vec![0.9; nt],
            eta_sd: vec![0.1; nt],
        },
        anchor: Anchor {
            rho0: 0.0,
            rho1: 1.0,
            eta_q_sd: round4(0.5 * MC_SKILL_SD[2]),
        },
        init: MixtureModel::new(
            vec![0.5, 0.5],
            vec![vec![-4.0, -2.0], vec![2.0, 1.0]],
            vec![vec![vec![1.0, 0.3], vec![0.3, 1.0]]; 2],
        )
        .expect("valid"),
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn u(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

fn random_init(rng: &mut ChaCha8Rng) -> MixtureModel {
    let mut means = Vec::new();
    let mut covs = Vec::new();
    for _ in 0..2 {
        means.push(vec![u(rng, -1.5, 1.5), u(rng, -1.0, 1.0)]);
        let (s1, s2, r) = (u(rng, 0.4, 1.2), u(rng, 0.3, 1.0), u(rng, -0.5, 0.5));
        covs.push(vec![vec![s1 * s1, r * s1 * s2], vec![r * s1 * s2, s2 * s2]]);
    }
    let w = u(rng, 0.3, 0.7);
    MixtureModel::new(vec![w, 1.0 - w], means, covs).expect("valid")
}

fn random_block(
    rng: &mut ChaCha8Rng,
    periods: usize,
    measures: usize,
    signed: bool,
) -> MeasureBlock {
    let mut b = MeasureBlock {
        mu: vec![vec![0.0; measures]; periods],
        lambda: vec![vec![0.0; measures]; periods],
        error_sd: vec![vec![0.0; measures]; periods],
    };
    for t in 0..periods {
        for m in 0..measures {
            b.mu[t][m] = u(rng, -1.0, 1.0);
            let sign = if signed && rng.random::<f64>() < 0.3 {
                -1.0
            } else {
                1.0
            };
            b.lambda[t][m] = sign * u(rng, 0.5, 2.0);
            b.error_sd[t][m] = u(rng, 0.2, 0.8);
        }
    }
    b
}

fn random_common(
    rng: &mut ChaCha8Rng,
    nt: usize,
    signed: bool,
) -> (
    Measurement,
    Investment,
    Anchor,
    MixtureModel,
    Vec<f64>,
    Vec<f64>,
) {
    let measurement = Measurement {
        skill: random_block(rng, nt + 1, 2, signed),
        invest: random_block(rng, nt, 2, signed),
    };
    let investment = Investment {
        b0: (0..nt).map(|_| u(rng, -0.5, 0.5)).collect(),
        b1: (0..nt).map(|_| u(rng, 0.1, 0.5)).collect(),
        b2: (0..nt).map(|_| u(rng, 0.3, 0.8)).collect(),
        eta_sd: (0..nt).map(|_| u(rng, 0.1, 0.4)).collect(),
    };
    let anchor = Anchor {
        rho0: u(rng, -1.0, 1.0),
        rho1: u(rng, 0.5, 2.0),
        eta_q_sd: u(rng, 0.2, 0.8),
    };
    let init = random_init(rng);
    let kappa: Vec<f64> = (0..nt).map(|_| u(rng, -0.5, 0.5)).collect();
    let shock: Vec<f64> = (0..nt)
        .map(|t| {
            let s = u(rng, 0.1, 0.3);
            (s * s + (kappa[t] * investment.eta_sd[t]).powi(2)).sqrt()
        })
        .collect();
    (measurement, investment, anchor, init, kappa, shock)
}

/// Random two-period trans-log model with two measures per latent.
pub fn random_translog(seed: u64) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7472_616e);
    let nt = 2;
    let (measurement, investment, anchor, init, kappa, shock_sd) =
        random_common(&mut rng, nt, true);
    let tech = TransLog {
        a: (0..nt).map(|_| u(&mut rng, -0.5, 0.5)).collect(),
        g1: (0..nt).map(|_| u(&mut rng, 0.3, 0.8)).collect(),
        g2: (0..nt).map(|_| u(&mut rng, 0.2, 0.6)).collect(),
        g3: (0..nt).map(|_| u(&mut rng, -0.1, 0.1)).collect(),
        shock_sd,
        kappa,
    };
    ModelSpec {
        periods: nt,
        tech: Technology::TransLog(tech),
        measurement,
        investment,
        anchor,
        init,
    }
}

/// Random two-period CES model with two measures per latent.
pub fn random_ces(seed: u64) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6365_7300);
    let nt = 2;
    let (measurement, investment, anchor, init, kappa, shock_sd) =
        random_common(&mut rng, nt, false);
    let sigma = (0..nt)
        .map(|_| {
            let s = u(&mut rng, 0.2, 1.2);
            if rng.random::<f64>() < 0.5 {
                -s
            } else {
                s
            }
        })
        .collect();
    let tech = Ces {
        g1: (0..nt).map(|_| u(&mut rng, 0.2, 1.0)).collect(),
        g2: (0..nt).map(|_| u(&mut rng, 0.2, 1.0)).collect(),
        sigma,
        psi: (0..nt).map(|_| u(&mut rng, 0.7, 1.3)).collect(),
        shock_sd,
        kappa,
    };
    ModelSpec {
        periods: nt,
        tech: Technology::Ces(tech),
        measurement,
        investment,
        anchor,
        init,
    }
}

/// All numeric parameters in a fixed order.
pub fn flatten(spec: &ModelSpec) -> Vec<f64> {
    let mut v = Vec::new();
    match &spec.tech {
        Technology::TransLog(p) => {
            for x in [&p.a, &p.g1, &p.g2, &p.g3, &p.shock_sd, &p.kappa] {
                v.extend_from_slice(x);
            }
        }
        Technology::Ces(p) => {
            for x in [&p.g1, &p.g2, &p.sigma, &p.psi, &p.shock_sd, &p.kappa] {
                v.extend_from_slice(x);
            }
        }
        Technology::CesReduced(p) => {
            for x in [
                &p.g1,
                &p.g2,
                &p.exp_skill,
                &p.exp_invest,
                &p.outer,
                &p.shock_sd,
                &p.kappa,
            ] {
                v.extend_from_slice(x);
            }
        }
    }
    for b in [&spec.measurement.skill, &spec.measurement.invest] {
        for x in [&b.mu, &b.lambda, &b.error_sd] {
            for row in x {
                v.extend_from_slice(row);
            }
        }
    }
    let i = &spec.investment;
    for x in [&i.b0, &i.b1, &i.b2, &i.eta_sd] {
        v.extend_from_slice(x);
    }
    v.extend([spec.anchor.rho0, spec.anchor.rho1, spec.anchor.eta_q_sd]);
    v.extend(&spec.init.weights);
    for m in &spec.init.means {
        v.extend(m);
    }
    for c in &spec.init.covs {
        for r in c {
            v.extend(r);
        }
    }
    v
}

/// Largest `|a-b| / (1 + |b|)` over all parameters; infinite if the shapes differ.
pub fn max_rel_diff(a: &ModelSpec, b: &ModelSpec) -> f64 {
    if a.tech.kind() != b.tech.kind() {
        return f64::INFINITY;
    }
    let (x, y) = (flatten(a), flatten(b));
    if x.len() != y.len() {
        return f64::INFINITY;
    }
    x.iter()
        .zip(&y)
        .map(|(p, q)| (p - q).abs() / (1.0 + q.abs()))
        .fold(0.0, f64::max)
}
