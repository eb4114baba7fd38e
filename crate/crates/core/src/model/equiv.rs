//! Observationally equivalent reparameterizations that satisfy a target
//! restriction set.

use super::rescale::{rescale, LatentMap};
use super::restrict::{CesScale, InvestRestriction, RestrictionSet, SkillRestriction};
use super::spec::{ModelSpec, Technology};
use crate::error::{Error, Result};
use crate::stats::lse2;

pub fn obs_equivalent(spec: &ModelSpec, target: &RestrictionSet) -> Result<ModelSpec> {
    match spec.tech {
        Technology::TransLog(_) => obs_equivalent_translog(spec, target),
        Technology::Ces(_) => obs_equivalent_ces(spec, target),
        Technology::CesReduced(_) => Err(Error::WrongTechnology(
            "equivalence targets need a structural technology".into(),
        )),
    }
}

fn first(block: &super::spec::MeasureBlock, t: usize) -> (f64, f64) {
    (block.mu[t][0], block.lambda[t][0])
}

fn start(spec: &ModelSpec) -> LatentMap {
    let nt = spec.periods;
    let mut map = LatentMap::identity(nt);
    let (mu, la) = first(&spec.measurement.skill, 0);
    map.skill_scale[0] = 1.0 / la;
    map.skill_shift[0] = -mu / la;
    map
}

fn nonzero(v: f64, what: &'static str, period: usize) -> Result<f64> {
    if v == 0.0 || !v.is_finite() {
        Err(Error::ZeroDenominator { what, period })
    } else {
        Ok(v)
    }
}

pub fn obs_equivalent_translog(spec: &ModelSpec, target: &RestrictionSet) -> Result<ModelSpec> {
    spec.validate()?;
    target.require_for(&spec.tech)?;
    let Technology::TransLog(p) = &spec.tech else {
        return Err(Error::WrongTechnology("expected a trans-log model".into()));
    };
    let m = &spec.measurement;
    let inv = &spec.investment;
    let mut map = start(spec);
    for t in 0..spec.periods {
        let (c, d) = (map.skill_shift[t], map.skill_scale[t]);
        let (e, f) = match target.invest {
            InvestRestriction::AgeInvariantInvest => {
                let (mu, la) = first(&m.invest, t);
                (-mu / la, 1.0 / la)
            }
            InvestRestriction::CrsOrZeroIntercept => {
                (inv.b0[t] + inv.b1[t] * c, inv.b1[t] * d + inv.b2[t])
            }
        };
        map.invest_shift[t] = e;
        map.invest_scale[t] = nonzero(f, "investment scale", t)?;
        let (cn, dn) = match target.skill {
            SkillRestriction::AgeInvariantSkill => {
                let (mu, la) = first(&m.skill, t + 1);
                (-mu / la, 1.0 / la)
            }
            SkillRestriction::KnownScaleTech => (
                p.a[t] + p.g1[t] * c + p.g2[t] * e + p.g3[t] * c * e,
                (p.g1[t] + p.g3[t] * e) * d + (p.g2[t] + p.g3[t] * c) * f + p.g3[t] * d * f,
            ),
        };
        map.skill_shift[t + 1] = cn;
        map.skill_scale[t + 1] = nonzero(dn, "next-period skill scale", t)?;
    }
    finish(spec, &map, target)
}

pub fn obs_equivalent_ces(spec: &ModelSpec, target: &RestrictionSet) -> Result<ModelSpec> {
    spec.validate()?;
    target.require_for(&spec.tech)?;
    let Technology::Ces(p) = &spec.tech else {
        return Err(Error::WrongTechnology("expected a CES model".into()));
    };
    let scale = target.ces_scale.expect("checked by require_for");
    let m = &spec.measurement;
    let inv = &spec.investment;
    let mut map = start(spec);
    for t in 0..spec.periods {
        let (c, d) = (map.skill_shift[t], map.skill_scale[t]);
        let e = match target.invest {
            InvestRestriction::AgeInvariantInvest => {
                let (mu, la) = first(&m.invest, t);
                -mu / la
            }
            InvestRestriction::CrsOrZeroIntercept => inv.b0[t] + inv.b1[t] * c,
        };
        map.invest_shift[t] = e;
        map.invest_scale[t] = d;
        let dn = match scale {
            CesScale::AgeInvariantLoading => 1.0 / m.skill.lambda[t + 1][0],
            CesScale::PsiOne => p.psi[t] * d,
        };
        let cn = match target.skill {
            SkillRestriction::AgeInvariantSkill => {
                let (mu, la) = first(&m.skill, t + 1);
                -mu / la
            }
            SkillRestriction::KnownScaleTech => {
                let s = p.sigma[t];
                p.psi[t] / s * lse2(p.g1[t].ln() + s * c, p.g2[t].ln() + s * e)
            }
        };
        if !cn.is_finite() {
            return Err(Error::NonFinite {
                what: "next-period skill location",
                period: t,
            });
        }
        map.skill_shift[t + 1] = cn;
        map.skill_scale[t + 1] = nonzero(dn, "next-period skill scale", t)?;
    }
    finish(spec, &map, target)
}

/// Applies the map and snaps restricted entries to their exact values.
fn finish(spec: &ModelSpec, map: &LatentMap, target: &RestrictionSet) -> Result<ModelSpec> {
    let mut out = rescale(spec, map)?;
    let nt = out.periods;
    let ces = matches!(out.tech, Technology::Ces(_));
    out.measurement.skill.mu[0][0] = 0.0;
    out.measurement.skill.lambda[0][0] = 1.0;
    if target.skill == SkillRestriction::AgeInvariantSkill {
        for t in 0..=nt {
            out.measurement.skill.mu[t][0] = 0.0;
            if !ces {
                out.measurement.skill.lambda[t][0] = 1.0;
            }
        }
    }
    if target.invest == InvestRestriction::AgeInvariantInvest {
        for t in 0..nt {
            out.measurement.invest.mu[t][0] = 0.0;
            if !ces {
                out.measurement.invest.lambda[t][0] = 1.0;
            }
        }
    } else {
        for t in 0..nt {
            out.investment.b0[t] = 0.0;
        }
    }
    match (&mut out.tech, target.ces_scale) {
        (Technology::TransLog(p), _) if target.skill == SkillRestriction::KnownScaleTech => {
            for t in 0..nt {
                p.a[t] = 0.0;
            }
        }
        (Technology::Ces(p), Some(scale)) => match scale {
            CesScale::AgeInvariantLoading => {
                for t in 0..=nt {
                    out.measurement.skill.lambda[t][0] = 1.0;
                }
            }
            CesScale::PsiOne => {
                for t in 0..nt {
                    p.psi[t] = 1.0;
                }
            }
        },
        _ => {}
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;

    #[test]
    fn example1_sequences() {
        let spec = fixtures::example1();
        let target = RestrictionSet::translog(
            SkillRestriction::KnownScaleTech,
            InvestRestriction::AgeInvariantInvest,
        );
        let out = obs_equivalent(&spec, &target).unwrap();
        let lam: Vec<f64> = (0..5).map(|t| out.measurement.skill.lambda[t][0]).collect();
        let Technology::TransLog(p) = &out.tech else {
            unreachable!()
        };
        let expect_l = [1.0, 6.5, 9.25, 10.625, 11.3125];
        let expect_g = [0.077, 0.351, 0.435, 0.470, 0.485];
        for t in 0..5 {
            assert!((lam[t] - expect_l[t]).abs() < 1e-12);
            assert!((p.g1[t] - expect_g[t]).abs() < 1e-3, "{t}: {}", p.g1[t]);
        }
        target.check(&out, 1e-12).unwrap();
    }

    #[test]
    fn ces_example_sequence() {
        let spec = fixtures::ces_example();
        let target = RestrictionSet::ces(
            SkillRestriction::KnownScaleTech,
            InvestRestriction::AgeInvariantInvest,
            CesScale::AgeInvariantLoading,
        );
        let out = obs_equivalent(&spec, &target).unwrap();
        let expect = [1.0, 6.5, 9.25, 10.625];
        for (t, e) in expect.iter().enumerate() {
            assert!((out.measurement.skill.mu[t][0].exp() - e).abs() < 1e-10);
        }
        let Technology::Ces(p) = &out.tech else {
            unreachable!()
        };
        assert!((p.g1[0] - 1.0 / 13.0).abs() < 1e-12);
    }

    #[test]
    fn satisfied_target_is_fixed_point() {
        for seed in 0..5 {
            let base = fixtures::random_translog(seed);
            for r in RestrictionSet::all_translog() {
                let once = obs_equivalent(&base, &r).unwrap();
                let twice = obs_equivalent(&once, &r).unwrap();
                assert!(fixtures::max_rel_diff(&once, &twice) < 1e-10, "{r}");
            }
            let base = fixtures::random_ces(seed);
            for r in RestrictionSet::all_ces() {
                let once = obs_equivalent(&base, &r).unwrap();
                r.check(&once, 1e-10).unwrap();
                let twice = obs_equivalent(&once, &r).unwrap();
                assert!(fixtures::max_rel_diff(&once, &twice) < 1e-10, "{r}");
            }
        }
    }
}
