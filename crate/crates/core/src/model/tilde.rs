//! The tilde parameterization: every first measure has intercept 0 and
//! loading 1. It indexes the identified set, and the inverse maps below
//! pick one member of that set under a restriction set.

use super::rescale::{rescale, LatentMap};
use super::restrict::{CesScale, InvestRestriction, RestrictionSet, SkillRestriction};
use super::spec::{CesReduced, ModelSpec, Technology, TransLog};
use crate::error::{Error, Result};
use crate::stats::lse2;

/// A model in tilde units. Trans-log technologies stay trans-log; CES
/// technologies are stored in reduced form (exponent ratios and outer exponent).
#[derive(Clone, Debug, PartialEq)]
pub struct TildeParams {
    spec: ModelSpec,
}

impl TildeParams {
    /// Wraps a model whose first measures are already normalized.
    pub fn from_normalized(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let m = &spec.measurement;
        for (name, b) in [("skill", &m.skill), ("invest", &m.invest)] {
            for t in 0..b.periods() {
                if b.mu[t][0] != 0.0 || b.lambda[t][0] != 1.0 {
                    return Err(Error::invalid(
                        format!("tilde.measurement.{name}[{t}][0]"),
                        "first measure must have intercept 0 and loading 1",
                    ));
                }
            }
        }
        let spec = match spec.tech {
            Technology::Ces(ref c) => {
                let mut s = spec.clone();
                s.tech = Technology::CesReduced(c.reduced());
                s
            }
            _ => spec,
        };
        Ok(TildeParams { spec })
    }

    pub fn as_spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn into_spec(self) -> ModelSpec {
        self.spec
    }

    pub fn periods(&self) -> usize {
        self.spec.periods
    }

    pub fn translog(&self) -> Option<&TransLog> {
        match &self.spec.tech {
            Technology::TransLog(p) => Some(p),
            _ => None,
        }
    }

    pub fn ces(&self) -> Option<&CesReduced> {
        match &self.spec.tech {
            Technology::CesReduced(p) => Some(p),
            _ => None,
        }
    }

    /// `σ_t / λ_{θ,t,1}`.
    pub fn exp_ratio_skill(&self) -> Option<&[f64]> {
        self.ces().map(|c| c.exp_skill.as_slice())
    }

    /// `σ_t / λ_{I,t,1}`.
    pub fn exp_ratio_invest(&self) -> Option<&[f64]> {
        self.ces().map(|c| c.exp_invest.as_slice())
    }

    /// `λ_{θ,t+1,1} ψ_t / σ_t`.
    pub fn outer_exp(&self) -> Option<&[f64]> {
        self.ces().map(|c| c.outer.as_slice())
    }
}

/// Intercepts and loadings of the first measures.
#[derive(Clone, Debug, PartialEq)]
pub struct FirstMeasureScales {
    pub skill_mu: Vec<f64>,
    pub skill_lambda: Vec<f64>,
    pub invest_mu: Vec<f64>,
    pub invest_lambda: Vec<f64>,
}

impl FirstMeasureScales {
    pub fn of(spec: &ModelSpec) -> Self {
        let m = &spec.measurement;
        FirstMeasureScales {
            skill_mu: m.skill.mu.iter().map(|r| r[0]).collect(),
            skill_lambda: m.skill.lambda.iter().map(|r| r[0]).collect(),
            invest_mu: m.invest.mu.iter().map(|r| r[0]).collect(),
            invest_lambda: m.invest.lambda.iter().map(|r| r[0]).collect(),
        }
    }

    pub fn unit(periods: usize) -> Self {
        FirstMeasureScales {
            skill_mu: vec![0.0; periods + 1],
            skill_lambda: vec![1.0; periods + 1],
            invest_mu: vec![0.0; periods],
            invest_lambda: vec![1.0; periods],
        }
    }

    fn as_map(&self) -> LatentMap {
        LatentMap {
            skill_shift: self.skill_mu.clone(),
            skill_scale: self.skill_lambda.clone(),
            invest_shift: self.invest_mu.clone(),
            invest_scale: self.invest_lambda.clone(),
        }
    }
}

fn snap_normalization(spec: &mut ModelSpec) {
    let m = &mut spec.measurement;
    for b in [&mut m.skill, &mut m.invest] {
        for t in 0..b.mu.len() {
            b.mu[t][0] = 0.0;
            b.lambda[t][0] = 1.0;
        }
    }
}

pub fn to_tilde(spec: &ModelSpec) -> Result<TildeParams> {
    match spec.tech {
        Technology::TransLog(_) => to_tilde_translog(spec),
        _ => to_tilde_ces(spec),
    }
}

pub fn to_tilde_translog(spec: &ModelSpec) -> Result<TildeParams> {
    if !matches!(spec.tech, Technology::TransLog(_)) {
        return Err(Error::WrongTechnology("expected a trans-log model".into()));
    }
    spec.validate()?;
    let mut out = rescale(spec, &LatentMap::to_first_measure(spec))?;
    snap_normalization(&mut out);
    Ok(TildeParams { spec: out })
}

pub fn to_tilde_ces(spec: &ModelSpec) -> Result<TildeParams> {
    spec.validate()?;
    let mut reduced = spec.clone();
    reduced.tech = match &spec.tech {
        Technology::Ces(c) => Technology::CesReduced(c.reduced()),
        Technology::CesReduced(c) => Technology::CesReduced(c.clone()),
        Technology::TransLog(_) => {
            return Err(Error::WrongTechnology("expected a CES model".into()))
        }
    };
    let mut out = rescale(&reduced, &LatentMap::to_first_measure(spec))?;
    snap_normalization(&mut out);
    Ok(TildeParams { spec: out })
}

/// Puts back given first-measure intercepts and loadings. CES results are
/// returned in structural form, which needs the implied exponents to agree.
pub fn reinstate_scales(tilde: &TildeParams, scales: &FirstMeasureScales) -> Result<ModelSpec> {
    let mut out = rescale(&tilde.spec, &scales.as_map())?;
    let m = &mut out.measurement;
    for t in 0..m.skill.mu.len() {
        m.skill.mu[t][0] = scales.skill_mu[t];
        m.skill.lambda[t][0] = scales.skill_lambda[t];
    }
    for t in 0..m.invest.mu.len() {
        m.invest.mu[t][0] = scales.invest_mu[t];
        m.invest.lambda[t][0] = scales.invest_lambda[t];
    }
    if let Technology::CesReduced(c) = &out.tech {
        out.tech = Technology::Ces(c.structural(1e-9)?);
    }
    Ok(out)
}

pub fn from_tilde(tilde: &TildeParams, restrictions: &RestrictionSet) -> Result<ModelSpec> {
    match tilde.spec.tech {
        Technology::TransLog(_) => from_tilde_translog(tilde, restrictions),
        _ => from_tilde_ces(tilde, restrictions),
    }
}

fn nonzero(v: f64, what: &'static str, period: usize) -> Result<f64> {
    if v == 0.0 || !v.is_finite() {
        Err(Error::ZeroDenominator { what, period })
    } else {
        Ok(v)
    }
}

/// Solves for the first-measure scales implied by the restrictions, working
/// forward from `λ_{θ,0,1} = 1`, `μ_{θ,0,1} = 0`.
pub fn from_tilde_translog(
    tilde: &TildeParams,
    restrictions: &RestrictionSet,
) -> Result<ModelSpec> {
    let p = tilde
        .translog()
        .ok_or_else(|| Error::WrongTechnology("expected trans-log tilde parameters".into()))?;
    restrictions.require_for(&tilde.spec.tech)?;
    let inv = &tilde.spec.investment;
    let nt = tilde.periods();
    let mut s = FirstMeasureScales::unit(nt);
    for t in 0..nt {
        let (mu, la) = (s.skill_mu[t], s.skill_lambda[t]);
        let (mu_i, la_i) = match restrictions.invest {
            InvestRestriction::AgeInvariantInvest => (0.0, 1.0),
            InvestRestriction::CrsOrZeroIntercept => {
                (inv.b0[t] + inv.b1[t] * mu, inv.b1[t] * la + inv.b2[t])
            }
        };
        s.invest_mu[t] = mu_i;
        s.invest_lambda[t] = nonzero(la_i, "investment loading", t)?;
        let (mu_n, la_n) = match restrictions.skill {
            SkillRestriction::AgeInvariantSkill => (0.0, 1.0),
            SkillRestriction::KnownScaleTech => (
                p.a[t] + p.g1[t] * mu + p.g2[t] * mu_i + p.g3[t] * mu * mu_i,
                (p.g1[t] + p.g3[t] * mu_i) * la
                    + (p.g2[t] + p.g3[t] * mu) * la_i
                    + p.g3[t] * la * la_i,
            ),
        };
        s.skill_mu[t + 1] = mu_n;
        s.skill_lambda[t + 1] = nonzero(la_n, "next-period skill loading", t)?;
    }
    reinstate_scales(tilde, &s)
}

/// CES version. Under `γ1 + γ2 = 1` the next intercept solves a monotone
/// scalar equation in `exp(μ)`, found by bisection on `[1e-12, 1e12]`.
pub fn from_tilde_ces(tilde: &TildeParams, restrictions: &RestrictionSet) -> Result<ModelSpec> {
    let p = tilde
        .ces()
        .ok_or_else(|| Error::WrongTechnology("expected CES tilde parameters".into()))?;
    restrictions.require_for(&tilde.spec.tech)?;
    let scale = restrictions.ces_scale.expect("checked by require_for");
    let inv = &tilde.spec.investment;
    let nt = tilde.periods();
    let mut s = FirstMeasureScales::unit(nt);
    for t in 0..nt {
        let (mu, la) = (s.skill_mu[t], s.skill_lambda[t]);
        let sigma = p.exp_skill[t] * la;
        let la_i = nonzero(sigma / p.exp_invest[t], "investment loading", t)?;
        let mu_i = match restrictions.invest {
            InvestRestriction::AgeInvariantInvest => 0.0,
            InvestRestriction::CrsOrZeroIntercept => inv.b0[t] + inv.b1[t] * mu,
        };
        s.invest_mu[t] = mu_i;
        s.invest_lambda[t] = la_i;
        let la_n = match scale {
            CesScale::AgeInvariantLoading => 1.0,
            CesScale::PsiOne => p.outer[t] * sigma,
        };
        s.skill_lambda[t + 1] = nonzero(la_n, "next-period skill loading", t)?;
        s.skill_mu[t + 1] = match restrictions.skill {
            SkillRestriction::AgeInvariantSkill => 0.0,
            SkillRestriction::KnownScaleTech => {
                let log_k = lse2(
                    p.g1[t].ln() + p.exp_skill[t] * mu,
                    p.g2[t].ln() + p.exp_invest[t] * mu_i,
                );
                crs_intercept(log_k, p.outer[t], t)?
            }
        };
    }
    reinstate_scales(tilde, &s)
}

/// Finds `m = exp(μ')` with `K · m^(-1/o) = 1`.
fn crs_intercept(log_k: f64, outer: f64, period: usize) -> Result<f64> {
    let sign = outer.signum();
    // Increasing in m for either sign of the outer exponent.
    let h = |m: f64| sign * (1.0 - (log_k - m.ln() / outer).exp());
    let (lo, hi) = (1e-12, 1e12);
    if !(h(lo) <= 0.0 && h(hi) >= 0.0) {
        return Err(Error::NoBracket {
            what: "CES intercept under known technology scale",
            period,
        });
    }
    let (mut lo, mut hi) = (lo, hi);
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * lo.max(1e-12) {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).ln())
}
