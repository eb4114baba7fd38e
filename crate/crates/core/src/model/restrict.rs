use super::spec::{ModelSpec, Technology};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Skill-side restriction. For CES the first member only pins locations;
/// scales come from [`CesScale`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillRestriction {
    /// First skill measure has the same intercept (and, for trans-log, loading) in every period.
    AgeInvariantSkill,
    /// Trans-log: `a_t = 0`, `γ1+γ2+γ3 = 1`. CES: `γ1+γ2 = 1`.
    KnownScaleTech,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvestRestriction {
    /// First investment measure has intercept 0 (and, for trans-log, loading 1).
    AgeInvariantInvest,
    /// Trans-log: `β0 = 0`, `β1+β2 = 1`. CES: `β0 = 0`.
    CrsOrZeroIntercept,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CesScale {
    AgeInvariantLoading,
    PsiOne,
}

/// One member per group. `λ_{θ,0,1} = 1`, `μ_{θ,0,1} = 0` is always imposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RestrictionSet {
    pub skill: SkillRestriction,
    pub invest: InvestRestriction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ces_scale: Option<CesScale>,
}

const SKILLS: [SkillRestriction; 2] = [
    SkillRestriction::AgeInvariantSkill,
    SkillRestriction::KnownScaleTech,
];
const INVESTS: [InvestRestriction; 2] = [
    InvestRestriction::AgeInvariantInvest,
    InvestRestriction::CrsOrZeroIntercept,
];
const SCALES: [CesScale; 2] = [CesScale::AgeInvariantLoading, CesScale::PsiOne];

impl RestrictionSet {
    pub fn translog(skill: SkillRestriction, invest: InvestRestriction) -> Self {
        RestrictionSet {
            skill,
            invest,
            ces_scale: None,
        }
    }

    pub fn ces(skill: SkillRestriction, invest: InvestRestriction, scale: CesScale) -> Self {
        RestrictionSet {
            skill,
            invest,
            ces_scale: Some(scale),
        }
    }

    pub fn all_translog() -> Vec<Self> {
        SKILLS
            .iter()
            .flat_map(|s| INVESTS.iter().map(move |i| Self::translog(*s, *i)))
            .collect()
    }

    pub fn all_ces() -> Vec<Self> {
        let mut v = Vec::new();
        for s in SKILLS {
            for i in INVESTS {
                for c in SCALES {
                    v.push(Self::ces(s, i, c));
                }
            }
        }
        v
    }

    /// Human-readable list of accepted combinations.
    pub fn valid_combinations() -> String {
        let mut out = String::from("trans-log:\n");
        for r in Self::all_translog() {
            out.push_str(&format!("  {r}\n"));
        }
        out.push_str("ces:\n");
        for r in Self::all_ces() {
            out.push_str(&format!("  {r}\n"));
        }
        out
    }

    /// Parse a comma-separated list such as `known_scale_tech,age_invariant_invest,psi_one`.
    pub fn parse(s: &str) -> Result<Self> {
        let mut skill = None;
        let mut invest = None;
        let mut scale = None;
        for tok in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match tok {
                "age_invariant_skill" => {
                    set_once(&mut skill, SkillRestriction::AgeInvariantSkill, tok)?
                }
                "known_scale_tech" => set_once(&mut skill, SkillRestriction::KnownScaleTech, tok)?,
                "age_invariant_invest" => {
                    set_once(&mut invest, InvestRestriction::AgeInvariantInvest, tok)?
                }
                "crs_or_zero_intercept" => {
                    set_once(&mut invest, InvestRestriction::CrsOrZeroIntercept, tok)?
                }
                "age_invariant_loading" => {
                    set_once(&mut scale, CesScale::AgeInvariantLoading, tok)?
                }
                "psi_one" => set_once(&mut scale, CesScale::PsiOne, tok)?,
                other => {
                    return Err(Error::Restrictions(format!(
                        "unknown restriction `{other}`; valid combinations are\n{}",
                        Self::valid_combinations()
                    )))
                }
            }
        }
        match (skill, invest) {
            (Some(skill), Some(invest)) => Ok(RestrictionSet {
                skill,
                invest,
                ces_scale: scale,
            }),
            _ => Err(Error::Restrictions(format!(
                "one skill and one investment restriction are required; valid combinations are\n{}",
                Self::valid_combinations()
            ))),
        }
    }

    /// Checks that the set fits the technology kind.
    pub fn require_for(&self, tech: &Technology) -> Result<()> {
        match (tech, self.ces_scale) {
            (Technology::TransLog(_), None) => Ok(()),
            (Technology::TransLog(_), Some(_)) => Err(Error::Restrictions(format!(
                "CES scale restriction given for a trans-log model; valid combinations are\n{}",
                Self::valid_combinations()
            ))),
            (_, Some(_)) => Ok(()),
            (_, None) => Err(Error::Restrictions(format!(
                "CES models need one of age_invariant_loading or psi_one; valid combinations are\n{}",
                Self::valid_combinations()
            ))),
        }
    }

    /// Whether `spec` satisfies every restriction to `tol`.
    pub fn check(&self, spec: &ModelSpec, tol: f64) -> std::result::Result<(), String> {
        self.require_for(&spec.tech).map_err(|e| e.to_string())?;
        let close = |a: f64, b: f64| (a - b).abs() <= tol * (1.0 + b.abs());
        let m = &spec.measurement;
        let nt = spec.periods;
        if !close(m.skill.lambda[0][0], 1.0) || !close(m.skill.mu[0][0], 0.0) {
            return Err("first skill measure is not normalized in period 0".into());
        }
        let ces = matches!(spec.tech, Technology::Ces(_));
        match self.skill {
            SkillRestriction::AgeInvariantSkill => {
                for t in 0..=nt {
                    if !close(m.skill.mu[t][0], 0.0) || (!ces && !close(m.skill.lambda[t][0], 1.0))
                    {
                        return Err(format!("skill measure not age invariant at period {t}"));
                    }
                }
            }
            SkillRestriction::KnownScaleTech => match &spec.tech {
                Technology::TransLog(p) => {
                    for t in 0..nt {
                        if !close(p.a[t], 0.0) || !close(p.g1[t] + p.g2[t] + p.g3[t], 1.0) {
                            return Err(format!("technology scale not pinned at period {t}"));
                        }
                    }
                }
                Technology::Ces(p) => {
                    for t in 0..nt {
                        if !close(p.g1[t] + p.g2[t], 1.0) {
                            return Err(format!("CES weights do not sum to one at period {t}"));
                        }
                    }
                }
                Technology::CesReduced(_) => {
                    return Err("reduced CES has no structural weights".into())
                }
            },
        }
        let inv = &spec.investment;
        match self.invest {
            InvestRestriction::AgeInvariantInvest => {
                for t in 0..nt {
                    if !close(m.invest.mu[t][0], 0.0)
                        || (!ces && !close(m.invest.lambda[t][0], 1.0))
                    {
                        return Err(format!(
                            "investment measure not age invariant at period {t}"
                        ));
                    }
                }
            }
            InvestRestriction::CrsOrZeroIntercept => {
                for t in 0..nt {
                    if !close(inv.b0[t], 0.0) || (!ces && !close(inv.b1[t] + inv.b2[t], 1.0)) {
                        return Err(format!(
                            "investment equation restriction fails at period {t}"
                        ));
                    }
                }
            }
        }
        if let (Technology::Ces(p), Some(scale)) = (&spec.tech, self.ces_scale) {
            match scale {
                CesScale::AgeInvariantLoading => {
                    for t in 0..=nt {
                        if !close(m.skill.lambda[t][0], 1.0) {
                            return Err(format!("skill loading not age invariant at period {t}"));
                        }
                    }
                }
                CesScale::PsiOne => {
                    for t in 0..nt {
                        if !close(p.psi[t], 1.0) {
                            return Err(format!("psi is not one at period {t}"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn set_once<T>(slot: &mut Option<T>, v: T, tok: &str) -> Result<()> {
    if slot.is_some() {
        return Err(Error::Restrictions(format!(
            "`{tok}` conflicts with another restriction from the same group; valid combinations are\n{}",
            RestrictionSet::valid_combinations()
        )));
    }
    *slot = Some(v);
    Ok(())
}

impl fmt::Display for RestrictionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self.skill {
            SkillRestriction::AgeInvariantSkill => "age_invariant_skill",
            SkillRestriction::KnownScaleTech => "known_scale_tech",
        };
        let i = match self.invest {
            InvestRestriction::AgeInvariantInvest => "age_invariant_invest",
            InvestRestriction::CrsOrZeroIntercept => "crs_or_zero_intercept",
        };
        write!(f, "{s},{i}")?;
        match self.ces_scale {
            Some(CesScale::AgeInvariantLoading) => write!(f, ",age_invariant_loading"),
            Some(CesScale::PsiOne) => write!(f, ",psi_one"),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trips_display() {
        for r in RestrictionSet::all_translog()
            .into_iter()
            .chain(RestrictionSet::all_ces())
        {
            assert_eq!(RestrictionSet::parse(&r.to_string()).unwrap(), r);
        }
    }

    #[test]
    fn missing_group_lists_combinations() {
        let e = RestrictionSet::parse("psi_one").unwrap_err().to_string();
        assert!(e.contains("known_scale_tech,age_invariant_invest"), "{e}");
        assert!(RestrictionSet::parse("known_scale_tech,age_invariant_skill,psi_one").is_err());
    }

    #[test]
    fn counts() {
        assert_eq!(RestrictionSet::all_translog().len(), 4);
        assert_eq!(RestrictionSet::all_ces().len(), 8);
    }
}
