use crate::error::{Error, Result};
use crate::mixture::MixtureModel;
use crate::stats::{lse2, share2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Latent {
    Skill,
    Invest,
}

impl Latent {
    pub fn name(self) -> &'static str {
        match self {
            Latent::Skill => "skill",
            Latent::Invest => "invest",
        }
    }
}

/// Intercepts, loadings and error sds indexed `[t][m]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureBlock {
    pub mu: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
    pub error_sd: Vec<Vec<f64>>,
}

impl MeasureBlock {
    /// Same intercepts, loadings and error sds in every period.
    pub fn uniform(periods: usize, mu: &[f64], lambda: &[f64], error_sd: &[f64]) -> Self {
        MeasureBlock {
            mu: vec![mu.to_vec(); periods],
            lambda: vec![lambda.to_vec(); periods],
            error_sd: vec![error_sd.to_vec(); periods],
        }
    }

    pub fn periods(&self) -> usize {
        self.mu.len()
    }

    pub fn measures(&self) -> usize {
        self.mu.first().map_or(0, |r| r.len())
    }

    fn validate(&self, key: &str, periods: usize) -> Result<()> {
        if self.mu.len() != periods
            || self.lambda.len() != periods
            || self.error_sd.len() != periods
        {
            return Err(Error::invalid(key, format!("expected {periods} periods")));
        }
        let m = self.measures();
        if m < 2 {
            return Err(Error::invalid(
                key,
                "at least two measures per period are required",
            ));
        }
        for t in 0..periods {
            if self.mu[t].len() != m || self.lambda[t].len() != m || self.error_sd[t].len() != m {
                return Err(Error::invalid(
                    format!("{key}[{t}]"),
                    "measure count differs across periods",
                ));
            }
            for j in 0..m {
                if !self.mu[t][j].is_finite() {
                    return Err(Error::invalid(
                        format!("{key}.mu[{t}][{j}]"),
                        "must be finite",
                    ));
                }
                if !(self.lambda[t][j] != 0.0 && self.lambda[t][j].is_finite()) {
                    return Err(Error::invalid(
                        format!("{key}.lambda[{t}][{j}]"),
                        "loading must be finite and nonzero",
                    ));
                }
                if !(self.error_sd[t][j] >= 0.0 && self.error_sd[t][j].is_finite()) {
                    return Err(Error::invalid(
                        format!("{key}.error_sd[{t}][{j}]"),
                        "must be finite and nonnegative",
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    pub skill: MeasureBlock,
    pub invest: MeasureBlock,
}

impl Measurement {
    pub fn block(&self, v: Latent) -> &MeasureBlock {
        match v {
            Latent::Skill => &self.skill,
            Latent::Invest => &self.invest,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransLog {
    pub a: Vec<f64>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub g3: Vec<f64>,
    /// Total sd of the skill shock.
    pub shock_sd: Vec<f64>,
    pub kappa: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ces {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub sigma: Vec<f64>,
    pub psi: Vec<f64>,
    pub shock_sd: Vec<f64>,
    pub kappa: Vec<f64>,
}

/// `ln θ' = outer · ln(g1 θ^exp_skill + g2 I^exp_invest) + η`.
///
/// The structural CES is the case `exp_skill = exp_invest = σ`, `outer = ψ/σ`.
/// The form is closed under separate affine changes of the skill and
/// investment log-scales, which is why tilde CES models are stored this way.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CesReduced {
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
    pub exp_skill: Vec<f64>,
    pub exp_invest: Vec<f64>,
    pub outer: Vec<f64>,
    pub shock_sd: Vec<f64>,
    pub kappa: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Technology {
    TransLog(TransLog),
    Ces(Ces),
    CesReduced(CesReduced),
}

impl Ces {
    pub fn reduced(&self) -> CesReduced {
        CesReduced {
            g1: self.g1.clone(),
            g2: self.g2.clone(),
            exp_skill: self.sigma.clone(),
            exp_invest: self.sigma.clone(),
            outer: self
                .sigma
                .iter()
                .zip(&self.psi)
                .map(|(s, p)| p / s)
                .collect(),
            shock_sd: self.shock_sd.clone(),
            kappa: self.kappa.clone(),
        }
    }

    /// `(∂ln θ'/∂ln θ, ∂ln θ'/∂ln I)`; the pair sums to ψ.
    pub fn log_derivatives(&self, t: usize, ln_theta: f64, ln_invest: f64) -> (f64, f64) {
        let u = self.g1[t].ln() + self.sigma[t] * ln_theta;
        let v = self.g2[t].ln() + self.sigma[t] * ln_invest;
        let psi = self.psi[t];
        // Take the smaller share first so the subtraction is exact.
        if u <= v {
            let d1 = psi * share2(u, v);
            (d1, psi - d1)
        } else {
            let d2 = psi * share2(v, u);
            (psi - d2, d2)
        }
    }
}

impl CesReduced {
    /// Back to structural CES when both exponents agree to `rel_tol`.
    pub fn structural(&self, rel_tol: f64) -> Result<Ces> {
        let mut sigma = Vec::with_capacity(self.g1.len());
        let mut psi = Vec::with_capacity(self.g1.len());
        for t in 0..self.g1.len() {
            let (a, b) = (self.exp_skill[t], self.exp_invest[t]);
            if (a - b).abs() > rel_tol * a.abs().max(b.abs()) {
                return Err(Error::WrongTechnology(format!(
                    "skill and investment exponents differ at period {t} ({a} vs {b})"
                )));
            }
            sigma.push(a);
            psi.push(self.outer[t] * a);
        }
        Ok(Ces {
            g1: self.g1.clone(),
            g2: self.g2.clone(),
            sigma,
            psi,
            shock_sd: self.shock_sd.clone(),
            kappa: self.kappa.clone(),
        })
    }
}

impl Technology {
    pub fn kind(&self) -> &'static str {
        match self {
            Technology::TransLog(_) => "trans_log",
            Technology::Ces(_) => "ces",
            Technology::CesReduced(_) => "ces_reduced",
        }
    }

    pub fn transitions(&self) -> usize {
        self.shock_sd().len()
    }

    pub fn shock_sd(&self) -> &[f64] {
        match self {
            Technology::TransLog(x) => &x.shock_sd,
            Technology::Ces(x) => &x.shock_sd,
            Technology::CesReduced(x) => &x.shock_sd,
        }
    }

    pub fn kappa(&self) -> &[f64] {
        match self {
            Technology::TransLog(x) => &x.kappa,
            Technology::Ces(x) => &x.kappa,
            Technology::CesReduced(x) => &x.kappa,
        }
    }

    /// Deterministic part of next-period log skill.
    #[inline]
    pub fn mean_next(&self, t: usize, x: f64, y: f64) -> f64 {
        match self {
            Technology::TransLog(p) => p.a[t] + p.g1[t] * x + p.g2[t] * y + p.g3[t] * x * y,
            Technology::Ces(p) => {
                p.psi[t] / p.sigma[t]
                    * lse2(p.g1[t].ln() + p.sigma[t] * x, p.g2[t].ln() + p.sigma[t] * y)
            }
            Technology::CesReduced(p) => {
                p.outer[t]
                    * lse2(
                        p.g1[t].ln() + p.exp_skill[t] * x,
                        p.g2[t].ln() + p.exp_invest[t] * y,
                    )
            }
        }
    }

    /// Partial derivatives of next-period log skill in the model's own units.
    pub fn log_derivatives(&self, t: usize, x: f64, y: f64) -> (f64, f64) {
        match self {
            Technology::TransLog(p) => (p.g1[t] + p.g3[t] * y, p.g2[t] + p.g3[t] * x),
            Technology::Ces(p) => p.log_derivatives(t, x, y),
            Technology::CesReduced(p) => {
                let u = p.g1[t].ln() + p.exp_skill[t] * x;
                let v = p.g2[t].ln() + p.exp_invest[t] * y;
                let s = share2(u, v);
                (
                    p.outer[t] * p.exp_skill[t] * s,
                    p.outer[t] * p.exp_invest[t] * (1.0 - s),
                )
            }
        }
    }

    fn validate(&self, key: &str, transitions: usize) -> Result<()> {
        let len_ok = |name: &str, v: &[f64]| -> Result<()> {
            if v.len() != transitions {
                return Err(Error::invalid(
                    format!("{key}.{name}"),
                    format!("expected {transitions} entries"),
                ));
            }
            if let Some(t) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::invalid(
                    format!("{key}.{name}[{t}]"),
                    "must be finite",
                ));
            }
            Ok(())
        };
        let positive = |name: &str, v: &[f64]| -> Result<()> {
            if let Some(t) = v.iter().position(|x| !(*x > 0.0)) {
                return Err(Error::invalid(
                    format!("{key}.{name}[{t}]"),
                    "must be positive",
                ));
            }
            Ok(())
        };
        let nonzero = |name: &str, v: &[f64]| -> Result<()> {
            if let Some(t) = v.iter().position(|x| *x == 0.0) {
                return Err(Error::invalid(
                    format!("{key}.{name}[{t}]"),
                    "must be nonzero",
                ));
            }
            Ok(())
        };
        len_ok("shock_sd", self.shock_sd())?;
        len_ok("kappa", self.kappa())?;
        if let Some(t) = self.shock_sd().iter().position(|x| !(*x >= 0.0)) {
            return Err(Error::invalid(
                format!("{key}.shock_sd[{t}]"),
                "must be nonnegative",
            ));
        }
        match self {
            Technology::TransLog(p) => {
                for (n, v) in [("a", &p.a), ("g1", &p.g1), ("g2", &p.g2), ("g3", &p.g3)] {
                    len_ok(n, v)?;
                }
            }
            Technology::Ces(p) => {
                for (n, v) in [
                    ("g1", &p.g1),
                    ("g2", &p.g2),
                    ("sigma", &p.sigma),
                    ("psi", &p.psi),
                ] {
                    len_ok(n, v)?;
                }
                positive("g1", &p.g1)?;
                positive("g2", &p.g2)?;
                positive("psi", &p.psi)?;
                nonzero("sigma", &p.sigma)?;
            }
            Technology::CesReduced(p) => {
                for (n, v) in [
                    ("g1", &p.g1),
                    ("g2", &p.g2),
                    ("exp_skill", &p.exp_skill),
                    ("exp_invest", &p.exp_invest),
                    ("outer", &p.outer),
                ] {
                    len_ok(n, v)?;
                }
                positive("g1", &p.g1)?;
                positive("g2", &p.g2)?;
                nonzero("exp_skill", &p.exp_skill)?;
                nonzero("exp_invest", &p.exp_invest)?;
                nonzero("outer", &p.outer)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Investment {
    pub b0: Vec<f64>,
    pub b1: Vec<f64>,
    pub b2: Vec<f64>,
    pub eta_sd: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Anchor {
    pub rho0: f64,
    pub rho1: f64,
    pub eta_q_sd: f64,
}

/// Full structural parameterization. `init` is the law of `(ln θ_0, ln Y)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Number of transitions T.
    pub periods: usize,
    pub tech: Technology,
    pub measurement: Measurement,
    pub investment: Investment,
    pub anchor: Anchor,
    pub init: MixtureModel,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let t = self.periods;
        if t < 1 {
            return Err(Error::invalid(
                "spec.periods",
                "need at least one transition",
            ));
        }
        self.tech.validate("spec.tech", t)?;
        self.measurement
            .skill
            .validate("spec.measurement.skill", t + 1)?;
        self.measurement
            .invest
            .validate("spec.measurement.invest", t)?;
        let inv = &self.investment;
        for (n, v) in [
            ("b0", &inv.b0),
            ("b1", &inv.b1),
            ("b2", &inv.b2),
            ("eta_sd", &inv.eta_sd),
        ] {
            if v.len() != t {
                return Err(Error::invalid(
                    format!("spec.investment.{n}"),
                    format!("expected {t} entries"),
                ));
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::invalid(
                    format!("spec.investment.{n}[{i}]"),
                    "must be finite",
                ));
            }
        }
        if let Some(i) = inv.eta_sd.iter().position(|x| !(*x >= 0.0)) {
            return Err(Error::invalid(
                format!("spec.investment.eta_sd[{i}]"),
                "must be nonnegative",
            ));
        }
        for s in 0..t {
            let need = (self.tech.kappa()[s] * inv.eta_sd[s]).abs();
            if self.tech.shock_sd()[s] < need * (1.0 - 1e-12) {
                return Err(Error::invalid(
                    format!("spec.tech.shock_sd[{s}]"),
                    format!("total shock sd must be at least |kappa| * eta_sd = {need}"),
                ));
            }
        }
        let a = &self.anchor;
        if !(a.rho1 != 0.0 && a.rho1.is_finite() && a.rho0.is_finite()) {
            return Err(Error::invalid(
                "spec.anchor.rho1",
                "must be finite and nonzero",
            ));
        }
        if !(a.eta_q_sd >= 0.0) {
            return Err(Error::invalid(
                "spec.anchor.eta_q_sd",
                "must be nonnegative",
            ));
        }
        self.init.validate("spec.init")?;
        if self.init.dim() != 2 {
            return Err(Error::invalid(
                "spec.init",
                "initial law must be over (ln theta_0, ln Y)",
            ));
        }
        Ok(())
    }

    pub fn ces(&self) -> Option<&Ces> {
        match &self.tech {
            Technology::Ces(c) => Some(c),
            _ => None,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let spec: ModelSpec = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn fingerprint(&self) -> String {
        let text = toml::to_string(self).unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;

    #[test]
    fn toml_round_trip_is_lossless() {
        let mut spec = fixtures::mc_default();
        spec.investment.b1[0] = 0.1 + 0.2;
        spec.anchor.eta_q_sd = std::f64::consts::PI * 1e-7;
        let text = spec.to_toml().unwrap();
        let back = ModelSpec::from_toml(&text).unwrap();
        assert_eq!(spec, back);
        assert_eq!(spec.fingerprint(), back.fingerprint());
    }

    #[test]
    fn validation_names_key() {
        let mut spec = fixtures::mc_default();
        if let Technology::Ces(c) = &mut spec.tech {
            c.sigma[1] = 0.0;
        }
        let e = spec.validate().unwrap_err().to_string();
        assert!(e.contains("spec.tech.sigma[1]"), "{e}");
    }

    #[test]
    fn ces_derivatives_closed_form() {
        let c = Ces {
            g1: vec![0.5],
            g2: vec![0.5],
            sigma: vec![1.0],
            psi: vec![1.0],
            shock_sd: vec![0.0],
            kappa: vec![0.0],
        };
        let (a, b) = c.log_derivatives(0, 0.0, 0.0);
        assert_eq!((a, b), (0.5, 0.5));
        let (a, b) = c.log_derivatives(0, 0.0, 2f64.ln());
        assert!((a - 1.0 / 3.0).abs() < 1e-15 && (b - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn reduced_and_structural_agree() {
        let c = Ces {
            g1: vec![0.3],
            g2: vec![0.9],
            sigma: vec![-0.7],
            psi: vec![1.3],
            shock_sd: vec![0.1],
            kappa: vec![0.0],
        };
        let a = Technology::Ces(c.clone());
        let b = Technology::CesReduced(c.reduced());
        for (x, y) in [(0.1, 2.0), (-3.0, 1.5), (4.0, -2.0)] {
            assert!((a.mean_next(0, x, y) - b.mean_next(0, x, y)).abs() < 1e-13);
        }
        assert_eq!(c.reduced().structural(1e-12).unwrap(), c);
    }
}
