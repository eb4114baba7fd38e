//! Second step: transition and investment equations fitted on latent draws.

pub mod ces;
pub mod lm;

use crate::error::{Error, Result};
use crate::firststep::{LatentDraws, LoadingEstimates};
use crate::mixture::MixtureModel;
use crate::model::tilde::{from_tilde, FirstMeasureScales, TildeParams};
use crate::model::{
    Anchor, CesReduced, CesScale, InvestRestriction, Investment, MeasureBlock, Measurement,
    ModelSpec, RestrictionSet, SkillRestriction, Technology, TransLog,
};
use ces::{ReducedFit, Transition};
use lm::LmConfig;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Options for the CES least-squares fits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CesConfig {
    pub lm: LmConfig,
    /// Include the investment residual as a control; off when investment is known to be exogenous.
    pub control_function: bool,
}

impl Default for CesConfig {
    fn default() -> Self {
        CesConfig {
            lm: LmConfig::default(),
            control_function: true,
        }
    }
}

/// Least squares of `y` on the given columns (include a column of ones for an intercept).
pub fn ols(cols: &[&[f64]], y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = y.len();
    let k = cols.len();
    if n <= k {
        return Err(Error::RankDeficient(format!(
            "{n} observations for {k} regressors"
        )));
    }
    // Scale columns to unit norm before forming the normal equations.
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(j) = norms.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::RankDeficient(format!(
            "regressor {j} is identically zero"
        )));
    }
    let x = DMatrix::from_fn(n, k, |i, j| cols[j][i] / norms[j]);
    let yv = DVector::from_column_slice(y);
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-10 * smax) {
        return Err(Error::RankDeficient(format!(
            "design is collinear (condition number {:.3e})",
            smax / smin
        )));
    }
    let beta = svd
        .solve(&yv, 0.0)
        .map_err(|e| Error::RankDeficient(e.to_string()))?;
    let resid = &yv - &x * &beta;
    let coef = beta.iter().zip(&norms).map(|(b, s)| b / s).collect();
    Ok((coef, resid.iter().copied().collect()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvestFit {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub eta_sd: f64,
    pub resid: Vec<f64>,
}

/// `ln Ĩ_t` on a constant, `ln θ̃_t` and `ln Y`.
pub fn fit_investment(draws: &LatentDraws, t: usize) -> Result<InvestFit> {
    if t >= draws.periods() {
        return Err(Error::invalid(
            "period",
            format!("draws cover {} investment periods", draws.periods()),
        ));
    }
    let ones = vec![1.0; draws.len()];
    let (c, resid) = ols(
        &[&ones, &draws.ln_theta[t], &draws.ln_y],
        &draws.ln_invest[t],
    )?;
    Ok(InvestFit {
        b0: c[0],
        b1: c[1],
        b2: c[2],
        eta_sd: crate::stats::sd(&resid),
        resid,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Invariant,
    FixedScale,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Invariant => "invariant",
            Variant::FixedScale => "fixed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodDiag {
    pub objective: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct EstimatorOutput {
    pub variant: Variant,
    pub restrictions: RestrictionSet,
    /// Identified parameters in tilde units.
    pub tilde: TildeParams,
    /// Structural parameters under `restrictions`.
    pub spec: ModelSpec,
    /// `λ̂_{θ,t,1}`, t = 0..=T.
    pub skill_scale: Vec<f64>,
    /// `λ̂_{I,t,1}`, t = 0..T.
    pub invest_scale: Vec<f64>,
    pub kappa: Vec<f64>,
    pub diagnostics: Vec<PeriodDiag>,
}

impl EstimatorOutput {
    pub fn converged(&self) -> bool {
        self.diagnostics
            .iter()
            .all(|d| d.converged && d.objective.is_finite())
    }

    /// The tilde-unit latent mixture re-expressed in the structural units of `spec`.
    pub fn structural_law(&self, tilde_mix: &MixtureModel) -> MixtureModel {
        structural_law(&self.spec, tilde_mix)
    }

    pub fn record(&self) -> OutputRecord {
        OutputRecord {
            variant: self.variant,
            restrictions: self.restrictions,
            converged: self.converged(),
            skill_scale: self.skill_scale.clone(),
            invest_scale: self.invest_scale.clone(),
            kappa: self.kappa.clone(),
            diagnostics: self.diagnostics.clone(),
            spec: self.spec.clone(),
        }
    }

    /// Named scalar estimates, one per structural parameter of interest.
    pub fn flat_params(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let mut push = |name: &str, v: &[f64]| {
            for (t, x) in v.iter().enumerate() {
                out.push((format!("{name}_{t}"), *x));
            }
        };
        match &self.spec.tech {
            Technology::TransLog(g) => {
                for (k, v) in [
                    ("a", &g.a),
                    ("g1", &g.g1),
                    ("g2", &g.g2),
                    ("g3", &g.g3),
                    ("shock_sd", &g.shock_sd),
                ] {
                    push(k, v);
                }
            }
            Technology::Ces(c) => {
                for (k, v) in [
                    ("g1", &c.g1),
                    ("g2", &c.g2),
                    ("sigma", &c.sigma),
                    ("psi", &c.psi),
                    ("shock_sd", &c.shock_sd),
                ] {
                    push(k, v);
                }
            }
            Technology::CesReduced(c) => {
                for (k, v) in [
                    ("g1", &c.g1),
                    ("g2", &c.g2),
                    ("exp_skill", &c.exp_skill),
                    ("exp_invest", &c.exp_invest),
                    ("outer", &c.outer),
                ] {
                    push(k, v);
                }
            }
        }
        let inv = &self.spec.investment;
        for (k, v) in [
            ("b0", &inv.b0),
            ("b1", &inv.b1),
            ("b2", &inv.b2),
            ("eta_sd", &inv.eta_sd),
        ] {
            push(k, v);
        }
        push("kappa", &self.kappa);
        push("skill_scale", &self.skill_scale);
        push("invest_scale", &self.invest_scale);
        out
    }
}

/// Serializable summary of an [`EstimatorOutput`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub variant: Variant,
    pub restrictions: RestrictionSet,
    pub converged: bool,
    pub skill_scale: Vec<f64>,
    pub invest_scale: Vec<f64>,
    pub kappa: Vec<f64>,
    pub diagnostics: Vec<PeriodDiag>,
    pub spec: ModelSpec,
}

/// Maps a mixture over (ln θ̃, ln Ĩ, ln Y) to structural log units using the
/// first-measure intercepts and loadings of `spec`.
pub fn structural_law(spec: &ModelSpec, tilde_mix: &MixtureModel) -> MixtureModel {
    let s = FirstMeasureScales::of(spec);
    let mut shift = Vec::new();
    let mut scale = Vec::new();
    for (mu, la) in s
        .skill_mu
        .iter()
        .zip(&s.skill_lambda)
        .chain(s.invest_mu.iter().zip(&s.invest_lambda))
    {
        shift.push(-mu / la);
        scale.push(1.0 / la);
    }
    shift.push(0.0);
    scale.push(1.0);
    tilde_mix.affine(&shift, &scale)
}

/// Assembles a tilde model from fitted pieces.
fn tilde_spec(
    tech: Technology,
    investment: Investment,
    est: &LoadingEstimates,
    tilde_mix: &MixtureModel,
) -> Result<TildeParams> {
    let block = |b: &crate::firststep::LoadingBlock| MeasureBlock {
        mu: b.mu.clone(),
        lambda: b.lambda.clone(),
        error_sd: b
            .error_var
            .iter()
            .map(|r| r.iter().map(|v| v.max(0.0).sqrt()).collect())
            .collect(),
    };
    let d = tilde_mix.dim();
    let spec = ModelSpec {
        periods: investment.b0.len(),
        tech,
        measurement: Measurement {
            skill: block(&est.skill),
            invest: block(&est.invest),
        },
        investment,
        anchor: Anchor {
            rho0: est.rho0,
            rho1: est.rho1,
            eta_q_sd: est.q_error_var.max(0.0).sqrt(),
        },
        init: tilde_mix.select(&[0, d - 1]),
    };
    TildeParams::from_normalized(spec)
}

/// Structural parameters implied by tilde estimates under `restrictions`.
pub fn recover_structural(tilde: &TildeParams, restrictions: &RestrictionSet) -> Result<ModelSpec> {
    from_tilde(tilde, restrictions)
}

fn finish(
    variant: Variant,
    restrictions: RestrictionSet,
    tilde: TildeParams,
    diagnostics: Vec<PeriodDiag>,
) -> Result<EstimatorOutput> {
    let spec = recover_structural(&tilde, &restrictions)?;
    let s = FirstMeasureScales::of(&spec);
    Ok(EstimatorOutput {
        variant,
        restrictions,
        kappa: spec.tech.kappa().to_vec(),
        skill_scale: s.skill_lambda,
        invest_scale: s.invest_lambda,
        tilde,
        spec,
        diagnostics,
    })
}

fn check_draws(draws: &LatentDraws, est: &LoadingEstimates, mix: &MixtureModel) -> Result<usize> {
    let nt = draws.periods();
    if nt == 0 || est.invest.lambda.len() != nt || mix.dim() != 2 * nt + 2 {
        return Err(Error::invalid(
            "draws",
            "periods of draws, loadings and mixture disagree",
        ));
    }
    Ok(nt)
}

fn investment_block(fits: &[InvestFit]) -> Investment {
    Investment {
        b0: fits.iter().map(|f| f.b0).collect(),
        b1: fits.iter().map(|f| f.b1).collect(),
        b2: fits.iter().map(|f| f.b2).collect(),
        eta_sd: fits.iter().map(|f| f.eta_sd).collect(),
    }
}

/// Trans-log transitions by least squares with the investment residual as control.
pub fn fit_translog(
    draws: &LatentDraws,
    est: &LoadingEstimates,
    mix: &MixtureModel,
    restrictions: &RestrictionSet,
) -> Result<EstimatorOutput> {
    let nt = check_draws(draws, est, mix)?;
    let mut tech = TransLog {
        a: vec![0.0; nt],
        g1: vec![0.0; nt],
        g2: vec![0.0; nt],
        g3: vec![0.0; nt],
        shock_sd: vec![0.0; nt],
        kappa: vec![0.0; nt],
    };
    let mut fits = Vec::new();
    let mut diags = Vec::new();
    let ones = vec![1.0; draws.len()];
    for t in 0..nt {
        let inv = fit_investment(draws, t)?;
        let (x, y) = (&draws.ln_theta[t], &draws.ln_invest[t]);
        let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
        let (c, resid) = ols(&[&ones, x, y, &xy, &inv.resid], &draws.ln_theta[t + 1])?;
        tech.a[t] = c[0];
        tech.g1[t] = c[1];
        tech.g2[t] = c[2];
        tech.g3[t] = c[3];
        tech.kappa[t] = c[4];
        tech.shock_sd[t] = (crate::stats::var(&resid) + (c[4] * inv.eta_sd).powi(2)).sqrt();
        diags.push(PeriodDiag {
            objective: crate::stats::var(&resid),
            iterations: 1,
            grad_norm: 0.0,
            converged: true,
        });
        fits.push(inv);
    }
    let tilde = tilde_spec(
        Technology::TransLog(tech),
        investment_block(&fits),
        est,
        mix,
    )?;
    finish(Variant::Invariant, *restrictions, tilde, diags)
}

fn ces_fit(
    draws: &LatentDraws,
    est: &LoadingEstimates,
    mix: &MixtureModel,
    variant: Variant,
    restrictions: RestrictionSet,
    cfg: CesConfig,
) -> Result<EstimatorOutput> {
    let nt = check_draws(draws, est, mix)?;
    let mut red = CesReduced {
        g1: vec![0.0; nt],
        g2: vec![0.0; nt],
        exp_skill: vec![0.0; nt],
        exp_invest: vec![0.0; nt],
        outer: vec![0.0; nt],
        shock_sd: vec![0.0; nt],
        kappa: vec![0.0; nt],
    };
    let mut fits = Vec::new();
    let mut diags = Vec::new();
    for t in 0..nt {
        let inv = fit_investment(draws, t)?;
        let d = Transition {
            x: &draws.ln_theta[t],
            y: &draws.ln_invest[t],
            z: &draws.ln_theta[t + 1],
            e: cfg.control_function.then_some(&inv.resid[..]),
        };
        let fitted = match variant {
            Variant::Invariant => ces::fit_invariant(&d, cfg.lm),
            Variant::FixedScale => ces::fit_fixed(&d, cfg.lm),
        };
        let (f, res): (ReducedFit, _) = fitted.ok_or_else(|| Error::NonFinite {
            what: "CES least squares from every start",
            period: t,
        })?;
        red.g1[t] = f.g1;
        red.g2[t] = f.g2;
        red.exp_skill[t] = f.exp_skill;
        red.exp_invest[t] = f.exp_invest;
        red.outer[t] = f.outer;
        red.kappa[t] = f.kappa;
        // The residual excludes the control term, so add its variance back.
        red.shock_sd[t] = (res.objective + (f.kappa * inv.eta_sd).powi(2)).sqrt();
        diags.push(PeriodDiag {
            objective: res.objective,
            iterations: res.iterations,
            grad_norm: res.grad_norm,
            converged: res.converged,
        });
        fits.push(inv);
    }
    let tilde = tilde_spec(
        Technology::CesReduced(red),
        investment_block(&fits),
        est,
        mix,
    )?;
    finish(variant, restrictions, tilde, diags)
}

/// CES in the invariant parameterization; relative scales are estimated and
/// then pinned down by the CES scale restriction in `restrictions`.
pub fn fit_ces_invariant(
    draws: &LatentDraws,
    est: &LoadingEstimates,
    mix: &MixtureModel,
    restrictions: &RestrictionSet,
    cfg: CesConfig,
) -> Result<EstimatorOutput> {
    if restrictions.ces_scale.is_none() {
        return Err(Error::Restrictions(format!(
            "CES estimation needs one of age_invariant_loading or psi_one; valid combinations are\n{}",
            RestrictionSet::valid_combinations()
        )));
    }
    ces_fit(draws, est, mix, Variant::Invariant, *restrictions, cfg)
}

/// Restrictions the fixed-scale estimator imposes: every first loading is one.
pub fn fixed_scale_restrictions() -> RestrictionSet {
    RestrictionSet::ces(
        SkillRestriction::AgeInvariantSkill,
        InvestRestriction::AgeInvariantInvest,
        CesScale::AgeInvariantLoading,
    )
}

/// Conventional estimator that takes the tilde scale as the structural one.
pub fn fit_ces_fixed_scale(
    draws: &LatentDraws,
    est: &LoadingEstimates,
    mix: &MixtureModel,
    cfg: CesConfig,
) -> Result<EstimatorOutput> {
    ces_fit(
        draws,
        est,
        mix,
        Variant::FixedScale,
        fixed_scale_restrictions(),
        cfg,
    )
}
