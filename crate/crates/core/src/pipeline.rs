//! First and second step chained on one panel.

use crate::error::{Error, Result};
use crate::firststep::{
    draw_latent, estimate_loadings, fit_latent_mixture, EmConfig, LatentDraws, LoadingEstimates,
    MixtureFit,
};
use crate::mixture::MixtureModel;
use crate::model::{CesScale, InvestRestriction, RestrictionSet, SkillRestriction};
use crate::rng::child_seed;
use crate::secondstep::{
    fit_ces_fixed_scale, fit_ces_invariant, fit_translog, CesConfig, EstimatorOutput, Variant,
};
use crate::simulate::LatentPanel;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TechKind {
    TransLog,
    Ces,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub technology: TechKind,
    /// Mixture components for the latent law.
    pub components: usize,
    /// Draws from the fitted law; `None` uses the sample size.
    pub draws: Option<usize>,
    pub em: EmConfig,
    pub ces: CesConfig,
    pub restrictions: RestrictionSet,
    pub estimators: Vec<Variant>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            technology: TechKind::Ces,
            components: 2,
            draws: None,
            em: EmConfig::default(),
            ces: CesConfig::default(),
            restrictions: RestrictionSet::ces(
                SkillRestriction::AgeInvariantSkill,
                InvestRestriction::AgeInvariantInvest,
                CesScale::PsiOne,
            ),
            estimators: vec![Variant::Invariant, Variant::FixedScale],
        }
    }
}

#[derive(Clone, Debug)]
pub struct FirstStep {
    pub loadings: LoadingEstimates,
    pub fit: MixtureFit,
    pub draws: LatentDraws,
}

#[derive(Clone, Debug)]
pub struct Estimates {
    pub first: FirstStep,
    pub outputs: Vec<EstimatorOutput>,
}

impl Estimates {
    pub fn output(&self, v: Variant) -> Option<&EstimatorOutput> {
        self.outputs.iter().find(|o| o.variant == v)
    }

    /// Estimated latent law in the structural units of estimator `v`.
    pub fn latent_law(&self, v: Variant) -> Option<MixtureModel> {
        self.output(v)
            .map(|o| o.structural_law(&self.first.fit.mixture))
    }
}

const EM_TAG: u64 = 0x454d;
const DRAW_TAG: u64 = 0x4452_4157;

pub fn first_step(panel: &LatentPanel, cfg: &PipelineConfig, seed: u64) -> Result<FirstStep> {
    let loadings = estimate_loadings(panel)?;
    let em = EmConfig {
        seed: child_seed(seed, EM_TAG),
        ..cfg.em.clone()
    };
    let fit = fit_latent_mixture(panel, &loadings, cfg.components, &em)?;
    let draws = draw_latent(
        &fit.mixture,
        cfg.draws.unwrap_or(panel.n),
        child_seed(seed, DRAW_TAG),
    )?;
    Ok(FirstStep {
        loadings,
        fit,
        draws,
    })
}

pub fn second_step(first: &FirstStep, cfg: &PipelineConfig) -> Result<Vec<EstimatorOutput>> {
    let (d, l, m) = (&first.draws, &first.loadings, &first.fit.mixture);
    match cfg.technology {
        TechKind::TransLog => {
            let mut r = cfg.restrictions;
            r.ces_scale = None;
            Ok(vec![fit_translog(d, l, m, &r)?])
        }
        TechKind::Ces => {
            if cfg.estimators.is_empty() {
                return Err(Error::invalid(
                    "estimators",
                    "select at least one estimator",
                ));
            }
            cfg.estimators
                .iter()
                .map(|v| match v {
                    Variant::Invariant => fit_ces_invariant(d, l, m, &cfg.restrictions, cfg.ces),
                    Variant::FixedScale => fit_ces_fixed_scale(d, l, m, cfg.ces),
                })
                .collect()
        }
    }
}

pub fn estimate(panel: &LatentPanel, cfg: &PipelineConfig, seed: u64) -> Result<Estimates> {
    let first = first_step(panel, cfg, seed)?;
    let outputs = second_step(&first, cfg)?;
    Ok(Estimates { first, outputs })
}
