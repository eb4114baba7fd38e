//! Structural parameter types and the exact maps between parameterizations.

pub mod anchor;
pub mod equiv;
pub mod fixtures;
pub mod normalized;
pub mod rescale;
pub mod restrict;
pub mod spec;
pub mod tilde;

pub use anchor::anchor_transform;
pub use equiv::{obs_equivalent, obs_equivalent_ces, obs_equivalent_translog};
pub use normalized::ces_normalized_form;
pub use rescale::{rescale, LatentMap};
pub use restrict::{CesScale, InvestRestriction, RestrictionSet, SkillRestriction};
pub use spec::{
    Anchor, Ces, CesReduced, Investment, Latent, MeasureBlock, Measurement, ModelSpec, Technology,
    TransLog,
};
pub use tilde::{
    from_tilde, from_tilde_ces, from_tilde_translog, reinstate_scales, to_tilde, to_tilde_ces,
    to_tilde_translog, FirstMeasureScales, TildeParams,
};
