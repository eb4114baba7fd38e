use super::rescale::{rescale, LatentMap};
use super::spec::ModelSpec;
use super::tilde::TildeParams;
use crate::error::{Error, Result};

/// Re-expresses skills in adult-outcome units `ln ϑ_t = ρ̃0 + ρ̃1 ln θ̃_t`,
/// so the anchor equation becomes `Q = ln ϑ_T + η_Q`. Investment units are
/// left alone. CES models come back in reduced form.
pub fn anchor_transform(tilde: &TildeParams) -> Result<ModelSpec> {
    let spec = tilde.as_spec();
    let (r0, r1) = (spec.anchor.rho0, spec.anchor.rho1);
    if r1 == 0.0 || !r1.is_finite() {
        return Err(Error::ZeroDenominator {
            what: "anchor slope",
            period: spec.periods,
        });
    }
    let nt = spec.periods;
    let mut map = LatentMap::identity(nt);
    map.skill_shift = vec![-r0 / r1; nt + 1];
    map.skill_scale = vec![1.0 / r1; nt + 1];
    let mut out = rescale(spec, &map)?;
    out.anchor.rho0 = 0.0;
    out.anchor.rho1 = 1.0;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;
    use crate::model::spec::Technology;
    use crate::model::tilde::to_tilde;

    #[test]
    fn unit_anchor_is_identity() {
        let mut spec = fixtures::example1();
        spec.measurement
            .skill
            .lambda
            .iter_mut()
            .for_each(|r| r[0] = 1.0);
        let t = to_tilde(&spec).unwrap();
        assert_eq!(t.as_spec().anchor.rho1, 1.0);
        assert_eq!(anchor_transform(&t).unwrap(), *t.as_spec());
    }

    #[test]
    fn example1_anchored_investment_coefficient() {
        let t = to_tilde(&fixtures::example1()).unwrap();
        let a = anchor_transform(&t).unwrap();
        let Technology::TransLog(p) = &a.tech else {
            unreachable!()
        };
        assert!((p.g2[0] - 0.5).abs() < 1e-15);
        assert_eq!(a.anchor.rho1, 1.0);
    }
}
