//! Affine changes of the latent log-scales.
//!
//! A [`LatentMap`] says how the old log-latents are written in terms of
//! new ones: `old ln θ_t = c_t + d_t · new ln θ_t` and
//! `old ln I_t = e_t + f_t · new ln I_t`. [`rescale`] returns the model
//! for the new latents that generates exactly the same observables.

use super::spec::{CesReduced, ModelSpec, Technology, TransLog};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LatentMap {
    /// `c_t`, t = 0..=T.
    pub skill_shift: Vec<f64>,
    /// `d_t`, t = 0..=T.
    pub skill_scale: Vec<f64>,
    /// `e_t`, t = 0..T.
    pub invest_shift: Vec<f64>,
    /// `f_t`, t = 0..T.
    pub invest_scale: Vec<f64>,
}

impl LatentMap {
    pub fn identity(periods: usize) -> Self {
        LatentMap {
            skill_shift: vec![0.0; periods + 1],
            skill_scale: vec![1.0; periods + 1],
            invest_shift: vec![0.0; periods],
            invest_scale: vec![1.0; periods],
        }
    }

    /// Map whose new latents are the first-measure indices `μ + λ ln(latent)`.
    pub fn to_first_measure(spec: &ModelSpec) -> Self {
        let m = &spec.measurement;
        let f = |mu: &Vec<Vec<f64>>, la: &Vec<Vec<f64>>| -> (Vec<f64>, Vec<f64>) {
            mu.iter()
                .zip(la)
                .map(|(u, l)| (-u[0] / l[0], 1.0 / l[0]))
                .unzip()
        };
        let (skill_shift, skill_scale) = f(&m.skill.mu, &m.skill.lambda);
        let (invest_shift, invest_scale) = f(&m.invest.mu, &m.invest.lambda);
        LatentMap {
            skill_shift,
            skill_scale,
            invest_shift,
            invest_scale,
        }
    }
}

pub fn rescale(spec: &ModelSpec, map: &LatentMap) -> Result<ModelSpec> {
    let nt = spec.periods;
    if map.skill_shift.len() != nt + 1
        || map.skill_scale.len() != nt + 1
        || map.invest_shift.len() != nt
        || map.invest_scale.len() != nt
    {
        return Err(Error::invalid(
            "latent map",
            "length does not match the number of periods",
        ));
    }
    for t in 0..=nt {
        if map.skill_scale[t] == 0.0 || !map.skill_scale[t].is_finite() {
            return Err(Error::ZeroDenominator {
                what: "skill scale",
                period: t,
            });
        }
    }
    for t in 0..nt {
        if map.invest_scale[t] == 0.0 || !map.invest_scale[t].is_finite() {
            return Err(Error::ZeroDenominator {
                what: "investment scale",
                period: t,
            });
        }
    }
    let (c, d, e, f) = (
        &map.skill_shift,
        &map.skill_scale,
        &map.invest_shift,
        &map.invest_scale,
    );

    let tech = match &spec.tech {
        Technology::TransLog(p) => Technology::TransLog(translog(p, map)),
        Technology::CesReduced(p) => Technology::CesReduced(reduced(p, map)?),
        Technology::Ces(p) => {
            let r = reduced(&p.reduced(), map)?;
            Technology::Ces(r.structural(1e-9)?)
        }
    };

    let mut out = spec.clone();
    out.tech = tech;

    let meas = &mut out.measurement;
    for t in 0..=nt {
        for j in 0..meas.skill.measures() {
            let l = meas.skill.lambda[t][j];
            meas.skill.mu[t][j] += l * c[t];
            meas.skill.lambda[t][j] = l * d[t];
        }
    }
    for t in 0..nt {
        for j in 0..meas.invest.measures() {
            let l = meas.invest.lambda[t][j];
            meas.invest.mu[t][j] += l * e[t];
            meas.invest.lambda[t][j] = l * f[t];
        }
    }

    let inv = &mut out.investment;
    for t in 0..nt {
        let (b0, b1, b2) = (inv.b0[t], inv.b1[t], inv.b2[t]);
        inv.b0[t] = (b0 + b1 * c[t] - e[t]) / f[t];
        inv.b1[t] = b1 * d[t] / f[t];
        inv.b2[t] = b2 / f[t];
        inv.eta_sd[t] /= f[t].abs();
    }

    let a = &mut out.anchor;
    a.rho0 += a.rho1 * c[nt];
    a.rho1 *= d[nt];

    out.init = spec.init.affine(&[-c[0] / d[0], 0.0], &[1.0 / d[0], 1.0]);
    Ok(out)
}

fn translog(p: &TransLog, map: &LatentMap) -> TransLog {
    let (c, d, e, f) = (
        &map.skill_shift,
        &map.skill_scale,
        &map.invest_shift,
        &map.invest_scale,
    );
    let mut q = p.clone();
    for t in 0..p.a.len() {
        let dn = d[t + 1];
        q.a[t] = (p.a[t] + p.g1[t] * c[t] + p.g2[t] * e[t] + p.g3[t] * c[t] * e[t] - c[t + 1]) / dn;
        q.g1[t] = (p.g1[t] + p.g3[t] * e[t]) * d[t] / dn;
        q.g2[t] = (p.g2[t] + p.g3[t] * c[t]) * f[t] / dn;
        q.g3[t] = p.g3[t] * d[t] * f[t] / dn;
        q.shock_sd[t] = p.shock_sd[t] / dn.abs();
        q.kappa[t] = p.kappa[t] * f[t] / dn;
    }
    q
}

fn reduced(p: &CesReduced, map: &LatentMap) -> Result<CesReduced> {
    let (c, d, e, f) = (
        &map.skill_shift,
        &map.skill_scale,
        &map.invest_shift,
        &map.invest_scale,
    );
    let mut q = p.clone();
    for t in 0..p.g1.len() {
        let o = p.outer[t];
        if o == 0.0 {
            return Err(Error::ZeroDenominator {
                what: "CES outer exponent",
                period: t,
            });
        }
        let dn = d[t + 1];
        let lift = c[t + 1] / o;
        q.g1[t] = (p.g1[t].ln() + p.exp_skill[t] * c[t] - lift).exp();
        q.g2[t] = (p.g2[t].ln() + p.exp_invest[t] * e[t] - lift).exp();
        if !(q.g1[t] > 0.0 && q.g1[t].is_finite() && q.g2[t] > 0.0 && q.g2[t].is_finite()) {
            return Err(Error::NonFinite {
                what: "rescaled CES weights",
                period: t,
            });
        }
        q.exp_skill[t] = p.exp_skill[t] * d[t];
        q.exp_invest[t] = p.exp_invest[t] * f[t];
        q.outer[t] = o / dn;
        q.shock_sd[t] = p.shock_sd[t] / dn.abs();
        q.kappa[t] = p.kappa[t] * f[t] / dn;
    }
    Ok(q)
}

/// Composition: applying `first` then `second` equals applying the result.
pub fn compose(first: &LatentMap, second: &LatentMap) -> LatentMap {
    let comp = |c1: &[f64], d1: &[f64], c2: &[f64], d2: &[f64]| -> (Vec<f64>, Vec<f64>) {
        (0..c1.len())
            .map(|t| (c1[t] + d1[t] * c2[t], d1[t] * d2[t]))
            .unzip()
    };
    let (skill_shift, skill_scale) = comp(
        &first.skill_shift,
        &first.skill_scale,
        &second.skill_shift,
        &second.skill_scale,
    );
    let (invest_shift, invest_scale) = comp(
        &first.invest_shift,
        &first.invest_scale,
        &second.invest_shift,
        &second.invest_scale,
    );
    LatentMap {
        skill_shift,
        skill_scale,
        invest_shift,
        invest_scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    fn sample_map() -> LatentMap {
        LatentMap {
            skill_shift: vec![0.3, -1.0, 2.0],
            skill_scale: vec![1.5, 0.7, 2.5],
            invest_shift: vec![0.4, -0.2],
            invest_scale: vec![1.2, 0.9],
        }
    }

    #[test]
    fn identity_map_is_identity() {
        let spec = fixtures::example1();
        let out = rescale(&spec, &LatentMap::identity(spec.periods)).unwrap();
        assert_eq!(out, spec);
    }

    #[test]
    fn translog_law_is_preserved_pointwise() {
        let spec = fixtures::random_translog(11);
        let map = sample_map();

        let out = rescale(&spec, &map).unwrap();
        for t in 0..2 {
            for (xn, yn) in [(0.2, -0.5), (1.3, 0.8)] {
                let xo = map.skill_shift[t] + map.skill_scale[t] * xn;
                let yo = map.invest_shift[t] + map.invest_scale[t] * yn;
                let next_old = spec.tech.mean_next(t, xo, yo);
                let next_new = out.tech.mean_next(t, xn, yn);
                assert!(close(
                    next_old,
                    map.skill_shift[t + 1] + map.skill_scale[t + 1] * next_new,
                    1e-12
                ));
            }
        }
    }

    #[test]
    fn reduced_law_is_preserved_pointwise() {
        let spec = fixtures::random_ces(5);
        let Technology::Ces(c) = &spec.tech else {
            unreachable!()
        };
        let mut reduced_spec = spec.clone();
        reduced_spec.tech = Technology::CesReduced(c.reduced());
        let map = sample_map();
        let out = rescale(&reduced_spec, &map).unwrap();
        for t in 0..2 {
            for (xn, yn) in [(0.2, -0.5), (1.3, 0.8)] {
                let xo = map.skill_shift[t] + map.skill_scale[t] * xn;
                let yo = map.invest_shift[t] + map.invest_scale[t] * yn;
                let old = reduced_spec.tech.mean_next(t, xo, yo);
                let new = out.tech.mean_next(t, xn, yn);
                assert!(close(
                    old,
                    map.skill_shift[t + 1] + map.skill_scale[t + 1] * new,
                    1e-12
                ));
            }
        }
    }

    #[test]
    fn structural_ces_needs_matching_scales() {
        let spec = fixtures::random_ces(5);
        assert!(matches!(
            rescale(&spec, &sample_map()),
            Err(Error::WrongTechnology(_))
        ));
        let mut map = sample_map();
        map.invest_scale = vec![map.skill_scale[0], map.skill_scale[1]];
        assert!(matches!(
            rescale(&spec, &map).unwrap().tech,
            Technology::Ces(_)
        ));
    }

    #[test]
    fn rescale_composes() {
        let spec = fixtures::random_translog(2);
        let m1 = sample_map();
        let mut m2 = sample_map();
        m2.skill_scale = vec![0.5, -2.0, 1.1];
        let a = rescale(&rescale(&spec, &m1).unwrap(), &m2).unwrap();
        let b = rescale(&spec, &compose(&m1, &m2)).unwrap();
        let (ta, tb) = (a.to_toml().unwrap(), b.to_toml().unwrap());
        let Technology::TransLog(pa) = &a.tech else {
            unreachable!()
        };
        let Technology::TransLog(pb) = &b.tech else {
            unreachable!()
        };
        for t in 0..2 {
            assert!(close(pa.a[t], pb.a[t], 1e-12) && close(pa.g2[t], pb.g2[t], 1e-12));
        }
        assert!(!ta.is_empty() && !tb.is_empty());
    }
}
