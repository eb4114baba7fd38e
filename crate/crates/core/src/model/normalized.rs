use crate::error::{Error, Result};

/// Rewrites `(g1 θ^σ + g2 I^σ)^(1/σ)` as `Ā (γ̄ (θ/θ̄)^σ + (1-γ̄) (I/Ī)^σ)^(1/σ)`.
/// Returns `(γ̄, Ā)`.
pub fn ces_normalized_form(
    g1: f64,
    g2: f64,
    sigma: f64,
    theta_bar: f64,
    i_bar: f64,
) -> Result<(f64, f64)> {
    if !(g1 > 0.0 && g2 > 0.0) {
        return Err(Error::invalid("g1, g2", "CES weights must be positive"));
    }
    if sigma == 0.0 || !sigma.is_finite() {
        return Err(Error::invalid("sigma", "must be finite and nonzero"));
    }
    if !(theta_bar > 0.0 && i_bar > 0.0) {
        return Err(Error::invalid(
            "theta_bar, i_bar",
            "reference point must be positive",
        ));
    }
    let u = g1.ln() + sigma * theta_bar.ln();
    let v = g2.ln() + sigma * i_bar.ln();
    let gamma = crate::stats::share2(u, v);
    let a_bar = (crate::stats::lse2(u, v) / sigma).exp();
    Ok((gamma, a_bar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn unit_reference() {
        let (g, a) = ces_normalized_form(0.3, 0.9, -0.5, 1.0, 1.0).unwrap();
        assert!((g - 0.25).abs() < 1e-15);
        assert!((a - 1.2f64.powf(-2.0)).abs() < 1e-14);
    }

    #[test]
    fn hand_example() {
        let (g, a) = ces_normalized_form(0.5, 0.5, 1.0, 2.0, 1.0).unwrap();
        assert!((g - 2.0 / 3.0).abs() < 1e-15);
        assert!((a - 1.5).abs() < 1e-15);
    }

    #[test]
    fn forms_agree_pointwise() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let (g1, g2, s, tb, ib) = (0.7, 0.4, -0.8, 2.5, 0.6);
        let (gb, ab) = ces_normalized_form(g1, g2, s, tb, ib).unwrap();
        for _ in 0..50 {
            let th: f64 = rng.random_range(0.1..5.0);
            let inv: f64 = rng.random_range(0.1..5.0);
            let lhs = (g1 * th.powf(s) + g2 * inv.powf(s)).powf(1.0 / s);
            let rhs = ab * (gb * (th / tb).powf(s) + (1.0 - gb) * (inv / ib).powf(s)).powf(1.0 / s);
            assert!((lhs - rhs).abs() < 1e-12 * lhs.max(1.0));
        }
    }
}
