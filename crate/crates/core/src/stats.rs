//! Small numeric helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};
use std::sync::OnceLock;

fn std_normal() -> &'static Normal {
    static N: OnceLock<Normal> = OnceLock::new();
    N.get_or_init(|| Normal::new(0.0, 1.0).expect("unit normal"))
}

pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

/// Inverse normal cdf, polished with Halley steps to near machine precision.
pub fn norm_quantile(p: f64) -> f64 {
    let mut x = std_normal().inverse_cdf(p);
    if !x.is_finite() {
        return x;
    }
    for _ in 0..2 {
        let e = norm_cdf(x) - p;
        let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// `ln(exp(u) + exp(v))` without overflow.
#[inline]
pub fn lse2(u: f64, v: f64) -> f64 {
    if u >= v {
        u + (v - u).exp().ln_1p()
    } else {
        v + (u - v).exp().ln_1p()
    }
}

/// `exp(u) / (exp(u) + exp(v))`.
#[inline]
pub fn share2(u: f64, v: f64) -> f64 {
    1.0 / (1.0 + (v - u).exp())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with divisor n.
pub fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

pub fn sd(x: &[f64]) -> f64 {
    var(x).sqrt()
}

pub fn cov(x: &[f64], y: &[f64]) -> f64 {
    let mx = mean(x);
    let my = mean(y);
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / x.len() as f64
}

/// Empirical quantile of sorted data (linear interpolation between order statistics).
pub fn sorted_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Fraction of sorted data at or below x.
pub fn sorted_cdf(sorted: &[f64], x: f64) -> f64 {
    sorted.partition_point(|v| *v <= x) as f64 / sorted.len() as f64
}

/// Radical-inverse Halton point `index` in `dim` dimensions, shifted off zero.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
    assert!(dim <= PRIMES.len(), "halton dimension too large");
    (0..dim)
        .map(|d| {
            let b = PRIMES[d];
            let mut f = 1.0;
            let mut r = 0.0;
            let mut i = index + 1;
            while i > 0 {
                f /= b as f64;
                r += f * (i % b) as f64;
                i /= b;
            }
            r
        })
        .collect()
}

/// Bisection for an increasing function on `[lo, hi]`; `None` if the bracket fails.
pub fn bisect_increasing<F: Fn(f64) -> f64>(
    f: F,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    max_iter: usize,
) -> Option<f64> {
    let flo = f(lo);
    let fhi = f(hi);
    if !(flo <= 0.0 && fhi >= 0.0) {
        return None;
    }
    for _ in 0..max_iter {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= tol {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_is_stable() {
        assert!((lse2(1000.0, 1000.0) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!((lse2(-1000.0, 0.0)).abs() < 1e-300);
        assert!((lse2(0.3, -0.2) - (0.3f64.exp() + (-0.2f64).exp()).ln()).abs() < 1e-15);
    }

    #[test]
    fn normal_quantile_inverts_cdf() {
        for p in [0.001, 0.1, 0.5, 0.9, 0.999] {
            assert!((norm_cdf(norm_quantile(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn halton_points_in_unit_cube() {
        for i in 0..100 {
            for v in halton(i, 5) {
                assert!(v > 0.0 && v < 1.0);
            }
        }
        assert_eq!(halton(0, 2), vec![0.5, 1.0 / 3.0]);
    }

    #[test]
    fn bisection_finds_root() {
        let r = bisect_increasing(|x| x * x * x - 2.0, 0.0, 2.0, 1e-14, 200).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-12);
        assert!(bisect_increasing(|x| x + 10.0, 0.0, 1.0, 1e-12, 100).is_none());
    }

    #[test]
    fn sorted_helpers() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(sorted_cdf(&s, 2.5), 0.5);
        assert_eq!(sorted_quantile(&s, 0.5), 2.5);
    }
}
