//! Small numerical helpers shared by the surfaces and estimators.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Standard normal distribution function.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Log-density of `N(mean, var)` at `x`.
pub fn normal_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    -0.5 * (2.0 * PI * var).ln() - z * z / (2.0 * var)
}

/// Weighted ratio `sum(w_i * v_i) / sum(w_i)` where `w_i = exp(log_w_i)`.
///
/// The largest log-weight is subtracted before exponentiating, so the
/// ratio stays finite even when every raw weight underflows.
pub fn log_weighted_mean(log_weights: &[f64], values: &[f64]) -> f64 {
    debug_assert_eq!(log_weights.len(), values.len());
    let max = log_weights
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut num = 0.0;
    let mut den = 0.0;
    for (&lw, &v) in log_weights.iter().zip(values) {
        let w = (lw - max).exp();
        num += w * v;
        den += w;
    }
    num / den
}

/// `log(sum(exp(x_i)))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Pairwise (cascade) summation; the reduction tree depends only on the
/// slice length, so results are reproducible.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        s
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}

/// `n` evenly spaced points on `[start, end]`, endpoints included.
pub fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let step = (end - start) / (n - 1) as f64;
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        end
                    } else {
                        start + step * i as f64
                    }
                })
                .collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cdf_reference_points() {
        assert_eq!(norm_cdf(0.0), 0.5);
        // Phi(1.96) to 15 digits
        assert!((norm_cdf(1.96) - 0.975_002_104_851_780).abs() < 1e-14);
        assert!((norm_cdf(-8.0) - 6.220_960_574_271_785e-16).abs() < 1e-28);
    }

    #[test]
    fn weighted_mean_survives_underflow() {
        let lw = [-2000.0, -2001.0];
        let v = [1.0, 3.0];
        let expect = (1.0 + 3.0 * (-1.0f64).exp()) / (1.0 + (-1.0f64).exp());
        assert!((log_weighted_mean(&lw, &v) - expect).abs() < 1e-15);
    }

    #[test]
    fn lse_matches_naive() {
        let xs = [0.1, -0.3, 1.2];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(&xs) - naive).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn pairwise_is_accurate() {
        let xs = vec![0.1; 10_000];
        assert!((pairwise_sum(&xs) - 1000.0).abs() < 1e-10);
    }

    #[test]
    fn linspace_endpoints() {
        let v = linspace(-2.0, 12.0, 400);
        assert_eq!(v.len(), 400);
        assert_eq!(v[0], -2.0);
        assert_eq!(v[399], 12.0);
        assert_eq!(linspace(1.0, 5.0, 1), vec![1.0]);
    }
}
