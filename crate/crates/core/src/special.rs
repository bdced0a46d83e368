//! Log-densities, log-CDFs and small numeric helpers shared by the models.

use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;
use std::f64::consts::{LN_2, PI};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// `ln(n!)` for a (possibly huge) count.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)
}

/// Binomial log-pmf with exact handling of `p = 0` and `p = 1`.
pub fn binomial_ln_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n || !(0.0..=1.0).contains(&p) {
        return f64::NEG_INFINITY;
    }
    let success = if k == 0 {
        0.0
    } else if p == 0.0 {
        return f64::NEG_INFINITY;
    } else {
        k as f64 * p.ln()
    };
    let failure = if k == n {
        0.0
    } else if p == 1.0 {
        return f64::NEG_INFINITY;
    } else {
        (n - k) as f64 * (-p).ln_1p()
    };
    ln_choose(n, k) + success + failure
}

/// Poisson log-pmf; `lambda = 0` is a point mass at zero.
pub fn poisson_ln_pmf(k: u64, lambda: f64) -> f64 {
    if lambda < 0.0 || lambda.is_nan() {
        return f64::NAN;
    }
    if lambda == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * lambda.ln() - lambda - ln_factorial(k)
}

pub fn ln_beta_fn(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Beta log-density on the open unit interval.
pub fn beta_ln_pdf(x: f64, a: f64, b: f64) -> f64 {
    if !(x > 0.0 && x < 1.0) {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_beta_fn(a, b)
}

pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

/// Standard normal density.
pub fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

/// `ln Φ(z)` accurate far into the lower tail.
pub fn ln_norm_cdf(z: f64) -> f64 {
    if z > -20.0 {
        (0.5 * erfc(-z / std::f64::consts::SQRT_2)).ln()
    } else {
        // asymptotic Mills-ratio expansion
        let z2 = z * z;
        let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
        -0.5 * z2 - (-z).ln() - LN_SQRT_2PI + series.ln()
    }
}

/// `ln(Φ(b) − Φ(a))` for `a < b`.
pub fn ln_norm_interval(a: f64, b: f64) -> f64 {
    debug_assert!(a < b);
    if a >= 0.0 {
        // mirror into the lower tail where ln Φ is accurate
        return ln_norm_interval(-b, -a);
    }
    let lb = ln_norm_cdf(b);
    let la = ln_norm_cdf(a);
    if b > 0.0 {
        // Φ(b) − Φ(a) ≥ 1/2 − Φ(a) is far from cancellation
        (0.5 * erfc(-b / std::f64::consts::SQRT_2) - 0.5 * erfc(-a / std::f64::consts::SQRT_2)).ln()
    } else {
        lb + ln_one_minus_exp(la - lb)
    }
}

/// `ln(1 − e^x)` for `x ≤ 0`.
pub fn ln_one_minus_exp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Round to the nearest integer, ties to even.
pub fn round_half_even(x: f64) -> f64 {
    x.round_ties_even()
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Mean, 2.5% and 97.5% quantiles.
pub fn summarize(values: &[f64]) -> (f64, f64, f64) {
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (mean, quantile_sorted(&sorted, 0.025), quantile_sorted(&sorted, 0.975))
}
