//! Univariate slice sampling with stepping out and shrinkage.

use crate::rng::StreamRng;
use rand::Rng;

const MAX_STEPS: usize = 32;
const MAX_SHRINKS: usize = 200;

/// One slice update of `x0` under `ln_f` restricted to `(lo, hi)`.
///
/// `width` is the initial bracket. If shrinkage exhausts its budget the
/// current point is returned, which keeps the target invariant.
pub fn slice_update(
    x0: f64,
    mut ln_f: impl FnMut(f64) -> f64,
    width: f64,
    lo: f64,
    hi: f64,
    rng: &mut StreamRng,
) -> f64 {
    let f0 = ln_f(x0);
    if !f0.is_finite() {
        return x0;
    }
    let level = f0 + rng.random::<f64>().ln();
    let mut left = x0 - width * rng.random::<f64>();
    let mut right = left + width;
    let j = rng.random_range(0..MAX_STEPS);
    let mut k = MAX_STEPS - 1 - j;
    for _ in 0..j {
        if left <= lo || ln_f(left) <= level {
            break;
        }
        left -= width;
    }
    while k > 0 && right < hi && ln_f(right) > level {
        right += width;
        k -= 1;
    }
    left = left.max(lo);
    right = right.min(hi);
    for _ in 0..MAX_SHRINKS {
        let x = rng.random_range(left..right);
        if x > lo && x < hi && ln_f(x) > level {
            return x;
        }
        if x < x0 {
            left = x;
        } else {
            right = x;
        }
        if right - left < 1e-14 * (1.0 + x0.abs()) {
            break;
        }
    }
    x0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn standard_normal_moments() {
        let mut rng = StreamKey::new(3, 0).stream(0, 0);
        let mut x = 0.0;
        let (mut s1, mut s2) = (0.0, 0.0);
        let n = 50_000;
        for _ in 0..n {
            x = slice_update(x, |v| -0.5 * v * v, 1.0, f64::NEG_INFINITY, f64::INFINITY, &mut rng);
            s1 += x;
            s2 += x * x;
        }
        let mean = s1 / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.03, "{mean}");
        assert!((var - 1.0).abs() < 0.04, "{var}");
    }

    #[test]
    fn bounded_uniform_stays_inside() {
        let mut rng = StreamKey::new(4, 0).stream(0, 0);
        let mut x = 0.5;
        let mut mean = 0.0;
        for _ in 0..20_000 {
            x = slice_update(x, |_| 0.0, 0.3, 0.0, 1.0, &mut rng);
            assert!(x > 0.0 && x < 1.0);
            mean += x / 20_000.0;
        }
        assert!((mean - 0.5).abs() < 0.02, "{mean}");
    }
}
