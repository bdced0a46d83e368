//! Truncated normal distribution on an interval `(lo, hi)`.
//!
//! Sampling follows Robert's mixed rejection scheme: a plain normal proposal
//! when the interval holds most of the mass, a translated exponential in the
//! tails and a uniform proposal for short intervals.

use crate::special::{ln_norm_interval, normal_ln_pdf};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
    ln_mass: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum TruncNormError {
    #[error("standard deviation must be positive and finite, got {0}")]
    BadScale(f64),
    #[error("empty truncation interval ({0}, {1})")]
    EmptyInterval(f64, f64),
    #[error("non-finite location {0}")]
    BadMean(f64),
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64, lo: f64, hi: f64) -> Result<Self, TruncNormError> {
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(TruncNormError::BadScale(sd));
        }
        if !mean.is_finite() {
            return Err(TruncNormError::BadMean(mean));
        }
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(TruncNormError::EmptyInterval(lo, hi));
        }
        let ln_mass = ln_norm_interval((lo - mean) / sd, (hi - mean) / sd);
        Ok(Self { mean, sd, lo, hi, ln_mass })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    /// Log of the normal mass inside the interval.
    pub fn ln_mass(&self) -> f64 {
        self.ln_mass
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x > self.lo && x < self.hi) {
            return f64::NEG_INFINITY;
        }
        normal_ln_pdf(x, self.mean, self.sd) - self.ln_mass
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let a = (self.lo - self.mean) / self.sd;
        let b = (self.hi - self.mean) / self.sd;
        let z = if a >= 0.0 {
            sample_upper_tail(a, b, rng)
        } else if b <= 0.0 {
            -sample_upper_tail(-b, -a, rng)
        } else {
            sample_straddling(a, b, rng)
        };
        // guard against the rounding of mean + sd * z onto an endpoint
        let x = self.mean + self.sd * z;
        x.clamp(next_up(self.lo), next_down(self.hi))
    }
}

fn next_up(x: f64) -> f64 {
    if x.is_infinite() {
        x
    } else {
        x.next_up()
    }
}

fn next_down(x: f64) -> f64 {
    if x.is_infinite() {
        x
    } else {
        x.next_down()
    }
}

fn sample_straddling<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    if b - a >= (2.0 * std::f64::consts::PI).sqrt() {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z > a && z < b {
                return z;
            }
        }
    }
    loop {
        let z = a + (b - a) * rng.random::<f64>();
        if rng.random::<f64>().ln() <= -0.5 * z * z {
            return z;
        }
    }
}

/// Standard normal restricted to `(a, b)` with `0 ≤ a < b ≤ ∞`.
fn sample_upper_tail<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    let rate = 0.5 * (a + (a * a + 4.0).sqrt());
    let exp_cutoff = a + 2.0 * std::f64::consts::E.sqrt() / (a + (a * a + 4.0).sqrt())
        * ((a * a - a * (a * a + 4.0).sqrt()) / 4.0).exp();
    if b > exp_cutoff {
        loop {
            let e: f64 = Exp1.sample(rng);
            let z = a + e / rate;
            if z >= b {
                continue;
            }
            let d = z - rate;
            if rng.random::<f64>().ln() <= -0.5 * d * d {
                return z;
            }
        }
    }
    loop {
        let z = a + (b - a) * rng.random::<f64>();
        if rng.random::<f64>().ln() <= 0.5 * (a * a - z * z) {
            return z;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Composite Simpson over (lo, hi) of the untruncated pdf, an independent
    /// route to the normalizing mass.
    fn simpson_mass(mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| normal_ln_pdf(x, mean, sd).exp();
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let x = lo + i as f64 * h;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * h / 3.0
    }

    #[test]
    fn density_is_pdf_over_mass_at_interval_centre() {
        let bound = -(0.05f64).ln();
        let mean = bound / 2.0;
        let tn = TruncatedNormal::new(mean, 0.8, 0.0, bound).unwrap();
        let mass = simpson_mass(mean, 0.8, 0.0, bound);
        let expect = normal_ln_pdf(mean, mean, 0.8).exp() / mass;
        assert!((tn.ln_pdf(mean).exp() - expect).abs() < 1e-8);
    }

    #[test]
    fn outside_interval_is_impossible() {
        let tn = TruncatedNormal::new(0.3, 1.0, 0.0, 2.0).unwrap();
        assert_eq!(tn.ln_pdf(-0.1), f64::NEG_INFINITY);
        assert_eq!(tn.ln_pdf(2.5), f64::NEG_INFINITY);
        assert_eq!(tn.ln_pdf(0.0), f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(TruncatedNormal::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(TruncatedNormal::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(TruncatedNormal::new(f64::NAN, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn samples_match_moments_in_every_regime() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // (mean, sd, lo, hi): bulk, far upper tail, far lower tail, narrow
        let cases = [
            (0.5, 1.0, 0.0, 3.0),
            (-6.0, 1.0, 0.0, 4.0),
            (9.0, 1.0, 0.0, 3.0),
            (1.0, 5.0, 0.9, 1.1),
            (0.0, 1.0, 5.0, f64::INFINITY),
        ];
        for &(m, s, lo, hi) in &cases {
            let tn = TruncatedNormal::new(m, s, lo, hi).unwrap();
            let n = 40_000;
            let draws: Vec<f64> = (0..n).map(|_| tn.sample(&mut rng)).collect();
            assert!(draws.iter().all(|&x| x > lo && x < hi));
            let mc_mean = draws.iter().sum::<f64>() / n as f64;
            // quadrature mean
            let top = if hi.is_finite() { hi } else { lo + 20.0 * s };
            let k = 20_000;
            let h = (top - lo) / k as f64;
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..k {
                let x = lo + (i as f64 + 0.5) * h;
                let w = (tn.ln_pdf(x)).exp();
                num += w * x;
                den += w;
            }
            let exact = num / den;
            let var = draws.iter().map(|x| (x - mc_mean).powi(2)).sum::<f64>() / n as f64;
            let se = (var / n as f64).sqrt();
            assert!(
                (mc_mean - exact).abs() < 5.0 * se + 1e-9,
                "case {m},{s},{lo},{hi}: {mc_mean} vs {exact}"
            );
        }
    }
}
