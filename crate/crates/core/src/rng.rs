//! Keyed random streams.
//!
//! Every random draw in the engine comes from a ChaCha stream selected by a
//! `(seed, domain, a, b)` key, so results never depend on thread scheduling or
//! on how many draws an unrelated component consumed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

pub type StreamRng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identifies one family of streams, e.g. one MCMC chain or one pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    seed: u64,
    domain: u64,
}

impl StreamKey {
    pub fn new(seed: u64, domain: u64) -> Self {
        Self { seed, domain }
    }

    /// Key for a named stage, stable across runs.
    pub fn named(seed: u64, name: &str) -> Self {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for b in name.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        Self::new(seed, h)
    }

    pub fn child(&self, index: u64) -> Self {
        Self::new(self.seed, splitmix(self.domain ^ splitmix(index.wrapping_add(1))))
    }

    /// Stream for counter `(major, minor)` within this family.
    pub fn stream(&self, major: u64, minor: u64) -> StreamRng {
        let mut key = [0u8; 32];
        let words = [
            splitmix(self.seed),
            splitmix(self.seed ^ splitmix(self.domain)),
            splitmix(self.domain.rotate_left(17) ^ 0x5851_F42D_4C95_7F2D),
            splitmix(self.seed.wrapping_add(self.domain).rotate_left(29)),
        ];
        for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(splitmix(major) ^ minor.rotate_left(40));
        rng
    }
}

/// Seed for a named component, so components sharing a user seed still get
/// unrelated chains.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    splitmix(seed ^ StreamKey::named(seed, name).domain)
}

/// Binomial draw; `p` is clamped into [0, 1].
pub fn binomial<R: Rng + ?Sized>(n: u64, p: f64, rng: &mut R) -> u64 {
    if n == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n;
    }
    Binomial::new(n, p).expect("valid binomial").sample(rng)
}

/// Multinomial draw of size `n` by sequential conditional binomials. `probs`
/// need not be normalized; the result always sums to `n` when any weight is
/// positive.
pub fn multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut out = vec![0u64; probs.len()];
    let mut left = n;
    let mut mass: f64 = probs.iter().sum();
    let last = probs.iter().rposition(|&p| p > 0.0);
    for (k, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if Some(k) == last {
            out[k] = left;
            break;
        }
        if p <= 0.0 {
            continue;
        }
        let draw = binomial(left, (p / mass).min(1.0), rng);
        out[k] = draw;
        left -= draw;
        mass -= p;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_stream() {
        let k = StreamKey::new(42, 3);
        let a: Vec<u64> = (0..4).map(|_| 0).scan(k.stream(5, 1), |r, _: u64| Some(r.random())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(k.stream(5, 1), |r, _: u64| Some(r.random())).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn different_counters_differ() {
        let k = StreamKey::new(42, 3);
        let x: u64 = k.stream(5, 1).random();
        let y: u64 = k.stream(5, 2).random();
        let z: u64 = k.stream(6, 1).random();
        let w: u64 = k.child(0).stream(5, 1).random();
        assert!(x != y && x != z && y != z && x != w);
    }

    #[test]
    fn multinomial_sums_and_respects_zeros() {
        let mut rng = StreamKey::new(1, 1).stream(0, 0);
        for n in [0u64, 1, 10, 1000] {
            let d = multinomial(n, &[0.2, 0.0, 0.8], &mut rng);
            assert_eq!(d.iter().sum::<u64>(), n);
            assert_eq!(d[1], 0);
        }
        assert_eq!(multinomial(7, &[0.0, 3.0, 0.0], &mut rng), vec![0, 7, 0]);
    }

    #[test]
    fn multinomial_mean_matches() {
        let mut rng = StreamKey::new(2, 1).stream(0, 0);
        let n = 20_000;
        let total: u64 = (0..n).map(|_| multinomial(10, &[1.0, 4.0], &mut rng)[0]).sum();
        let mean = total as f64 / n as f64;
        // expected 2, sd of the mean sqrt(10*0.2*0.8/n)
        assert!((mean - 2.0).abs() < 4.0 * (1.6f64 / n as f64).sqrt(), "{mean}");
    }
}
