use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Formats a float with 17 significant digits, enough to round-trip any f64.
pub(crate) fn g17(x: f64) -> String {
    format!("{x:.16e}")
}

/// The crate-wide seeded random source.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives a per-run seed from a master seed and a run index (splitmix64).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9e3779b97f4a7c15u64.wrapping_mul(index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Draws an index from a probability vector. Assumes the entries are
/// nonnegative and sum to 1 up to rounding; rounding slack goes to the last
/// index with positive mass.
pub(crate) fn sample_categorical<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g17_round_trips() {
        for &x in &[0.1, 1.0 / 3.0, 1e-300, -2.5e17, f64::MIN_POSITIVE] {
            let s = g17(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
    }

    #[test]
    fn derive_seed_distinct() {
        let a = derive_seed(42, 0);
        let b = derive_seed(42, 1);
        let c = derive_seed(43, 0);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(42, 0));
    }

    #[test]
    fn categorical_respects_support() {
        let mut rng = seeded_rng(7);
        let probs = [0.0, 0.5, 0.5, 0.0];
        for _ in 0..1000 {
            let i = sample_categorical(&probs, &mut rng);
            assert!(i == 1 || i == 2);
        }
    }
}
