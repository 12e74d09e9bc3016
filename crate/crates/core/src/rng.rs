//! Seed derivation.
//!
//! Every random stream in an experiment hangs off one root seed. A child seed
//! is the root folded with an ordered list of string labels (controller name,
//! suite tag, purpose) through FNV-1a and finished with the SplitMix64
//! mixer. Streams that do not share labels are independent of each other, so
//! adding a controller to an experiment leaves the others' draws untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for all sampling in this crate.
pub type SimRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Fold a sequence of words into one well-mixed hash.
pub fn hash_words(words: impl IntoIterator<Item = u64>) -> u64 {
    words
        .into_iter()
        .fold(0x243f_6a88_85a3_08d3, |acc, w| mix64(acc ^ mix64(w)))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Child seed for `labels` under `root`.
pub fn derive_seed(root: u64, labels: &[&str]) -> u64 {
    hash_words(std::iter::once(root).chain(labels.iter().map(|l| fnv1a(l.as_bytes()))))
}

pub fn rng_for(root: u64, labels: &[&str]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(root, labels))
}

/// Uniform in [0, 1) from the top 53 bits of a hash.
pub fn unit_from_hash(h: u64) -> f64 {
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_separate_streams() {
        let a = derive_seed(7, &["seq-ucb1", "bandit"]);
        assert_eq!(a, derive_seed(7, &["seq-ucb1", "bandit"]));
        assert_ne!(a, derive_seed(7, &["seq-ts", "bandit"]));
        assert_ne!(a, derive_seed(8, &["seq-ucb1", "bandit"]));
        assert_ne!(derive_seed(1, &["ab", "c"]), derive_seed(1, &["a", "bc"]));
    }

    #[test]
    fn unit_range() {
        assert_eq!(unit_from_hash(0), 0.0);
        assert!(unit_from_hash(u64::MAX) < 1.0);
    }
}
