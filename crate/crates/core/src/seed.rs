//! Stable seed derivation.
//!
//! Every stochastic step in the pipeline draws from a ChaCha8 stream whose
//! seed is derived from a parent seed and a label: `derive(parent, label)` is
//! FNV-1a over the label bytes, xored with the parent, then passed through the
//! SplitMix64 finalizer. The construction is fixed so seeds are reproducible
//! across platforms and releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(parent: u64, label: &str) -> u64 {
    let mut h = FNV_OFFSET;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix64(h ^ splitmix64(parent))
}

pub fn derive_index(parent: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive(parent, label) ^ splitmix64(index.wrapping_add(1)))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        assert_eq!(derive(7, "train-gan"), derive(7, "train-gan"));
        assert_ne!(derive(7, "train-gan"), derive(7, "project"));
        assert_ne!(derive(7, "train-gan"), derive(8, "train-gan"));
        assert_ne!(derive_index(7, "x", 0), derive_index(7, "x", 1));
        // Pinned so an accidental change to the construction is caught.
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    }
}
