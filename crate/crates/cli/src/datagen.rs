//! Synthetic dataset generation for fixtures and benchmarks.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` distinct uniform-random u64 keys, sorted ascending. The stream
/// is a pure function of the seed.
pub fn generate_uniform_keys(count: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keys = BTreeSet::new();
    while keys.len() < count {
        keys.insert(rng.next_u64());
    }
    keys.into_iter().collect()
}

/// Writes keys as raw little-endian u64s, the ingestion wire format.
pub fn write_keys_file(path: &Path, keys: &[u64]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for k in keys {
        out.write_all(&k.to_le_bytes())?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keys_are_sorted_distinct_and_seed_stable() {
        let a = generate_uniform_keys(1000, 42);
        let b = generate_uniform_keys(1000, 42);
        assert_eq!(a, b);
        assert_eq!(a.len(), 1000);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        let c = generate_uniform_keys(1000, 43);
        assert_ne!(a, c);
    }
}
