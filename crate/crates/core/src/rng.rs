//! Hierarchical, counter-based random streams.
//!
//! Every stream is keyed by a 64-bit root seed and a path of integers
//! (for example `[trial, stage, query, block]`). The key is expanded into a
//! ChaCha8 key, so two distinct paths give unrelated keystreams while the
//! same `(seed, path)` always reproduces the same draws. Children are derived
//! from the path, never from the parent's consumed state, which makes the
//! result of a computation independent of the order in which sibling streams
//! are consumed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn key_for(seed: u64, path: &[u64]) -> [u8; 32] {
    let mut state = splitmix(seed ^ 0x5EED_0FC0_FFEE);
    for (depth, &p) in path.iter().enumerate() {
        state = splitmix(state ^ splitmix(p.wrapping_add((depth as u64 + 1).wrapping_mul(GOLDEN))));
    }
    let mut key = [0u8; 32];
    let mut word = state;
    for chunk in key.chunks_exact_mut(8) {
        word = splitmix(word);
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    key
}

/// A single-owner random stream identified by `(seed, path)`.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    path: Vec<u64>,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Stream for `path ++ [index]`. Does not consume any draws from `self`.
    pub fn child(&self, index: u64) -> RngStream {
        let mut path = Vec::with_capacity(self.path.len() + 1);
        path.extend_from_slice(&self.path);
        path.push(index);
        derive_rng(self.seed, &path)
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Derives the stream for `(parent_seed, path)`.
pub fn derive_rng(parent_seed: u64, path: &[u64]) -> RngStream {
    RngStream {
        seed: parent_seed,
        path: path.to_vec(),
        inner: ChaCha8Rng::from_seed(key_for(parent_seed, path)),
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn draws(mut r: RngStream, n: usize) -> Vec<f64> {
        (0..n).map(|_| r.uniform()).collect()
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn sibling_paths_are_uncorrelated() {
        let a = draws(derive_rng(42, &[0]), 10_000);
        let b = draws(derive_rng(42, &[1]), 10_000);
        assert!(correlation(&a, &b).abs() < 0.05);
    }

    #[test]
    fn same_path_is_deterministic() {
        assert_eq!(draws(derive_rng(42, &[3, 1]), 100), draws(derive_rng(42, &[3, 1]), 100));
    }

    #[test]
    fn different_seeds_differ() {
        assert_ne!(draws(derive_rng(42, &[0]), 10), draws(derive_rng(43, &[0]), 10));
    }

    #[test]
    fn child_matches_explicit_path_and_ignores_parent_state() {
        let mut parent = derive_rng(7, &[2]);
        let before = draws(parent.child(5), 8);
        parent.uniform();
        assert_eq!(before, draws(parent.child(5), 8));
        assert_eq!(before, draws(derive_rng(7, &[2, 5]), 8));
    }

    #[test]
    fn prefix_paths_are_distinct() {
        assert_ne!(draws(derive_rng(1, &[]), 4), draws(derive_rng(1, &[0]), 4));
        assert_ne!(draws(derive_rng(1, &[0, 1]), 4), draws(derive_rng(1, &[1, 0]), 4));
    }
}
