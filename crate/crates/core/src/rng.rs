//! Deterministic per-item random streams.
//!
//! Every random decision in the toolkit is drawn from an [`RngStream`] keyed by
//! the global seed plus a short key path (domain, epoch, item index, ...). A
//! stream depends only on its key, never on how many other streams were drawn
//! before it, so data generation is order-independent and can run in parallel.
//!
//! The generator is PCG32 (`XSH-RR` output over a 64-bit LCG with multiplier
//! `6364136223846793005`). The key path is folded with SplitMix64 into the
//! LCG state and the stream selector (the odd increment).

use rand::RngCore;
use rand_pcg::Pcg32;

/// Key domains, so that streams used for unrelated purposes never collide.
pub mod domain {
    pub const SPLIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const VALID: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const INIT: u64 = 5;
    pub const PAIRS: u64 = 6;
    pub const PROBE: u64 = 7;
    pub const CLASSIFIER: u64 = 8;
    pub const CORPUS: u64 = 9;
    pub const GEN: u64 = 10;
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct RngStream(Pcg32);

impl RngStream {
    /// Stream for a single item of a dataset.
    pub fn new(seed: u64, index: u64) -> Self {
        Self::keyed(seed, &[index])
    }

    /// Stream for an arbitrary key path under `seed`.
    pub fn keyed(seed: u64, key: &[u64]) -> Self {
        let mut state = splitmix64(seed);
        for &part in key {
            state = splitmix64(state ^ splitmix64(part.wrapping_add(GOLDEN_GAMMA)));
        }
        let stream = splitmix64(state ^ 0xD1B5_4A32_D192_ED03);
        RngStream(Pcg32::new(state, stream))
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.0.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.0.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_stream() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn frozen_first_draws() {
        // Pinned so a dependency bump that changes the generator is caught.
        let mut a = RngStream::new(0, 0);
        let first: Vec<u32> = (0..3).map(|_| a.next_u32()).collect();
        assert_eq!(first, [3058188206, 1113555268, 2855080415]);
    }

    #[test]
    fn distinct_items_diverge_early() {
        let trials = 10_000u64;
        let mut differing = 0;
        for i in 0..trials {
            let mut a = RngStream::new(42, 2 * i);
            let mut b = RngStream::new(42, 2 * i + 1);
            let da: Vec<u32> = (0..4).map(|_| a.next_u32()).collect();
            let db: Vec<u32> = (0..4).map(|_| b.next_u32()).collect();
            if da != db {
                differing += 1;
            }
        }
        assert!(differing as f64 / trials as f64 > 0.99);
    }

    #[test]
    fn key_paths_are_not_flattened() {
        let mut a = RngStream::keyed(1, &[2, 3]);
        let mut b = RngStream::keyed(1, &[3, 2]);
        assert_ne!(a.next_u64(), b.next_u64());
    }
}
