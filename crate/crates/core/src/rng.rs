//! Seeded random streams.
//!
//! Every run derives all of its randomness from one `u64` seed. Independent
//! consumers (initialization, data synthesis, the sign draws of each rank-one
//! state) read disjoint ChaCha streams of that seed, so adding a consumer
//! never shifts the draws seen by another.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Stream used for parameter initialization.
pub const STREAM_INIT: u64 = 0;
/// Stream used for synthetic data generation.
pub const STREAM_DATA: u64 = 1;
/// First stream used for sign draws; rank-one state `k` uses `STREAM_SIGNS + k`.
pub const STREAM_SIGNS: u64 = 16;

/// Returns the generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A source of independent uniform `±1` signs.
pub trait SignSource {
    fn fill_signs(&mut self, out: &mut [f64]);
}

/// Signs drawn one bit at a time from a seeded stream.
#[derive(Debug, Clone)]
pub struct RandomSigns {
    rng: ChaCha8Rng,
    bits: u64,
    left: u32,
}

impl RandomSigns {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self {
            rng: stream(seed, stream_id),
            bits: 0,
            left: 0,
        }
    }

    #[inline]
    pub fn next_sign(&mut self) -> f64 {
        if self.left == 0 {
            self.bits = self.rng.next_u64();
            self.left = 64;
        }
        let s = if self.bits & 1 == 1 { 1.0 } else { -1.0 };
        self.bits >>= 1;
        self.left -= 1;
        s
    }
}

impl SignSource for RandomSigns {
    fn fill_signs(&mut self, out: &mut [f64]) {
        for s in out {
            *s = self.next_sign();
        }
    }
}

/// Replays a fixed sign sequence, taken from the bits of `mask` (bit `k` set
/// means the `k`-th sign drawn is `+1`). Used to enumerate all sign patterns.
#[derive(Debug, Clone)]
pub struct MaskSigns {
    mask: u64,
    pos: u32,
}

impl MaskSigns {
    pub fn new(mask: u64) -> Self {
        Self { mask, pos: 0 }
    }

    /// Number of signs consumed so far.
    pub fn consumed(&self) -> u32 {
        self.pos
    }
}

impl SignSource for MaskSigns {
    fn fill_signs(&mut self, out: &mut [f64]) {
        for s in out {
            assert!(self.pos < 64, "MaskSigns exhausted");
            *s = if (self.mask >> self.pos) & 1 == 1 { 1.0 } else { -1.0 };
            self.pos += 1;
        }
    }
}
