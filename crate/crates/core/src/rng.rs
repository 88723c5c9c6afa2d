//! Counter-based random streams.
//!
//! Each stream is a ChaCha8 keystream keyed by the 64-bit seed and
//! selected by a 64-bit stream id, so `(seed, stream_id)` pairs map
//! injectively onto independent sequences and no state is shared between
//! samples. Draws are counted so callers can audit consumption.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

const EPOCH_BITS: u32 = 20;
const BATCH_BITS: u32 = 24;
const SLOT_BITS: u32 = 20;

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
    draws: u64,
}

/// Open stream `sample_index` under `seed`.
pub fn derive_stream(seed: u64, sample_index: u64) -> RngStream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    let mut inner = ChaCha8Rng::from_seed(key);
    inner.set_stream(sample_index);
    RngStream {
        seed,
        stream_id: sample_index,
        inner,
        draws: 0,
    }
}

/// Stream id for one batch slot. Injective for `epoch < 2^20`,
/// `batch_index < 2^24`, `slot < 2^20`.
pub fn slot_stream_id(epoch: u64, batch_index: u64, slot: u64) -> Result<u64> {
    if epoch >> EPOCH_BITS != 0 || batch_index >> BATCH_BITS != 0 || slot >> SLOT_BITS != 0 {
        return Err(Error::InvalidValue(format!(
            "stream coordinates out of range: epoch {epoch}, batch {batch_index}, slot {slot}"
        )));
    }
    Ok((epoch << (BATCH_BITS + SLOT_BITS)) | (batch_index << SLOT_BITS) | slot)
}

/// Seed for an independent purpose (model init, corruption, ...) derived
/// from a run seed. SplitMix64 finalizer over `seed ^ domain`.
pub fn domain_seed(seed: u64, domain: u64) -> u64 {
    let mut z = (seed ^ domain.wrapping_mul(0x9E37_79B9_7F4A_7C15)).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 32/64-bit words drawn so far.
    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform in `[0, 1)` with 53 bits of precision. One draw.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`. One draw.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Integer in `0..n` by multiply-shift. One draw. `n` must be positive.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        ((u128::from(self.next_u64()) * u128::from(n)) >> 64) as u64
    }

    /// `true` with probability `p`. One draw.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.draws += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.draws += 1;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.draws += dst.len().div_ceil(8) as u64;
        self.inner.fill_bytes(dst)
    }
}
