//! Seeded randomness shared by the frame samplers and the simulated backend.
//!
//! Every random stream is a ChaCha8 generator (`rand_chacha`) seeded through
//! `SeedableRng::seed_from_u64`. Seeds themselves come from SHA-256 over a
//! domain-tagged, length-prefixed byte string, so a schedule or a simulated
//! response depends only on its inputs and never on the platform, the
//! thread it ran on, or the order requests arrived in.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

pub type SeededRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Builds a 64-bit seed from a sequence of typed fields.
///
/// Fields are length-prefixed so `("ab", "c")` and `("a", "bc")` hash
/// differently.
pub struct SeedHasher(Sha256);

impl SeedHasher {
    pub fn new(domain: &str) -> Self {
        let mut hasher = SeedHasher(Sha256::new());
        hasher.push_bytes(domain.as_bytes());
        hasher
    }

    fn push_bytes(&mut self, bytes: &[u8]) {
        self.0.update((bytes.len() as u64).to_le_bytes());
        self.0.update(bytes);
    }

    pub fn u64(mut self, value: u64) -> Self {
        self.0.update(value.to_le_bytes());
        self
    }

    pub fn str(mut self, value: &str) -> Self {
        self.push_bytes(value.as_bytes());
        self
    }

    pub fn bytes(mut self, value: &[u8]) -> Self {
        self.push_bytes(value);
        self
    }

    pub fn finish(self) -> u64 {
        let digest = self.0.finalize();
        let mut head = [0u8; 8];
        head.copy_from_slice(&digest[..8]);
        u64::from_le_bytes(head)
    }
}

/// Seed of sample `sample_index` for question `question_id` within a run.
///
/// Depends on the sample index alone (not on N), so runs with different
/// sample counts share their prediction prefixes.
pub fn sample_seed(run_seed: u64, question_id: &str, sample_index: u32) -> u64 {
    SeedHasher::new("framevote/sample")
        .u64(run_seed)
        .str(question_id)
        .u64(u64::from(sample_index))
        .finish()
}

/// Uniform integer in `[0, bound)` by rejection sampling on raw 64-bit draws.
pub fn uniform_below<R: RngCore + ?Sized>(rng: &mut R, bound: u64) -> u64 {
    assert!(bound > 0, "uniform_below needs a positive bound");
    // 2^64 mod bound: draws below this would bias the low residues.
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let x = rng.next_u64();
        if x >= threshold {
            return x % bound;
        }
    }
}

/// Uniform real in `[0, 1)` with 53 bits of precision.
pub fn unit_f64<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
