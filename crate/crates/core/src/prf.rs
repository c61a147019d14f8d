//! Keyed, counter-addressed pseudorandom streams.
//!
//! Every stream is a ChaCha20 keystream whose 256-bit seed is
//! `SHA-256(domain || 0x00 || key || le64(field_0) || le64(field_1) || ...)`.
//! Both parties of the watermark derive generator matrices and per-step
//! secrets from this construction, so it is pinned: changing the layout
//! changes every derived value.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

/// Builds the stream addressed by `(domain, key, fields)`.
pub fn keyed_stream(domain: &str, key: &[u8], fields: &[u64]) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    hasher.update([0u8]);
    hasher.update(key);
    for f in fields {
        hasher.update(f.to_le_bytes());
    }
    let seed: [u8; 32] = hasher.finalize().into();
    ChaCha20Rng::from_seed(seed)
}

/// Uniform integer in `[0, bound)` by rejection on 64-bit words.
///
/// Words below `2^64 mod bound` are rejected so every residue is hit by the
/// same number of accepted words.
pub fn uniform_below<R: RngCore + ?Sized>(rng: &mut R, bound: u64) -> u64 {
    assert!(bound > 0, "uniform_below with empty range");
    let threshold = bound.wrapping_neg() % bound;
    loop {
        let x = rng.next_u64();
        if x >= threshold {
            return x % bound;
        }
    }
}

/// Uniform float in `[0, 1)` with 53 bits of precision.
pub fn uniform_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Unbiased Fisher-Yates permutation of `[0, n)`.
pub fn permutation<R: RngCore + ?Sized>(rng: &mut R, n: usize) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..n as u32).collect();
    for i in (1..n).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        perm.swap(i, j);
    }
    perm
}

/// First eight bytes of a SHA-256 digest over little-endian token ids.
pub(crate) fn hash_tokens(tokens: &[usize]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"arcmark.context");
    for &t in tokens {
        hasher.update((t as u64).to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
