//! Per-step shared randomness `(v_t, Π_t)` derived from a master key.
//!
//! The key value `v_t` and the permutation `Π_t` come from two independent
//! keyed streams addressed by `(stream_id, t)`, so watermarker and detector
//! regenerate identical secrets from the master key alone.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{invalid, Result};
use crate::prf;

/// Environment variable read by the CLI for the hex-encoded master key.
pub const MASTER_KEY_ENV: &str = "ARCMARK_MASTER_KEY";

const KEY_DOMAIN: &str = "arcmark.key";
const PERM_DOMAIN: &str = "arcmark.perm";

/// 256-bit watermark secret plus a generation-session identifier.
#[derive(Clone, PartialEq, Eq)]
pub struct MasterKey {
    key: [u8; 32],
    pub stream_id: u64,
}

impl std::fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MasterKey")
            .field("key", &"<redacted>")
            .field("stream_id", &self.stream_id)
            .finish()
    }
}

impl MasterKey {
    pub fn new(key: [u8; 32], stream_id: u64) -> Self {
        MasterKey { key, stream_id }
    }

    pub fn from_hex(hex_key: &str, stream_id: u64) -> Result<Self> {
        let bytes = hex::decode(hex_key.trim())
            .map_err(|e| crate::Error::InvalidParameter(format!("master key is not hex: {e}")))?;
        let key: [u8; 32] = bytes
            .as_slice()
            .try_into()
            .map_err(|_| crate::Error::InvalidParameter(format!("master key must be 32 bytes, got {}", bytes.len())))?;
        Ok(MasterKey { key, stream_id })
    }

    /// Reads [`MASTER_KEY_ENV`].
    pub fn from_env(stream_id: u64) -> Result<Self> {
        match std::env::var(MASTER_KEY_ENV) {
            Ok(v) => MasterKey::from_hex(&v, stream_id),
            Err(_) => invalid(format!("{MASTER_KEY_ENV} is not set")),
        }
    }

    /// Deterministic key for simulation trial `trial` of a seeded run.
    pub fn for_trial(master_seed: u64, trial: u64) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(b"arcmark.trial-key");
        hasher.update(master_seed.to_le_bytes());
        hasher.update(trial.to_le_bytes());
        MasterKey {
            key: hasher.finalize().into(),
            stream_id: trial,
        }
    }

    pub fn key_bytes(&self) -> &[u8; 32] {
        &self.key
    }
}

/// Shared secret of one generation step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepSecret {
    pub t: usize,
    /// Key value in `[0, r)`.
    pub v: u32,
    /// `perm[i]` is the circle slot of token `i`.
    pub perm: Vec<u32>,
}

/// Derives the secret of step `t` for a vocabulary of `vocab` tokens.
pub fn derive_step(mk: &MasterKey, t: usize, vocab: usize, r: u32) -> StepSecret {
    derive_at(mk, t, t as u64, vocab, r)
}

fn derive_at(mk: &MasterKey, t: usize, counter: u64, vocab: usize, r: u32) -> StepSecret {
    let mut key_stream = prf::keyed_stream(KEY_DOMAIN, &mk.key, &[mk.stream_id, counter]);
    let v = prf::uniform_below(&mut key_stream, r.max(1) as u64) as u32;
    let mut perm_stream = prf::keyed_stream(PERM_DOMAIN, &mk.key, &[mk.stream_id, counter]);
    let perm = prf::permutation(&mut perm_stream, vocab);
    StepSecret { t, v, perm }
}

/// How the per-step secret is addressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SecretSchedule {
    /// Keyed by the step index `t`.
    #[default]
    Step,
    /// Keyed by a hash of the previous `window` tokens. Not used by the
    /// simulation experiments.
    ContextHash { window: usize },
}

impl SecretSchedule {
    /// Secret for step `t` (1-based) given the tokens emitted before it.
    pub fn secret_for(&self, mk: &MasterKey, t: usize, history: &[usize], vocab: usize, r: u32) -> StepSecret {
        match *self {
            SecretSchedule::Step => derive_step(mk, t, vocab, r),
            SecretSchedule::ContextHash { window } => {
                let start = history.len().saturating_sub(window);
                let counter = prf::hash_tokens(&history[start..]);
                derive_at(mk, t, counter, vocab, r)
            }
        }
    }
}
