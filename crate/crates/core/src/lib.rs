//! ArcMark: multi-bit, distortion-free watermarking of token streams.
//!
//! A `k`-bit message is encoded by a random linear code over `Z_p`. At each
//! step the codeword symbol and a shared key select a channel-input angle,
//! and the next token is sampled from the optimal-transport conditional that
//! couples the model distribution with those angles. The detector removes
//! the key and decodes by minimum angular distance.

pub mod bridge;
pub mod capacity;
pub mod circle;
pub mod decoder;
pub mod embedder;
pub mod error;
pub mod harness;
pub mod modcode;
pub mod prf;
pub mod sideinfo;
pub mod sources;
pub mod transport;

pub use error::{Error, Result};
