//! Random linear codes over the integers mod `p`.
//!
//! A message `m ∈ {0,1}^k` is mapped to the codeword `m · G mod p`, where the
//! `k × n` generator `G` is drawn from a keyed stream addressed by the public
//! `code_seed`. Entries are drawn column by column, so the first `n'` columns
//! of a length-`n` generator are exactly the generator of length `n'`; this is
//! what lets a decoder work on any prefix of a watermarked sequence.
//!
//! The generator is fixed per `(code_seed, k, p)`; callers that want a fresh
//! code per generation session pick a fresh `code_seed`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::prf;

/// Largest message length representable by [`Message::value`].
pub const MAX_MESSAGE_BITS: usize = 64;

const GENERATOR_DOMAIN: &str = "arcmark.generator";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CodeParams {
    /// Message length in bits.
    pub k: usize,
    /// Codeword length in symbols.
    pub n: usize,
    /// Symbol alphabet size.
    pub p: u32,
    /// Public seed of the generator matrix.
    pub code_seed: u64,
}

impl CodeParams {
    pub fn new(k: usize, n: usize, p: u32, code_seed: u64) -> Result<Self> {
        let params = CodeParams { k, n, p, code_seed };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return invalid("message length k must be at least 1");
        }
        if self.k > MAX_MESSAGE_BITS {
            return invalid(format!("message length k = {} exceeds {MAX_MESSAGE_BITS}", self.k));
        }
        if self.n == 0 {
            return invalid("codeword length n must be at least 1");
        }
        if self.p < 2 {
            return invalid(format!("symbol alphabet p = {} must be at least 2", self.p));
        }
        Ok(())
    }

    /// Same code with a different codeword length.
    pub fn with_length(&self, n: usize) -> Self {
        CodeParams { n, ..*self }
    }
}

/// The `k × n` generator matrix, stored row-major.
///
/// Serializes to its [`CodeParams`] only; the entries are recomputed from the
/// seed on deserialization.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "CodeParams", try_from = "CodeParams")]
pub struct GeneratorMatrix {
    params: CodeParams,
    entries: Vec<u32>,
}

impl GeneratorMatrix {
    pub fn params(&self) -> &CodeParams {
        &self.params
    }

    pub fn k(&self) -> usize {
        self.params.k
    }

    pub fn n(&self) -> usize {
        self.params.n
    }

    pub fn p(&self) -> u32 {
        self.params.p
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.entries[row * self.params.n + col]
    }

    pub fn row(&self, row: usize) -> &[u32] {
        let n = self.params.n;
        &self.entries[row * n..(row + 1) * n]
    }

    /// The generator restricted to its first `n` columns.
    pub fn truncated(&self, n: usize) -> Result<GeneratorMatrix> {
        if n == 0 || n > self.params.n {
            return invalid(format!(
                "cannot truncate a length-{} generator to {n} columns",
                self.params.n
            ));
        }
        let mut entries = Vec::with_capacity(self.params.k * n);
        for i in 0..self.params.k {
            entries.extend_from_slice(&self.row(i)[..n]);
        }
        Ok(GeneratorMatrix {
            params: self.params.with_length(n),
            entries,
        })
    }
}

impl From<GeneratorMatrix> for CodeParams {
    fn from(g: GeneratorMatrix) -> Self {
        g.params
    }
}

impl TryFrom<CodeParams> for GeneratorMatrix {
    type Error = Error;

    fn try_from(params: CodeParams) -> Result<Self> {
        make_generator(params)
    }
}

/// A binary message, most significant bit first. Serializes as a string of
/// `0`/`1` characters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Message {
    bits: Vec<u8>,
}

impl Message {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() || bits.len() > MAX_MESSAGE_BITS {
            return invalid(format!("message must have 1..={MAX_MESSAGE_BITS} bits"));
        }
        if let Some(b) = bits.iter().find(|&&b| b > 1) {
            return invalid(format!("message bit {b} is not 0 or 1"));
        }
        Ok(Message { bits })
    }

    /// The `k`-bit message whose unsigned value is `value`.
    pub fn from_value(value: u64, k: usize) -> Result<Self> {
        if k == 0 || k > MAX_MESSAGE_BITS {
            return invalid(format!("message must have 1..={MAX_MESSAGE_BITS} bits"));
        }
        if k < 64 && value >> k != 0 {
            return invalid(format!("value {value} does not fit in {k} bits"));
        }
        let bits = (0..k).map(|i| ((value >> (k - 1 - i)) & 1) as u8).collect();
        Ok(Message { bits })
    }

    /// Parses a string of `0`/`1` characters.
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => invalid(format!("'{other}' is not a message bit")),
            })
            .collect::<Result<Vec<u8>>>()?;
        Message::new(bits)
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn value(&self) -> u64 {
        self.bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }
}

impl From<Message> for String {
    fn from(m: Message) -> Self {
        m.to_string()
    }
}

impl TryFrom<String> for Message {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        Message::parse(&s)
    }
}

impl std::fmt::Display for Message {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codeword {
    pub symbols: Vec<u32>,
}

impl Codeword {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// Draws the generator for `params` from its keyed stream.
pub fn make_generator(params: CodeParams) -> Result<GeneratorMatrix> {
    params.validate()?;
    let CodeParams { k, n, p, code_seed } = params;
    let mut stream = prf::keyed_stream(GENERATOR_DOMAIN, &code_seed.to_le_bytes(), &[k as u64, p as u64]);
    let mut entries = vec![0u32; k * n];
    for col in 0..n {
        for row in 0..k {
            entries[row * n + col] = prf::uniform_below(&mut stream, p as u64) as u32;
        }
    }
    Ok(GeneratorMatrix { params, entries })
}

/// `C_m = m · G mod p`.
pub fn encode(m: &Message, g: &GeneratorMatrix) -> Result<Codeword> {
    if m.len() != g.k() {
        return Err(Error::LengthMismatch {
            what: "message",
            expected: g.k(),
            got: m.len(),
        });
    }
    let p = g.p() as u64;
    let mut acc = vec![0u64; g.n()];
    for (i, &bit) in m.bits().iter().enumerate() {
        if bit == 1 {
            for (a, &e) in acc.iter_mut().zip(g.row(i)) {
                *a = (*a + e as u64) % p;
            }
        }
    }
    Ok(Codeword {
        symbols: acc.into_iter().map(|s| s as u32).collect(),
    })
}
