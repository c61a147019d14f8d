//! Token-distribution generators that stand in for a language model.
//!
//! Synthetic kinds are i.i.d.: the distribution at step `t` depends only on
//! `(source_seed, t)`, never on the sampled history. Replay sources read
//! captured distributions back from newline-delimited JSON.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::prf;
use crate::transport::TokenDistribution;

pub const DEFAULT_ALPHA: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    /// Uniform on a uniformly chosen pair of tokens.
    P2Uniform,
    /// Symmetric Dirichlet draw over the vocabulary.
    Dirichlet,
    /// Dirichlet draw sharpened by a temperature and cut to the top `k`.
    TopkShaped,
    /// Records read from a replay file.
    Replay,
}

impl std::str::FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
            .map_err(|_| Error::InvalidParameter(format!("unknown source kind '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub kind: SourceKind,
    #[serde(rename = "N")]
    pub vocab: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub path: Option<PathBuf>,
    #[serde(default)]
    pub source_seed: u64,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_temperature() -> f64 {
    1.0
}

impl SourceSpec {
    pub fn new(kind: SourceKind, vocab: usize) -> Self {
        SourceSpec {
            kind,
            vocab,
            alpha: DEFAULT_ALPHA,
            top_k: None,
            temperature: 1.0,
            path: None,
            source_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 {
            return invalid(format!("source vocabulary N = {} must be at least 2", self.vocab));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return invalid(format!("dirichlet alpha {} must be positive", self.alpha));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return invalid(format!("temperature {} must be positive", self.temperature));
        }
        if let Some(k) = self.top_k {
            if k == 0 || k > self.vocab {
                return invalid(format!("top_k {k} outside [1, {}]", self.vocab));
            }
        }
        if self.kind == SourceKind::Replay && self.path.is_none() {
            return invalid("replay source needs a path");
        }
        Ok(())
    }
}

/// Yields the next-token distribution of each step.
pub trait DistributionSource: Send {
    fn vocab(&self) -> usize;

    /// Distribution of step `t` (1-based) after emitting `history`.
    fn next_distribution(&mut self, t: usize, history: &[usize]) -> Result<TokenDistribution>;
}

pub fn build_source(spec: &SourceSpec) -> Result<Box<dyn DistributionSource>> {
    spec.validate()?;
    Ok(match spec.kind {
        SourceKind::Replay => {
            let path = spec.path.as_ref().expect("validated");
            let source = ReplaySource::open(path)?;
            if source.vocab() != spec.vocab {
                return invalid(format!(
                    "replay file has vocabulary {}, spec says {}",
                    source.vocab(),
                    spec.vocab
                ));
            }
            Box::new(source)
        }
        _ => Box::new(SyntheticSource { spec: spec.clone() }),
    })
}

/// One of the i.i.d. synthetic kinds.
#[derive(Debug, Clone)]
pub struct SyntheticSource {
    spec: SourceSpec,
}

impl SyntheticSource {
    pub fn new(spec: SourceSpec) -> Result<Self> {
        spec.validate()?;
        if spec.kind == SourceKind::Replay {
            return invalid("replay is not a synthetic source");
        }
        Ok(SyntheticSource { spec })
    }

    fn step_rng(&self, t: usize) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.spec.source_seed);
        rng.set_stream(t as u64);
        rng
    }

    /// Distribution of step `t`; pure in `(spec, t)`.
    pub fn distribution_at(&self, t: usize) -> Result<TokenDistribution> {
        let n = self.spec.vocab;
        let mut rng = self.step_rng(t);
        match self.spec.kind {
            SourceKind::P2Uniform => {
                let i = prf::uniform_below(&mut rng, n as u64) as usize;
                let mut j = prf::uniform_below(&mut rng, n as u64 - 1) as usize;
                if j >= i {
                    j += 1;
                }
                TokenDistribution::uniform_pair(n, i, j)
            }
            SourceKind::Dirichlet => dirichlet(&mut rng, n, self.spec.alpha),
            SourceKind::TopkShaped => {
                let base = dirichlet(&mut rng, n, self.spec.alpha)?;
                let weights: Vec<f64> = base
                    .probs()
                    .iter()
                    .map(|p| p.powf(1.0 / self.spec.temperature))
                    .collect();
                TokenDistribution::from_weights(keep_top_k(weights, self.spec.top_k.unwrap_or(n)))
            }
            SourceKind::Replay => unreachable!("checked in constructor"),
        }
    }
}

impl DistributionSource for SyntheticSource {
    fn vocab(&self) -> usize {
        self.spec.vocab
    }

    fn next_distribution(&mut self, t: usize, _history: &[usize]) -> Result<TokenDistribution> {
        self.distribution_at(t)
    }
}

fn dirichlet(rng: &mut ChaCha20Rng, n: usize, alpha: f64) -> Result<TokenDistribution> {
    let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidParameter(format!("dirichlet alpha: {e}")))?;
    loop {
        let w: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
        // all draws can underflow for tiny alpha; redraw
        if w.iter().sum::<f64>() > 0.0 {
            return TokenDistribution::from_weights(w);
        }
    }
}

/// Zeroes all but the `k` largest weights (ties broken toward lower index).
fn keep_top_k(mut weights: Vec<f64>, k: usize) -> Vec<f64> {
    if k >= weights.len() {
        return weights;
    }
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| weights[b].total_cmp(&weights[a]).then(a.cmp(&b)));
    for &i in &order[k..] {
        weights[i] = 0.0;
    }
    weights
}

/// Softmax of `logits / temperature` restricted to the `top_k` largest logits.
pub fn softmax_shaped(logits: &[f64], temperature: f64, top_k: Option<usize>) -> Result<TokenDistribution> {
    if logits.is_empty() {
        return invalid("empty logits");
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return invalid(format!("temperature {temperature} must be positive"));
    }
    if let Some(x) = logits.iter().find(|x| x.is_nan() || **x == f64::INFINITY) {
        return invalid(format!("invalid logit {x}"));
    }
    let k = top_k.unwrap_or(logits.len());
    if k == 0 {
        return invalid("top_k must be positive");
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return invalid("all logits are -inf");
    }
    let weights: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    TokenDistribution::from_weights(keep_top_k(weights, k))
}

/// One line of a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub t: usize,
    #[serde(flatten)]
    pub payload: ReplayPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReplayPayload {
    Probs {
        probs: Vec<f64>,
    },
    Logits {
        logits: Vec<f64>,
        #[serde(default = "default_temperature")]
        temperature: f64,
        #[serde(default)]
        top_k: Option<usize>,
    },
}

impl ReplayRecord {
    pub fn distribution(&self) -> Result<TokenDistribution> {
        match &self.payload {
            ReplayPayload::Probs { probs } => TokenDistribution::new(probs.clone()),
            ReplayPayload::Logits {
                logits,
                temperature,
                top_k,
            } => softmax_shaped(logits, *temperature, *top_k),
        }
    }

    pub fn vocab(&self) -> usize {
        match &self.payload {
            ReplayPayload::Probs { probs } => probs.len(),
            ReplayPayload::Logits { logits, .. } => logits.len(),
        }
    }
}

/// Reads every record; blank lines are skipped.
pub fn read_replay(reader: impl BufRead) -> Result<Vec<ReplayRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ReplayRecord =
            serde_json::from_str(&line).map_err(|e| Error::Stream(format!("replay line {}: {e}", lineno + 1)))?;
        records.push(rec);
    }
    Ok(records)
}

pub fn write_replay_record(mut writer: impl Write, record: &ReplayRecord) -> Result<()> {
    serde_json::to_writer(&mut writer, record)?;
    writer.write_all(b"\n")?;
    Ok(())
}

/// Plays back records in order; step `t` must find a record with that `t`.
#[derive(Debug, Clone)]
pub struct ReplaySource {
    records: Vec<ReplayRecord>,
    vocab: usize,
    cursor: usize,
}

impl ReplaySource {
    pub fn new(records: Vec<ReplayRecord>) -> Result<Self> {
        let Some(first) = records.first() else {
            return Err(Error::Stream("replay has no records".into()));
        };
        let vocab = first.vocab();
        for pair in records.windows(2) {
            if pair[1].t <= pair[0].t {
                return Err(Error::Stream(format!(
                    "replay steps not increasing: {} after {}",
                    pair[1].t, pair[0].t
                )));
            }
        }
        if let Some(r) = records.iter().find(|r| r.vocab() != vocab) {
            return Err(Error::Stream(format!(
                "replay step {} has {} entries, expected {vocab}",
                r.t,
                r.vocab()
            )));
        }
        Ok(ReplaySource {
            records,
            vocab,
            cursor: 0,
        })
    }

    pub fn open(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Stream(format!("cannot open replay {}: {e}", path.display())))?;
        ReplaySource::new(read_replay(std::io::BufReader::new(file))?)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl DistributionSource for ReplaySource {
    fn vocab(&self) -> usize {
        self.vocab
    }

    fn next_distribution(&mut self, t: usize, _history: &[usize]) -> Result<TokenDistribution> {
        while self.cursor < self.records.len() && self.records[self.cursor].t < t {
            self.cursor += 1;
        }
        match self.records.get(self.cursor) {
            Some(rec) if rec.t == t => rec.distribution(),
            _ => Err(Error::Stream(format!("replay has no record for step {t}"))),
        }
    }
}

/// The same distribution at every step.
#[derive(Debug, Clone)]
pub struct FixedSource(pub TokenDistribution);

impl DistributionSource for FixedSource {
    fn vocab(&self) -> usize {
        self.0.vocab()
    }

    fn next_distribution(&mut self, _t: usize, _history: &[usize]) -> Result<TokenDistribution> {
        Ok(self.0.clone())
    }
}
