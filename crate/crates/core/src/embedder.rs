//! The per-token watermarking pipeline.
//!
//! For each step: take codeword symbol `c_t`, derive `(v_t, Π_t)`, build the
//! cost between supported tokens and the `r` channel inputs of `c_t`, solve
//! the transport plan and sample the next token from column `v_t`.

use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::circle::CircleParams;
use crate::error::{invalid, Error, Result};
use crate::modcode::{encode, make_generator, CodeParams, Codeword, Message};
use crate::prf;
use crate::sideinfo::{MasterKey, SecretSchedule, StepSecret};
use crate::sources::DistributionSource;
use crate::transport::{build_cost, solve_plan, solve_plan_twopoint, SolverConfig, TokenDistribution, TransportPlan};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub code: CodeParams,
    pub circle: CircleParams,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Forces `p = r = N`, `phi = π/(2N)` and uses the closed-form plan for
    /// two-point distributions.
    #[serde(default)]
    pub theorem2_mode: bool,
    /// Seed of the token-sampling randomness; never needed by the detector.
    #[serde(default)]
    pub sampling_seed: u64,
    #[serde(default)]
    pub keying: SecretSchedule,
}

impl EmbedConfig {
    /// `p = 2^k`, `r = 4p`, `phi = 0`.
    pub fn standard(k: usize, n: usize, vocab: usize, code_seed: u64) -> Result<Self> {
        if k == 0 || k > 29 {
            return invalid(format!("k = {k} does not give a usable alphabet p = 2^k"));
        }
        let p = 1u32 << k;
        let cfg = EmbedConfig {
            code: CodeParams::new(k, n, p, code_seed)?,
            circle: CircleParams::new(vocab, p, 4 * p, 0.0)?,
            solver: SolverConfig::default(),
            theorem2_mode: false,
            sampling_seed: 0,
            keying: SecretSchedule::Step,
        };
        Ok(cfg)
    }

    pub fn theorem2(k: usize, n: usize, vocab: usize, code_seed: u64) -> Result<Self> {
        let circle = CircleParams::theorem2(vocab)?;
        Ok(EmbedConfig {
            code: CodeParams::new(k, n, circle.p, code_seed)?,
            circle,
            solver: SolverConfig::default(),
            theorem2_mode: true,
            sampling_seed: 0,
            keying: SecretSchedule::Step,
        })
    }

    /// Applies the parameter coupling of theorem-2 mode.
    pub fn normalize(&mut self) -> Result<()> {
        if self.theorem2_mode {
            self.circle = CircleParams::theorem2(self.circle.vocab)?;
            self.code.p = self.circle.p;
        }
        Ok(())
    }

    pub fn normalized(mut self) -> Result<Self> {
        self.normalize()?;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.code.validate()?;
        self.circle.validate()?;
        self.solver.validate()?;
        if self.code.p != self.circle.p {
            return invalid(format!(
                "code alphabet p = {} differs from circle alphabet p = {}",
                self.code.p, self.circle.p
            ));
        }
        if self.theorem2_mode && !self.circle.is_theorem2() {
            return invalid("theorem2_mode needs p = r = N and phi = pi/(2N)");
        }
        Ok(())
    }

    pub fn with_length(&self, n: usize) -> Self {
        EmbedConfig {
            code: self.code.with_length(n),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    /// Entropy of `Q` in bits.
    pub support_entropy: f64,
    /// Time spent building and solving the plan.
    pub solver_seconds: f64,
    /// Whether the two-point closed form produced the plan.
    pub closed_form: bool,
}

/// Plan used for symbol `c` under `secret`, without sampling.
pub fn step_plan(
    q: &TokenDistribution,
    c: u32,
    secret: &StepSecret,
    cfg: &EmbedConfig,
) -> Result<(TransportPlan, bool)> {
    if q.vocab() != cfg.circle.vocab {
        return invalid(format!(
            "distribution over {} tokens for vocabulary {}",
            q.vocab(),
            cfg.circle.vocab
        ));
    }
    let cost = build_cost(q, c, &secret.perm, &cfg.circle)?;
    if cfg.theorem2_mode && q.two_point().is_some() {
        match solve_plan_twopoint(q, &cost) {
            Ok(plan) => return Ok((plan, true)),
            // odd N: the nearest-token rule is not a feasible plan
            Err(Error::TwoPointImbalance { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    Ok((solve_plan(q, &cost, &cfg.solver)?, false))
}

/// Samples one watermarked token for symbol `c`.
pub fn embed_step<R: RngCore + ?Sized>(
    q: &TokenDistribution,
    c: u32,
    secret: &StepSecret,
    cfg: &EmbedConfig,
    rng: &mut R,
) -> Result<(usize, StepDiagnostics)> {
    let support_entropy = q.entropy_bits();
    if c >= cfg.circle.p {
        return invalid(format!("symbol {c} outside [0, {})", cfg.circle.p));
    }
    if q.is_point_mass() {
        let diag = StepDiagnostics {
            support_entropy,
            solver_seconds: 0.0,
            closed_form: true,
        };
        return Ok((q.support()[0], diag));
    }
    let start = Instant::now();
    let (plan, closed_form) = step_plan(q, c, secret, cfg)?;
    let solver_seconds = start.elapsed().as_secs_f64();
    let token = sample_column(&plan, secret.v as usize, rng);
    let diag = StepDiagnostics {
        support_entropy,
        solver_seconds,
        closed_form,
    };
    Ok((token, diag))
}

/// Draws a row of column `col` with probability proportional to its mass.
fn sample_column<R: RngCore + ?Sized>(plan: &TransportPlan, col: usize, rng: &mut R) -> usize {
    let total: f64 = (0..plan.rows()).map(|i| plan.get(i, col)).sum();
    let u = prf::uniform_unit(rng) * total;
    let mut acc = 0.0;
    let mut last = 0;
    for i in 0..plan.rows() {
        let w = plan.get(i, col);
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return plan.row_tokens()[i];
        }
    }
    plan.row_tokens()[last]
}

#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkTrace {
    pub tokens: Vec<usize>,
    /// Key value `v_t` of each step.
    pub z_indices: Vec<u32>,
    pub codeword: Codeword,
    pub per_step_support_entropy: Vec<f64>,
    pub solver_seconds: f64,
}

/// Stateful embedder for one generation session.
pub struct Embedder {
    cfg: EmbedConfig,
    key: MasterKey,
    codeword: Codeword,
    rng: ChaCha20Rng,
    history: Vec<usize>,
    z_indices: Vec<u32>,
    entropies: Vec<f64>,
    solver_seconds: f64,
}

impl Embedder {
    pub fn new(m: &Message, mk: &MasterKey, cfg: &EmbedConfig) -> Result<Self> {
        cfg.validate()?;
        let g = make_generator(cfg.code)?;
        let codeword = encode(m, &g)?;
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.sampling_seed);
        rng.set_stream(mk.stream_id);
        Ok(Embedder {
            cfg: cfg.clone(),
            key: mk.clone(),
            codeword,
            rng,
            history: Vec::new(),
            z_indices: Vec::new(),
            entropies: Vec::new(),
            solver_seconds: 0.0,
        })
    }

    /// Index of the next step, 1-based.
    pub fn next_t(&self) -> usize {
        self.history.len() + 1
    }

    pub fn history(&self) -> &[usize] {
        &self.history
    }

    pub fn is_done(&self) -> bool {
        self.history.len() >= self.codeword.len()
    }

    /// Watermarks the next step given its distribution.
    pub fn step(&mut self, q: &TokenDistribution) -> Result<usize> {
        let t = self.next_t();
        if self.is_done() {
            return Err(Error::Stream(format!(
                "codeword of length {} is exhausted at step {t}",
                self.codeword.len()
            )));
        }
        let secret = self
            .cfg
            .keying
            .secret_for(&self.key, t, &self.history, self.cfg.circle.vocab, self.cfg.circle.r);
        let c = self.codeword.symbols[t - 1];
        let (token, diag) = embed_step(q, c, &secret, &self.cfg, &mut self.rng)?;
        self.history.push(token);
        self.z_indices.push(secret.v);
        self.entropies.push(diag.support_entropy);
        self.solver_seconds += diag.solver_seconds;
        Ok(token)
    }

    pub fn finish(self) -> WatermarkTrace {
        let n = self.history.len();
        let mut codeword = self.codeword;
        codeword.symbols.truncate(n);
        WatermarkTrace {
            tokens: self.history,
            z_indices: self.z_indices,
            codeword,
            per_step_support_entropy: self.entropies,
            solver_seconds: self.solver_seconds,
        }
    }
}

/// Embeds `m` into `cfg.code.n` tokens drawn from `source`.
pub fn embed_sequence(
    m: &Message,
    source: &mut dyn DistributionSource,
    mk: &MasterKey,
    cfg: &EmbedConfig,
) -> Result<WatermarkTrace> {
    if source.vocab() != cfg.circle.vocab {
        return invalid(format!(
            "source vocabulary {} differs from N = {}",
            source.vocab(),
            cfg.circle.vocab
        ));
    }
    let mut emb = Embedder::new(m, mk, cfg)?;
    while !emb.is_done() {
        let t = emb.next_t();
        let q = source.next_distribution(t, emb.history())?;
        emb.step(&q)?;
    }
    Ok(emb.finish())
}

/// On-disk form of a trace; the master key is never part of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub tokens: Vec<usize>,
    pub n: usize,
    pub k: usize,
    pub p: u32,
    pub r: u32,
    pub phi: f64,
    pub code_seed: u64,
    pub stream_id: u64,
    #[serde(rename = "N")]
    pub vocab: usize,
    #[serde(default, skip_serializing_if = "is_step_keying")]
    pub keying: SecretSchedule,
}

fn is_step_keying(s: &SecretSchedule) -> bool {
    *s == SecretSchedule::Step
}

impl TraceFile {
    pub fn new(trace: &WatermarkTrace, cfg: &EmbedConfig, stream_id: u64) -> Self {
        TraceFile {
            tokens: trace.tokens.clone(),
            n: trace.tokens.len(),
            k: cfg.code.k,
            p: cfg.code.p,
            r: cfg.circle.r,
            phi: cfg.circle.phi,
            code_seed: cfg.code.code_seed,
            stream_id,
            vocab: cfg.circle.vocab,
            keying: cfg.keying,
        }
    }

    /// Detector-side configuration; the solver and sampling fields are
    /// irrelevant to decoding and left at their defaults.
    pub fn embed_config(&self) -> Result<EmbedConfig> {
        if self.tokens.len() != self.n {
            return Err(Error::LengthMismatch {
                what: "trace tokens",
                expected: self.n,
                got: self.tokens.len(),
            });
        }
        let circle = CircleParams::new(self.vocab, self.p, self.r, self.phi)?;
        let cfg = EmbedConfig {
            code: CodeParams::new(self.k, self.n.max(1), self.p, self.code_seed)?,
            theorem2_mode: circle.is_theorem2(),
            circle,
            solver: SolverConfig::default(),
            sampling_seed: 0,
            keying: self.keying,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
