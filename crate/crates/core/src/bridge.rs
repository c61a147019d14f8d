//! Core side of the stdio protocol used by language-model adapters.
//!
//! Newline-delimited JSON, one object per line, tagged by `type`:
//!
//! ```text
//! adapter -> core  {"type":"INIT", "protocol_version":1, "N", "p", "r", "phi", "k",
//!                   "code_seed", "stream_id", "message_bits":[..], "max_steps"?, "sampling_seed"?}
//! adapter -> core  {"type":"STEP_REQUEST", "t", "logits":[..], "temperature", "top_k"}
//!                  {"type":"STEP_REQUEST", "t", "probs":[..]}
//! core -> adapter  {"type":"STEP_REPLY", "t", "token_id"}
//! adapter -> core  {"type":"CLOSE", "n_emitted"}
//! core -> adapter  {"type":"ERROR", "message"}        (then the core stops)
//! ```
//!
//! Steps are numbered from 1 and must arrive consecutively. Every request is
//! answered by exactly one reply. The master key never crosses the protocol.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::circle::CircleParams;
use crate::embedder::{EmbedConfig, Embedder};
use crate::error::{Error, Result};
use crate::modcode::{CodeParams, Message};
use crate::sideinfo::{MasterKey, SecretSchedule};
use crate::sources::{write_replay_record, ReplayPayload, ReplayRecord};
use crate::transport::SolverConfig;

pub const PROTOCOL_VERSION: u32 = 1;
pub const DEFAULT_MAX_STEPS: usize = 4096;

fn default_version() -> u32 {
    PROTOCOL_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitParams {
    #[serde(default = "default_version")]
    pub protocol_version: u32,
    #[serde(rename = "N")]
    pub vocab: usize,
    pub p: u32,
    pub r: u32,
    #[serde(default)]
    pub phi: f64,
    pub k: usize,
    pub code_seed: u64,
    pub stream_id: u64,
    pub message_bits: Vec<u8>,
    /// Codeword length; the session accepts at most this many steps.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub sampling_seed: u64,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
}

impl InitParams {
    pub fn embed_config(&self) -> Result<EmbedConfig> {
        let circle = CircleParams::new(self.vocab, self.p, self.r, self.phi)?;
        let cfg = EmbedConfig {
            code: CodeParams::new(
                self.k,
                self.max_steps.unwrap_or(DEFAULT_MAX_STEPS),
                self.p,
                self.code_seed,
            )?,
            theorem2_mode: circle.is_theorem2(),
            circle,
            solver: self.solver.unwrap_or_default(),
            sampling_seed: self.sampling_seed,
            keying: SecretSchedule::Step,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn message(&self) -> Result<Message> {
        let m = Message::new(self.message_bits.clone())?;
        if m.len() != self.k {
            return Err(Error::LengthMismatch {
                what: "message_bits",
                expected: self.k,
                got: m.len(),
            });
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    pub t: usize,
    #[serde(flatten)]
    pub payload: ReplayPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BridgeMessage {
    Init(InitParams),
    StepRequest(StepRequest),
    StepReply { t: usize, token_id: usize },
    Close { n_emitted: usize },
    Error { message: String },
}

impl BridgeMessage {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("protocol messages serialize")
    }

    pub fn parse(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::Protocol(format!("malformed message: {e}")))
    }
}

/// One generation stream: INIT, then requests, then CLOSE.
pub struct Session {
    key: [u8; 32],
    state: State,
}

enum State {
    AwaitInit,
    Running { embedder: Box<Embedder>, vocab: usize },
    Closed { n_emitted: usize },
}

impl Session {
    /// `key` is the raw master key; the stream id comes with INIT.
    pub fn new(key: [u8; 32]) -> Self {
        Session {
            key,
            state: State::AwaitInit,
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.state, State::Closed { .. })
    }

    /// Tokens emitted so far.
    pub fn emitted(&self) -> usize {
        match &self.state {
            State::AwaitInit => 0,
            State::Running { embedder, .. } => embedder.history().len(),
            State::Closed { n_emitted } => *n_emitted,
        }
    }

    /// Processes one inbound message and returns the reply, if any.
    pub fn handle(&mut self, msg: BridgeMessage) -> Result<Option<BridgeMessage>> {
        match (&mut self.state, msg) {
            (State::AwaitInit, BridgeMessage::Init(init)) => {
                if init.protocol_version != PROTOCOL_VERSION {
                    return Err(Error::Protocol(format!(
                        "protocol version {} not supported (expected {PROTOCOL_VERSION})",
                        init.protocol_version
                    )));
                }
                let cfg = init.embed_config()?;
                let mk = MasterKey::new(self.key, init.stream_id);
                let embedder = Embedder::new(&init.message()?, &mk, &cfg)?;
                self.state = State::Running {
                    embedder: Box::new(embedder),
                    vocab: init.vocab,
                };
                Ok(None)
            }
            (State::Running { embedder, vocab }, BridgeMessage::StepRequest(req)) => {
                let expected = embedder.next_t();
                if req.t != expected {
                    return Err(Error::Protocol(format!("step {} received, expected {expected}", req.t)));
                }
                let rec = ReplayRecord {
                    t: req.t,
                    payload: req.payload,
                };
                if rec.vocab() != *vocab {
                    return Err(Error::Protocol(format!(
                        "step {} carries {} entries for N = {vocab}",
                        req.t,
                        rec.vocab()
                    )));
                }
                let q = rec.distribution()?;
                let token_id = embedder.step(&q)?;
                Ok(Some(BridgeMessage::StepReply { t: req.t, token_id }))
            }
            (State::Running { embedder, .. }, BridgeMessage::Close { n_emitted }) => {
                let emitted = embedder.history().len();
                if n_emitted != emitted {
                    return Err(Error::Protocol(format!(
                        "CLOSE reports {n_emitted} tokens, {emitted} were emitted"
                    )));
                }
                self.state = State::Closed { n_emitted };
                Ok(None)
            }
            (_, other) => Err(Error::Protocol(format!("unexpected {} in this state", kind(&other)))),
        }
    }
}

fn kind(msg: &BridgeMessage) -> &'static str {
    match msg {
        BridgeMessage::Init(_) => "INIT",
        BridgeMessage::StepRequest(_) => "STEP_REQUEST",
        BridgeMessage::StepReply { .. } => "STEP_REPLY",
        BridgeMessage::Close { .. } => "CLOSE",
        BridgeMessage::Error { .. } => "ERROR",
    }
}

/// Runs one session over `input`/`output`. Step requests are appended to
/// `record` as replay lines when given. Returns the number of emitted tokens.
///
/// On a protocol or pipeline error an ERROR line is written before the
/// error is returned.
pub fn serve(
    input: impl BufRead,
    mut output: impl Write,
    key: [u8; 32],
    mut record: Option<&mut dyn Write>,
) -> Result<usize> {
    let mut session = Session::new(key);
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let result = BridgeMessage::parse(&line).and_then(|msg| {
            if let (Some(rec), BridgeMessage::StepRequest(req)) = (record.as_mut(), &msg) {
                let entry = ReplayRecord {
                    t: req.t,
                    payload: req.payload.clone(),
                };
                write_replay_record(&mut **rec, &entry)?;
            }
            session.handle(msg)
        });
        match result {
            Ok(Some(reply)) => {
                writeln!(output, "{}", reply.to_line())?;
                output.flush()?;
            }
            Ok(None) => {
                if session.is_closed() {
                    return Ok(session.emitted());
                }
            }
            Err(e) => {
                let msg = BridgeMessage::Error { message: e.to_string() };
                writeln!(output, "{}", msg.to_line())?;
                output.flush()?;
                return Err(e);
            }
        }
    }
    let err = Error::Protocol("input ended before CLOSE".into());
    writeln!(
        output,
        "{}",
        BridgeMessage::Error {
            message: err.to_string()
        }
        .to_line()
    )?;
    Err(err)
}
