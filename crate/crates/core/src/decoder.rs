//! Minimum-distance decoding.
//!
//! The detector strips the key from every token angle to get a noisy symbol
//! angle `Ĉ(t)`, then scores every candidate message by
//! `D_m = Σ_t f(d(Ĉ(t), 2π·C_m(t)/p + φ))` and returns the minimizer.

use serde::{Deserialize, Serialize};

use crate::circle::{angular_distance, symbol_angle, Angle, CircleParams};
use crate::embedder::EmbedConfig;
use crate::error::{invalid, Error, Result};
use crate::modcode::{encode, make_generator, GeneratorMatrix, Message};
use crate::sideinfo::{MasterKey, StepSecret};

/// Largest message length searched exhaustively.
pub const MAX_DECODE_BITS: usize = 24;

/// Distances this close to `d_max` count as reaching it.
const SENTINEL_TOLERANCE: f64 = 1e-9;
/// Relative slack under which two scores are treated as tied.
const SCORE_TIE_TOLERANCE: f64 = 1e-9;
/// Above this many table entries the per-step costs are computed on the fly.
const TABLE_LIMIT: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistanceFn {
    /// `f(d) = d`.
    Identity,
    /// `f(d) = −ln(1 − d/d_max)`, infinite at and beyond `d_max`.
    LogMl { d_max: f64 },
}

impl DistanceFn {
    /// The log-likelihood distance for vocabulary `N`, `d_max = π − π/(2N)`.
    pub fn log_ml(vocab: usize) -> Self {
        DistanceFn::LogMl {
            d_max: std::f64::consts::PI * (1.0 - 0.5 / vocab as f64),
        }
    }

    pub fn apply(&self, d: f64) -> f64 {
        match *self {
            DistanceFn::Identity => d,
            DistanceFn::LogMl { d_max } => {
                if d >= d_max - SENTINEL_TOLERANCE {
                    f64::INFINITY
                } else {
                    -(1.0 - d / d_max).ln()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub message: Message,
    pub score: f64,
    /// Runner-up score minus best score; infinite with a single candidate
    /// or when every other candidate is infinite.
    pub margin: f64,
    /// `f(d)` of the decoded message at every step.
    pub per_symbol_distances: Vec<f64>,
}

/// `Ĉ(t) = 2π·perm(token)/N − 2π·v/r`.
pub fn recover_symbol_angle(token: usize, secret: &StepSecret, params: &CircleParams) -> Result<Angle> {
    if token >= params.vocab || secret.perm.len() != params.vocab {
        return invalid(format!(
            "token {token} or permutation does not fit vocabulary {}",
            params.vocab
        ));
    }
    Ok(Angle::from_turns(
        secret.perm[token] as f64 / params.vocab as f64 - secret.v as f64 / params.r as f64,
    ))
}

fn recovered_angles(tokens: &[usize], secrets: &[StepSecret], params: &CircleParams) -> Result<Vec<Angle>> {
    if tokens.len() != secrets.len() {
        return Err(Error::LengthMismatch {
            what: "step secrets",
            expected: tokens.len(),
            got: secrets.len(),
        });
    }
    tokens
        .iter()
        .zip(secrets)
        .map(|(&tok, s)| recover_symbol_angle(tok, s, params))
        .collect()
}

/// `D_m` for one candidate.
pub fn score_message(
    m: &Message,
    tokens: &[usize],
    secrets: &[StepSecret],
    g: &GeneratorMatrix,
    f: DistanceFn,
    params: &CircleParams,
) -> Result<f64> {
    let angles = recovered_angles(tokens, secrets, params)?;
    if g.n() < tokens.len() {
        return invalid(format!("generator has {} columns for {} tokens", g.n(), tokens.len()));
    }
    let cw = encode(m, g)?;
    Ok(angles
        .iter()
        .zip(&cw.symbols)
        .map(|(&a, &c)| f.apply(angular_distance(a, symbol_angle(c, params))))
        .sum())
}

/// Re-derives the secrets from `mk` and decodes `tokens`.
pub fn decode(tokens: &[usize], mk: &MasterKey, cfg: &EmbedConfig, f: DistanceFn) -> Result<DecodeResult> {
    let secrets: Vec<StepSecret> = (0..tokens.len())
        .map(|i| {
            cfg.keying
                .secret_for(mk, i + 1, &tokens[..i], cfg.circle.vocab, cfg.circle.r)
        })
        .collect();
    decode_with_secrets(tokens, &secrets, cfg, f)
}

/// Exhaustive search over all `2^k` messages with the first `tokens.len()`
/// columns of the generator.
pub fn decode_with_secrets(
    tokens: &[usize],
    secrets: &[StepSecret],
    cfg: &EmbedConfig,
    f: DistanceFn,
) -> Result<DecodeResult> {
    let k = cfg.code.k;
    if k > MAX_DECODE_BITS {
        return Err(Error::Capability(format!(
            "exhaustive decoding supports k <= {MAX_DECODE_BITS}, got {k}"
        )));
    }
    cfg.code.validate()?;
    cfg.circle.validate()?;
    let n = tokens.len();
    let angles = recovered_angles(tokens, secrets, &cfg.circle)?;
    let g = make_generator(cfg.code.with_length(n.max(1)))?;
    let p = cfg.code.p as usize;

    let steps = StepCosts::new(&angles, f, &cfg.circle);
    let kl = k / 2;
    let kh = k - kl;
    let hi = partial_codewords(&g, 0, kh, n);
    let lo = partial_codewords(&g, kh, k, n);

    let mut top = TopTwo::default();
    match &steps.table {
        Some(table) => search_blocked(table, &hi, &lo, n, kh, kl, p, &mut top),
        None => {
            for (h, hw) in hi.chunks(n.max(1)).enumerate().take(1 << kh) {
                for (l, lw) in lo.chunks(n.max(1)).enumerate().take(1 << kl) {
                    let score = steps.score(hw, lw, p, top.bound());
                    top.offer(((h as u64) << kl) | l as u64, score);
                }
            }
        }
    }
    let (best, second) = (top.best, top.second);

    let (value, score) = best.unwrap_or((0, f64::INFINITY));
    if score == f64::INFINITY {
        return Err(Error::DecodeFailure);
    }
    let message = Message::from_value(value, k)?;
    let cw = encode(&message, &g)?;
    let per_symbol_distances = (0..n).map(|t| steps.cost(t, cw.symbols[t] as usize)).collect();
    Ok(DecodeResult {
        message,
        score,
        margin: (second - score).max(0.0),
        per_symbol_distances,
    })
}

/// Best and runner-up scores, offered in ascending message order so the
/// lowest message wins ties.
#[derive(Default)]
struct TopTwo {
    best: Option<(u64, f64)>,
    second: f64,
}

impl TopTwo {
    fn bound(&self) -> f64 {
        if self.best.is_some() {
            self.second
        } else {
            f64::INFINITY
        }
    }

    fn offer(&mut self, value: u64, score: f64) {
        match self.best {
            None => {
                self.best = Some((value, score));
                self.second = f64::INFINITY;
            }
            Some((_, b)) if beats(score, b) => {
                self.second = b;
                self.best = Some((value, score));
            }
            Some(_) => {
                if score < self.second {
                    self.second = score;
                }
            }
        }
    }
}

const BLOCK: usize = 8;

/// Scores all low halves of one high half together, a block of steps at a
/// time, dropping candidates whose partial sum already exceeds the
/// runner-up. Sums run in step order, so scores match the scalar path.
#[allow(clippy::too_many_arguments)]
fn search_blocked(table: &[f64], hi: &[u32], lo: &[u32], n: usize, kh: usize, kl: usize, p: usize, top: &mut TopTwo) {
    let width = n.max(1);
    let count = 1usize << kl;
    let mut lo_t = vec![0u32; n * count];
    for l in 0..count {
        for t in 0..n {
            lo_t[t * count + l] = lo[l * width + t];
        }
    }
    let mut alive: Vec<u32> = Vec::with_capacity(count);
    let mut acc: Vec<f64> = Vec::with_capacity(count);
    for h in 0..1usize << kh {
        let hw = &hi[h * width..h * width + n];
        alive.clear();
        alive.extend(0..count as u32);
        acc.clear();
        acc.resize(count, 0.0);
        let bound = top.bound();
        let mut t = 0;
        while t < n && !alive.is_empty() {
            let end = (t + BLOCK).min(n);
            for s in t..end {
                let row = &table[s * 2 * p + hw[s] as usize..(s + 1) * 2 * p];
                let lrow = &lo_t[s * count..(s + 1) * count];
                for (a, &l) in acc.iter_mut().zip(&alive) {
                    *a += row[lrow[l as usize] as usize];
                }
            }
            if bound < f64::INFINITY {
                let mut keep = 0;
                for i in 0..alive.len() {
                    if acc[i] <= bound {
                        alive[keep] = alive[i];
                        acc[keep] = acc[i];
                        keep += 1;
                    }
                }
                alive.truncate(keep);
                acc.truncate(keep);
            }
            t = end;
        }
        for (&l, &score) in alive.iter().zip(&acc) {
            top.offer(((h as u64) << kl) | l as u64, score);
        }
    }
}

/// Strictly better than `best` by more than the tie tolerance.
fn beats(score: f64, best: f64) -> bool {
    if best == f64::INFINITY {
        return score < best;
    }
    score < best - SCORE_TIE_TOLERANCE * best.abs().max(1.0)
}

/// Codeword contributions of generator rows `from..to` for every assignment
/// of those bits, most significant first; one length-`n` block per value.
fn partial_codewords(g: &GeneratorMatrix, from: usize, to: usize, n: usize) -> Vec<u32> {
    let bits = to - from;
    let width = n.max(1);
    let p = g.p();
    let mut out = vec![0u32; (1usize << bits) * width];
    for value in 1usize..(1 << bits) {
        // value = prev | lowest set bit; reuse the block of prev
        let low = value.trailing_zeros() as usize;
        let prev = value & (value - 1);
        let row = to - 1 - low;
        for t in 0..n {
            let s = out[prev * width + t] + g.get(row, t);
            out[value * width + t] = if s >= p { s - p } else { s };
        }
    }
    out
}

/// Per-step cost of every symbol, tabulated over `[0, 2p)` so that the sum
/// of two partial symbols needs no reduction.
struct StepCosts<'a> {
    table: Option<Vec<f64>>,
    angles: &'a [Angle],
    f: DistanceFn,
    params: &'a CircleParams,
}

impl<'a> StepCosts<'a> {
    fn new(angles: &'a [Angle], f: DistanceFn, params: &'a CircleParams) -> Self {
        let p = params.p as usize;
        let table = (angles.len() * 2 * p <= TABLE_LIMIT).then(|| {
            let mut table = Vec::with_capacity(angles.len() * 2 * p);
            for &a in angles {
                let row: Vec<f64> = (0..p)
                    .map(|c| f.apply(angular_distance(a, symbol_angle(c as u32, params))))
                    .collect();
                table.extend_from_slice(&row);
                table.extend_from_slice(&row);
            }
            table
        });
        StepCosts {
            table,
            angles,
            f,
            params,
        }
    }

    fn cost(&self, t: usize, s: usize) -> f64 {
        let p = self.params.p as usize;
        match &self.table {
            Some(table) => table[t * 2 * p + s],
            None => self.f.apply(angular_distance(
                self.angles[t],
                symbol_angle((s % p) as u32, self.params),
            )),
        }
    }

    /// Sum over steps of the cost of `hi[t] + lo[t]`; stops early once the
    /// partial sum exceeds `bound`.
    fn score(&self, hi: &[u32], lo: &[u32], p: usize, bound: f64) -> f64 {
        let n = self.angles.len();
        let mut total = 0.0;
        match &self.table {
            Some(table) => {
                let w = 2 * p;
                for t in 0..n {
                    total += table[t * w + (hi[t] + lo[t]) as usize];
                    if total > bound {
                        return total;
                    }
                }
            }
            None => {
                for t in 0..n {
                    total += self.cost(t, (hi[t] + lo[t]) as usize);
                    if total > bound {
                        return total;
                    }
                }
            }
        }
        total
    }
}

/// Fraction of agreeing bits.
pub fn bit_accuracy(m_true: &Message, m_hat: &Message) -> Result<f64> {
    if m_true.len() != m_hat.len() {
        return Err(Error::LengthMismatch {
            what: "decoded message",
            expected: m_true.len(),
            got: m_hat.len(),
        });
    }
    let agree = m_true.bits().iter().zip(m_hat.bits()).filter(|(a, b)| a == b).count();
    Ok(agree as f64 / m_true.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modcode::CodeParams;
    use std::f64::consts::PI;

    fn secret(v: u32, perm: Vec<u32>) -> StepSecret {
        StepSecret { t: 1, v, perm }
    }

    #[test]
    fn recovery_without_key_is_token_angle() {
        let c = CircleParams::new(6, 6, 6, 0.0).unwrap();
        let s = secret(0, (0..6).collect());
        let a = recover_symbol_angle(4, &s, &c).unwrap();
        assert!((a.value() - 4.0 * PI / 3.0).abs() < 1e-12);
    }

    #[test]
    fn recovery_hand_example() {
        let c = CircleParams::new(4, 4, 4, 0.0).unwrap();
        let s = secret(1, vec![0, 3, 1, 2]);
        let a = recover_symbol_angle(1, &s, &c).unwrap();
        assert!((a.value() - PI).abs() < 1e-12);
    }

    #[test]
    fn log_ml_values() {
        let f = DistanceFn::log_ml(4);
        assert_eq!(f.apply(0.0), 0.0);
        let DistanceFn::LogMl { d_max } = f else { unreachable!() };
        assert!((d_max - 7.0 * PI / 8.0).abs() < 1e-15);
        assert_eq!(f.apply(d_max), f64::INFINITY);
        assert!((f.apply(d_max / 2.0) - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn partial_tables_match_encoder() {
        let g = make_generator(CodeParams::new(5, 7, 6, 9).unwrap()).unwrap();
        let hi = partial_codewords(&g, 0, 3, 7);
        let lo = partial_codewords(&g, 3, 5, 7);
        for value in 0..32u64 {
            let cw = encode(&Message::from_value(value, 5).unwrap(), &g).unwrap();
            let (h, l) = ((value >> 2) as usize, (value & 3) as usize);
            for t in 0..7 {
                assert_eq!((hi[h * 7 + t] + lo[l * 7 + t]) % 6, cw.symbols[t]);
            }
        }
    }

    #[test]
    fn empty_trace_decodes_to_zero() {
        let cfg = EmbedConfig::standard(3, 8, 8, 0).unwrap();
        let r = decode_with_secrets(&[], &[], &cfg, DistanceFn::Identity).unwrap();
        assert_eq!(r.message.value(), 0);
        assert_eq!((r.score, r.margin), (0.0, 0.0));
    }

    #[test]
    fn too_many_bits_is_a_capability_error() {
        let mut cfg = EmbedConfig::standard(3, 8, 8, 0).unwrap();
        cfg.code.k = 25;
        assert!(matches!(
            decode_with_secrets(&[], &[], &cfg, DistanceFn::Identity),
            Err(Error::Capability(_))
        ));
    }

    #[test]
    fn bit_accuracy_values() {
        let a = Message::parse("10110010").unwrap();
        assert_eq!(bit_accuracy(&a, &a).unwrap(), 1.0);
        let comp = Message::parse("01001101").unwrap();
        assert_eq!(bit_accuracy(&a, &comp).unwrap(), 0.0);
        let two = Message::parse("10110001").unwrap();
        assert_eq!(bit_accuracy(&a, &two).unwrap(), 0.75);
        assert!(bit_accuracy(&a, &Message::parse("1").unwrap()).is_err());
    }
}
