//! Monte-Carlo experiments and their CSV output.
//!
//! Trials run on the rayon pool and are collected in trial order before any
//! reduction, so results do not depend on scheduling.

use std::io::Write;
use std::path::PathBuf;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::capacity::capacity_closed_form;
use crate::circle::{angular_distance, grid_angle, position_angle};
use crate::decoder::{bit_accuracy, decode, DistanceFn, MAX_DECODE_BITS};
use crate::embedder::{embed_sequence, embed_step, step_plan, EmbedConfig};
use crate::error::{invalid, Error, Result};
use crate::modcode::Message;
use crate::prf;
use crate::sideinfo::{derive_step, MasterKey};
use crate::sources::{build_source, SourceKind, SourceSpec, SyntheticSource};
use crate::transport::{conditional, TokenDistribution};

/// Value of the `schema_version` column.
pub const SCHEMA_VERSION: &str = "arcmark-results/1";
pub const CSV_HEADER: &str = "n,k,p,r,metric,value,sem,trials,seed,schema_version";

fn default_trials() -> usize {
    100
}

fn default_failure_fraction() -> f64 {
    0.05
}

fn default_distance() -> DistanceFn {
    DistanceFn::Identity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub embed: EmbedConfig,
    pub source: SourceSpec,
    #[serde(default = "default_distance")]
    pub distance: DistanceFn,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub n_grid: Vec<usize>,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Fraction of failed trials above which the CLI exits with status 3.
    #[serde(default = "default_failure_fraction")]
    pub max_failure_fraction: f64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        self.embed.validate()?;
        self.source.validate()?;
        if self.trials == 0 {
            return invalid("trials must be at least 1");
        }
        if self.n_grid.is_empty() {
            return invalid("n_grid is empty");
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("n_grid must be strictly ascending");
        }
        let max_n = *self.n_grid.last().expect("non-empty");
        if max_n > self.embed.code.n {
            return invalid(format!("largest n = {max_n} exceeds code length {}", self.embed.code.n));
        }
        if self.source.vocab != self.embed.circle.vocab {
            return invalid(format!(
                "source vocabulary {} differs from N = {}",
                self.source.vocab, self.embed.circle.vocab
            ));
        }
        if self.embed.code.k > MAX_DECODE_BITS {
            return Err(Error::Capability(format!(
                "exhaustive decoding supports k <= {MAX_DECODE_BITS}, got {}",
                self.embed.code.k
            )));
        }
        Ok(())
    }
}

/// Aggregate of one token count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub n: usize,
    pub k: usize,
    pub p: u32,
    pub r: u32,
    pub message_accuracy: f64,
    pub bit_accuracy: f64,
    pub sem_message: f64,
    pub sem_bit: f64,
    /// Mean over trials with a finite margin.
    pub mean_margin: f64,
    pub sem_margin: f64,
    /// Trials that completed.
    pub trials: usize,
    /// Trials that failed and were excluded.
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<(usize, String)>,
    /// Mean transport solve time per embedded token.
    pub solver_seconds_per_token: f64,
}

impl ExperimentOutcome {
    pub fn failure_fraction(&self, trials: usize) -> f64 {
        self.failures.len() as f64 / trials as f64
    }
}

struct TrialResult {
    per_n: Vec<(bool, f64, f64)>,
    solver_seconds: f64,
    tokens: usize,
}

/// Derived 64-bit value addressed by `(label, master_seed, trial)`.
fn trial_value(label: &str, master_seed: u64, trial: u64) -> u64 {
    prf::keyed_stream(label, &master_seed.to_le_bytes(), &[trial]).next_u64()
}

/// Uniform message of trial `trial`.
pub fn trial_message(master_seed: u64, trial: u64, k: usize) -> Result<Message> {
    let mut rng = prf::keyed_stream("arcmark.trial-message", &master_seed.to_le_bytes(), &[trial]);
    let bits = (0..k).map(|_| (rng.next_u32() & 1) as u8).collect();
    Message::new(bits)
}

fn run_trial(spec: &ExperimentSpec, trial: u64) -> Result<TrialResult> {
    let max_n = *spec.n_grid.last().expect("validated");
    let k = spec.embed.code.k;
    let m = trial_message(spec.master_seed, trial, k)?;
    let mk = MasterKey::for_trial(spec.master_seed, trial);
    let mut cfg = spec.embed.with_length(max_n.max(1));
    cfg.sampling_seed = trial_value("arcmark.trial-sampling", spec.master_seed, trial);
    let mut source_spec = spec.source.clone();
    if source_spec.kind != SourceKind::Replay {
        source_spec.source_seed = trial_value(
            "arcmark.trial-source",
            spec.master_seed ^ spec.source.source_seed,
            trial,
        );
    }
    let mut source = build_source(&source_spec)?;
    let trace = if max_n == 0 {
        None
    } else {
        Some(embed_sequence(&m, source.as_mut(), &mk, &cfg)?)
    };
    let tokens: &[usize] = trace.as_ref().map_or(&[], |t| &t.tokens);
    let mut per_n = Vec::with_capacity(spec.n_grid.len());
    for &n in &spec.n_grid {
        let res = decode(&tokens[..n], &mk, &cfg, spec.distance)?;
        per_n.push((res.message == m, bit_accuracy(&m, &res.message)?, res.margin));
    }
    Ok(TrialResult {
        per_n,
        solver_seconds: trace.as_ref().map_or(0.0, |t| t.solver_seconds),
        tokens: max_n,
    })
}

/// Mean and standard error of the mean (sample standard deviation over
/// `√len`); zero error for fewer than two values.
pub fn mean_sem(values: &[f64]) -> (f64, f64) {
    let len = values.len();
    if len == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / len as f64;
    if len < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (len - 1) as f64;
    (mean, (var / len as f64).sqrt())
}

/// Accuracy of every prefix length in `spec.n_grid`.
pub fn run_accuracy_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let results: Vec<Result<TrialResult>> = (0..spec.trials as u64)
        .into_par_iter()
        .map(|trial| run_trial(spec, trial))
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (trial, res) in results.into_iter().enumerate() {
        match res {
            Ok(r) => ok.push(r),
            Err(e) => failures.push((trial, e.to_string())),
        }
    }
    let rows = spec
        .n_grid
        .iter()
        .enumerate()
        .map(|(idx, &n)| {
            let msg: Vec<f64> = ok.iter().map(|r| r.per_n[idx].0 as u8 as f64).collect();
            let bits: Vec<f64> = ok.iter().map(|r| r.per_n[idx].1).collect();
            let margins: Vec<f64> = ok.iter().map(|r| r.per_n[idx].2).filter(|m| m.is_finite()).collect();
            let (message_accuracy, sem_message) = mean_sem(&msg);
            let (bit_acc, sem_bit) = mean_sem(&bits);
            let (mean_margin, sem_margin) = mean_sem(&margins);
            ResultRow {
                n,
                k: spec.embed.code.k,
                p: spec.embed.code.p,
                r: spec.embed.circle.r,
                message_accuracy,
                bit_accuracy: bit_acc,
                sem_message,
                sem_bit,
                mean_margin,
                sem_margin,
                trials: ok.len(),
                excluded: failures.len(),
            }
        })
        .collect();
    let tokens: usize = ok.iter().map(|r| r.tokens).sum();
    let seconds: f64 = ok.iter().map(|r| r.solver_seconds).sum();
    Ok(ExperimentOutcome {
        rows,
        failures,
        solver_seconds_per_token: if tokens > 0 { seconds / tokens as f64 } else { 0.0 },
    })
}

/// Writes rows in long format: one line per `(n, metric)`.
pub fn write_csv(mut out: impl Write, rows: &[ResultRow], seed: u64) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for row in rows {
        let metrics = [
            ("message_accuracy", row.message_accuracy, row.sem_message),
            ("bit_accuracy", row.bit_accuracy, row.sem_bit),
            ("mean_margin", row.mean_margin, row.sem_margin),
        ];
        for (name, value, sem) in metrics {
            writeln!(
                out,
                "{},{},{},{},{name},{value},{sem},{},{seed},{SCHEMA_VERSION}",
                row.n, row.k, row.p, row.r, row.trials
            )?;
        }
    }
    Ok(())
}

pub fn csv_string(rows: &[ResultRow], seed: u64) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows, seed).expect("writing to memory");
    String::from_utf8(buf).expect("csv is ascii")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymbolReport {
    pub symbol: u32,
    /// `max_x |(1/r) Σ_v Q*(x | v) − Q(x)|` for the plan of the fixed key.
    pub analytic_deviation: f64,
    /// `max_x` gap between this symbol's key-averaged law and symbol 0's.
    pub deviation_from_symbol0: f64,
    pub empirical_tv: Option<f64>,
    pub chi_square: Option<f64>,
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionReport {
    pub vocab: usize,
    pub samples: usize,
    pub max_analytic_deviation: f64,
    pub max_cross_symbol_deviation: f64,
    pub symbols: Vec<SymbolReport>,
}

/// Checks distortion-freeness for a fixed `q`.
///
/// The analytic check solves the plan of every symbol under the step-1
/// permutation of `mk` and compares the key-averaged conditional with `q`.
/// The empirical check draws `samples` tokens for each symbol in
/// `empirical_symbols`, with fresh `(v, Π)` from steps `1..=samples`.
pub fn run_distortion_test(
    cfg: &EmbedConfig,
    q: &TokenDistribution,
    mk: &MasterKey,
    samples: usize,
    empirical_symbols: &[u32],
    seed: u64,
) -> Result<DistortionReport> {
    cfg.validate()?;
    let vocab = cfg.circle.vocab;
    let r = cfg.circle.r;
    if q.vocab() != vocab {
        return invalid(format!("distribution over {} tokens for vocabulary {vocab}", q.vocab()));
    }
    let secret = derive_step(mk, 1, vocab, r);
    let mut mixtures: Vec<Vec<f64>> = Vec::with_capacity(cfg.circle.p as usize);
    for c in 0..cfg.circle.p {
        let (plan, _) = step_plan(q, c, &secret, cfg)?;
        let mut mix = vec![0.0; vocab];
        for v in 0..r as usize {
            let cond = conditional(&plan, v)?;
            mix.iter_mut().zip(cond.probs()).for_each(|(m, x)| *m += x / r as f64);
        }
        mixtures.push(mix);
    }
    let max_gap = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);

    let mut symbols = Vec::with_capacity(mixtures.len());
    for (c, mix) in mixtures.iter().enumerate() {
        symbols.push(SymbolReport {
            symbol: c as u32,
            analytic_deviation: max_gap(mix, q.probs()),
            deviation_from_symbol0: max_gap(mix, &mixtures[0]),
            empirical_tv: None,
            chi_square: None,
            p_value: None,
        });
    }
    for &c in empirical_symbols {
        if c >= cfg.circle.p {
            return invalid(format!("symbol {c} outside [0, {})", cfg.circle.p));
        }
        let counts = empirical_counts(cfg, q, mk, samples, c, seed)?;
        let (tv, chi, p) = compare_counts(&counts, q, samples);
        let rep = &mut symbols[c as usize];
        rep.empirical_tv = Some(tv);
        rep.chi_square = Some(chi);
        rep.p_value = Some(p);
    }
    Ok(DistortionReport {
        vocab,
        samples,
        max_analytic_deviation: symbols.iter().map(|s| s.analytic_deviation).fold(0.0, f64::max),
        max_cross_symbol_deviation: symbols.iter().map(|s| s.deviation_from_symbol0).fold(0.0, f64::max),
        symbols,
    })
}

fn empirical_counts(
    cfg: &EmbedConfig,
    q: &TokenDistribution,
    mk: &MasterKey,
    samples: usize,
    c: u32,
    seed: u64,
) -> Result<Vec<u64>> {
    let draws: Vec<Result<usize>> = (1..=samples)
        .into_par_iter()
        .map(|t| {
            let secret = derive_step(mk, t, cfg.circle.vocab, cfg.circle.r);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            embed_step(q, c, &secret, cfg, &mut rng).map(|(tok, _)| tok)
        })
        .collect();
    let mut counts = vec![0u64; q.vocab()];
    for d in draws {
        counts[d?] += 1;
    }
    Ok(counts)
}

/// Total variation distance, Pearson statistic over the support of `q` and
/// its upper-tail p-value.
pub fn compare_counts(counts: &[u64], q: &TokenDistribution, samples: usize) -> (f64, f64, f64) {
    let total = samples as f64;
    let tv = 0.5
        * counts
            .iter()
            .zip(q.probs())
            .map(|(&c, &p)| (c as f64 / total - p).abs())
            .sum::<f64>();
    let mut chi = 0.0;
    for &x in q.support() {
        let expected = q.prob(x) * total;
        chi += (counts[x] as f64 - expected).powi(2) / expected;
    }
    let off_support: u64 = (0..counts.len()).filter(|&x| q.prob(x) == 0.0).map(|x| counts[x]).sum();
    let df = q.support().len().saturating_sub(1);
    let p = if off_support > 0 {
        0.0
    } else if df == 0 {
        1.0
    } else {
        let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
        1.0 - dist.cdf(chi)
    };
    (tv, chi, p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub r: u32,
    pub rows: Vec<ResultRow>,
    /// Not deterministic; kept out of the CSV.
    pub solver_seconds_per_token: f64,
}

/// Repeats the accuracy experiment for every key alphabet size.
pub fn run_r_ablation(spec: &ExperimentSpec, r_values: &[u32]) -> Result<Vec<AblationRow>> {
    if spec.embed.theorem2_mode {
        return invalid("r ablation varies r, which theorem2_mode fixes to N");
    }
    r_values
        .iter()
        .map(|&r| {
            let mut s = spec.clone();
            s.embed.circle.r = r;
            let out = run_accuracy_experiment(&s)?;
            Ok(AblationRow {
                r,
                rows: out.rows,
                solver_seconds_per_token: out.solver_seconds_per_token,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    #[serde(rename = "N")]
    pub vocab: usize,
    /// Rates as fractions of the closed-form capacity.
    pub rates: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub code_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub n: usize,
    pub k: usize,
    pub message_error_rate: f64,
    pub sem: f64,
    pub trials: usize,
    pub excluded: usize,
    /// Set when `k` exceeds the exhaustive-decoding cap and the cell was
    /// not run.
    pub skipped: bool,
}

/// `k = max(1, floor(ρ · R_cap · n))`.
pub fn sweep_message_bits(rate: f64, capacity: f64, n: usize) -> usize {
    ((rate * capacity * n as f64).floor() as usize).max(1)
}

/// Message error rate of the theorem-2 configuration on the two-point
/// source with the log-likelihood distance, per rate and token count.
pub fn run_capacity_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    if spec.trials == 0 || spec.n_grid.is_empty() || spec.n_grid.contains(&0) {
        return invalid("sweep needs trials >= 1 and positive token counts");
    }
    if let Some(r) = spec.rates.iter().find(|r| !(r.is_finite() && **r >= 0.0)) {
        return invalid(format!("rate {r} must be nonnegative"));
    }
    let capacity = capacity_closed_form(spec.vocab)?;
    let mut rows = Vec::new();
    for &rate in &spec.rates {
        for &n in &spec.n_grid {
            let k = sweep_message_bits(rate, capacity, n);
            if k > MAX_DECODE_BITS {
                rows.push(SweepRow {
                    rate,
                    n,
                    k,
                    message_error_rate: f64::NAN,
                    sem: f64::NAN,
                    trials: 0,
                    excluded: 0,
                    skipped: true,
                });
                continue;
            }
            let exp = ExperimentSpec {
                embed: EmbedConfig::theorem2(k, n, spec.vocab, spec.code_seed)?,
                source: SourceSpec::new(SourceKind::P2Uniform, spec.vocab),
                distance: DistanceFn::log_ml(spec.vocab),
                trials: spec.trials,
                n_grid: vec![n],
                master_seed: spec.master_seed,
                output: None,
                max_failure_fraction: 0.0,
            };
            let out = run_accuracy_experiment(&exp)?;
            let row = &out.rows[0];
            rows.push(SweepRow {
                rate,
                n,
                k,
                message_error_rate: 1.0 - row.message_accuracy,
                sem: row.sem_message,
                trials: row.trials,
                excluded: row.excluded,
                skipped: false,
            });
        }
    }
    Ok(rows)
}

pub const SWEEP_CSV_HEADER: &str = "rate,n,k,message_error_rate,sem,trials,excluded,skipped,seed,schema_version";

pub fn write_sweep_csv(mut out: impl Write, rows: &[SweepRow], seed: u64) -> Result<()> {
    writeln!(out, "{SWEEP_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{seed},{SCHEMA_VERSION}",
            r.rate, r.n, r.k, r.message_error_rate, r.sem, r.trials, r.excluded, r.skipped
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelLawReport {
    #[serde(rename = "N")]
    pub vocab: usize,
    pub steps: usize,
    /// `counts[a − 1]`: steps whose token had distance rank `a`.
    pub counts: Vec<u64>,
    /// `(N − a)/C(N,2)`.
    pub expected: Vec<f64>,
    /// Largest `|count − steps·P(a)| / sqrt(steps·P(a)(1 − P(a)))` over
    /// ranks with positive probability.
    pub max_z: f64,
    /// Steps with a rank of probability zero.
    pub impossible: u64,
}

/// 1-based position of `token` when the vocabulary is ordered by angular
/// distance from the channel input of `(c, v)` under `perm`.
pub fn distance_rank(token: usize, c: u32, v: u32, perm: &[u32], cfg: &EmbedConfig) -> usize {
    let z = grid_angle(c, v, &cfg.circle);
    let n = cfg.circle.vocab;
    let d = |x: usize| angular_distance(position_angle(perm[x] as usize, n), z);
    let dx = d(token);
    1 + (0..n).filter(|&y| d(y) < dx - crate::circle::ANGLE_TOLERANCE).count()
}

/// Emits `steps` tokens in theorem-2 mode on the two-point source with
/// uniform random symbols and histograms their distance ranks.
pub fn run_channel_law(vocab: usize, steps: usize, seed: u64) -> Result<ChannelLawReport> {
    if steps == 0 {
        return invalid("channel law needs at least one step");
    }
    let cfg = EmbedConfig::theorem2(1, 1, vocab, 0)?;
    let mut src_spec = SourceSpec::new(SourceKind::P2Uniform, vocab);
    src_spec.source_seed = seed;
    let source = SyntheticSource::new(src_spec)?;
    let mk = MasterKey::for_trial(seed, 0);
    let ranks: Vec<Result<usize>> = (1..=steps)
        .into_par_iter()
        .map(|t| {
            let q = source.distribution_at(t)?;
            let secret = derive_step(&mk, t, vocab, cfg.circle.r);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            let c = prf::uniform_below(&mut rng, cfg.circle.p as u64) as u32;
            let (tok, _) = embed_step(&q, c, &secret, &cfg, &mut rng)?;
            Ok(distance_rank(tok, c, secret.v, &secret.perm, &cfg))
        })
        .collect();
    let mut counts = vec![0u64; vocab];
    for a in ranks {
        counts[a? - 1] += 1;
    }
    let pairs = (vocab * (vocab - 1) / 2) as f64;
    let expected: Vec<f64> = (1..=vocab).map(|a| (vocab - a) as f64 / pairs).collect();
    let total = steps as f64;
    let mut max_z: f64 = 0.0;
    let mut impossible = 0;
    for (&c, &p) in counts.iter().zip(&expected) {
        if p == 0.0 {
            impossible += c;
            continue;
        }
        let sd = (total * p * (1.0 - p)).sqrt();
        max_z = max_z.max((c as f64 - total * p).abs() / sd);
    }
    Ok(ChannelLawReport {
        vocab,
        steps,
        counts,
        expected,
        max_z,
        impossible,
    })
}
