use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use arcmark::bridge;
use arcmark::capacity::{brute_force_capacity, capacity_closed_form, capacity_limit, optimal_construction};
use arcmark::circle::CircleParams;
use arcmark::decoder::{decode, DistanceFn};
use arcmark::embedder::{embed_sequence, EmbedConfig, TraceFile};
use arcmark::harness::{
    csv_string, run_accuracy_experiment, run_capacity_sweep, run_channel_law, run_distortion_test, run_r_ablation,
    write_sweep_csv, ExperimentSpec, SweepSpec,
};
use arcmark::modcode::{encode, make_generator, CodeParams, Message};
use arcmark::sideinfo::{MasterKey, MASTER_KEY_ENV};
use arcmark::sources::{build_source, SourceKind, SourceSpec, SyntheticSource};
use arcmark::transport::SolverMethod;
use arcmark::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_TRIALS: u8 = 3;

#[derive(Parser)]
#[command(
    name = "arcmark",
    version,
    about = "Multi-bit distortion-free watermarking of token streams"
)]
struct Cli {
    /// JSON config; its shape depends on the subcommand (see README).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a message with the public generator.
    Encode {
        #[arg(long)]
        message: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        p: u32,
        #[arg(long, default_value_t = 0)]
        code_seed: u64,
    },
    /// Watermark a synthetic or replayed stream and write its trace.
    Embed(EmbedArgs),
    /// Decode a trace with the master key.
    Decode {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value_t = DistanceArg::Identity)]
        distance: DistanceArg,
    },
    /// Watermarking capacity of the two-point class.
    Capacity {
        #[arg(long = "N")]
        vocab: Option<usize>,
        #[arg(long)]
        brute_force: bool,
        /// Largest letter alphabet searched by --brute-force.
        #[arg(long, default_value_t = 2)]
        max_letters: usize,
        #[arg(long)]
        limit: bool,
    },
    /// Distortion-freeness check for one fixed distribution.
    Dftest(DftestArgs),
    /// Accuracy against token count.
    Experiment(ExperimentArgs),
    /// Accuracy and solver time for several key alphabet sizes.
    AblateR {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        r: Vec<u32>,
    },
    /// Message error rate at fractions of capacity (theorem-2 setting).
    Sweep {
        #[arg(long = "N", default_value_t = 16)]
        vocab: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.25")]
        rates: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256")]
        n_grid: Vec<usize>,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 0)]
        code_seed: u64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Distance-rank histogram of theorem-2 embedding on the two-point source.
    ChannelLaw {
        #[arg(long = "N", default_value_t = 16)]
        vocab: usize,
        #[arg(long, default_value_t = 100_000)]
        steps: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Serve the adapter protocol on stdin/stdout.
    Serve {
        /// Append every step request to this replay file.
        #[arg(long)]
        record: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DistanceArg {
    Identity,
    LogMl,
}

impl DistanceArg {
    fn resolve(self, vocab: usize) -> DistanceFn {
        match self {
            DistanceArg::Identity => DistanceFn::Identity,
            DistanceArg::LogMl => DistanceFn::log_ml(vocab),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Sinkhorn,
    Exact,
}

/// Parameters shared by `embed` and `dftest`; each overrides the config.
#[derive(Args, Clone)]
struct SetupArgs {
    #[arg(long = "N")]
    vocab: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    /// Symbol alphabet; defaults to 2^k.
    #[arg(long)]
    p: Option<u32>,
    /// Key alphabet; defaults to 4p.
    #[arg(long)]
    r: Option<u32>,
    #[arg(long)]
    phi: Option<f64>,
    /// p = r = N, phi = pi/(2N).
    #[arg(long)]
    theorem2: bool,
    #[arg(long)]
    code_seed: Option<u64>,
    #[arg(long)]
    sampling_seed: Option<u64>,
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    source: Option<SourceKind>,
    #[arg(long)]
    source_seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    replay: Option<PathBuf>,
    #[arg(long)]
    stream_id: Option<u64>,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    setup: SetupArgs,
    #[arg(long)]
    message: String,
    /// Trace output; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DftestArgs {
    #[command(flatten)]
    setup: SetupArgs,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    /// Symbols checked empirically; all symbols are checked analytically.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    symbols: Vec<u32>,
    /// Step of the source whose distribution is frozen.
    #[arg(long, default_value_t = 1)]
    step: usize,
    #[arg(long)]
    seed: u64,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Config file of `embed`, `decode`, `dftest` and `serve`.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default)]
    embed: Option<EmbedConfig>,
    #[serde(default)]
    source: Option<SourceSpec>,
    /// Hex master key; the environment variable takes precedence.
    #[serde(default)]
    master_key: Option<String>,
    #[serde(default)]
    stream_id: Option<u64>,
}

#[derive(Debug)]
enum CliError {
    Config(String),
    Trials(String),
    Runtime(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_) | Error::LengthMismatch { .. } | Error::Capability(_) | Error::Json(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(msg)) => {
            eprintln!("arcmark: configuration error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(CliError::Trials(msg)) => {
            eprintln!("arcmark: {msg}");
            ExitCode::from(EXIT_TRIALS)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("arcmark: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let config = cli.config.as_deref();
    match cli.command {
        Command::Encode {
            message,
            n,
            p,
            code_seed,
        } => {
            let m = Message::parse(&message)?;
            let params = CodeParams::new(m.len(), n, p, code_seed)?;
            let cw = encode(&m, &make_generator(params)?)?;
            print_json(&serde_json::json!({ "code": params, "codeword": cw.symbols }))
        }
        Command::Embed(args) => cmd_embed(config, args),
        Command::Decode { trace, distance } => cmd_decode(config, &trace, distance),
        Command::Capacity {
            vocab,
            brute_force,
            max_letters,
            limit,
        } => cmd_capacity(vocab, brute_force, max_letters, limit),
        Command::Dftest(args) => cmd_dftest(config, args),
        Command::Experiment(args) => {
            let spec = experiment_spec(config, &args)?;
            let out = run_accuracy_experiment(&spec)?;
            emit(
                &csv_string(&out.rows, spec.master_seed),
                args.output.as_ref().or(spec.output.as_ref()),
            )?;
            check_failures(&out.failures, spec.trials, spec.max_failure_fraction)
        }
        Command::AblateR { exp, r } => {
            let spec = experiment_spec(config, &exp)?;
            let ablation = run_r_ablation(&spec, &r)?;
            let rows: Vec<_> = ablation.iter().flat_map(|a| a.rows.clone()).collect();
            emit(
                &csv_string(&rows, spec.master_seed),
                exp.output.as_ref().or(spec.output.as_ref()),
            )?;
            for a in &ablation {
                eprintln!("r={} solver_seconds_per_token={:.3e}", a.r, a.solver_seconds_per_token);
            }
            Ok(())
        }
        Command::Sweep {
            vocab,
            rates,
            n_grid,
            trials,
            seed,
            code_seed,
            output,
        } => {
            let spec = SweepSpec {
                vocab,
                rates,
                n_grid,
                trials,
                master_seed: seed,
                code_seed,
            };
            let rows = run_capacity_sweep(&spec)?;
            let mut buf = Vec::new();
            write_sweep_csv(&mut buf, &rows, seed)?;
            emit(&String::from_utf8_lossy(&buf), output.as_ref())?;
            for r in rows.iter().filter(|r| r.skipped) {
                eprintln!("skipped rate={} n={}: k={} exceeds the decoding cap", r.rate, r.n, r.k);
            }
            Ok(())
        }
        Command::ChannelLaw { vocab, steps, seed } => print_json(&run_channel_law(vocab, steps, seed)?),
        Command::Serve { record } => {
            let run_cfg = load_run_config(config)?;
            let key = master_key(&run_cfg, 0)?;
            let mut rec_file = match &record {
                Some(p) => Some(BufWriter::new(File::create(p)?)),
                None => None,
            };
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            let result = bridge::serve(
                stdin.lock(),
                stdout.lock(),
                *key.key_bytes(),
                rec_file.as_mut().map(|w| w as &mut dyn Write),
            );
            if let Some(mut w) = rec_file {
                w.flush()?;
            }
            result.map(|_| ()).map_err(CliError::from)
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> CliResult<()> {
    let s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    writeln!(std::io::stdout(), "{s}")?;
    Ok(())
}

fn emit(text: &str, path: Option<&PathBuf>) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn check_failures(failures: &[(usize, String)], trials: usize, threshold: f64) -> CliResult<()> {
    for (trial, msg) in failures {
        eprintln!("trial {trial} failed: {msg}");
    }
    let fraction = failures.len() as f64 / trials as f64;
    if fraction > threshold {
        return Err(CliError::Trials(format!(
            "{} of {trials} trials failed (threshold {threshold})",
            failures.len()
        )));
    }
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn load_run_config(path: Option<&Path>) -> CliResult<RunConfig> {
    path.map_or_else(|| Ok(RunConfig::default()), read_json)
}

fn master_key(cfg: &RunConfig, stream_id: u64) -> CliResult<MasterKey> {
    if std::env::var_os(MASTER_KEY_ENV).is_some() {
        return Ok(MasterKey::from_env(stream_id)?);
    }
    match &cfg.master_key {
        Some(hex_key) => Ok(MasterKey::from_hex(hex_key, stream_id)?),
        None => Err(CliError::Config(format!(
            "no master key: set {MASTER_KEY_ENV} or the config field master_key"
        ))),
    }
}

/// Merges config and flags into an embedding setup and a source.
fn resolve_setup(cfg: &RunConfig, a: &SetupArgs) -> CliResult<(EmbedConfig, SourceSpec)> {
    let mut embed = match (&cfg.embed, a.vocab.or(cfg.source.as_ref().map(|s| s.vocab))) {
        (Some(e), _) => e.clone(),
        (None, Some(vocab)) => {
            let k =
                a.k.ok_or_else(|| CliError::Config("--k is required without a config".into()))?;
            let n =
                a.n.ok_or_else(|| CliError::Config("--n is required without a config".into()))?;
            if a.theorem2 {
                EmbedConfig::theorem2(k, n, vocab, 0)?
            } else {
                let p = match a.p {
                    Some(p) => p,
                    None if k <= 29 => 1u32 << k,
                    None => return Err(CliError::Config("--p is required for k > 29".into())),
                };
                EmbedConfig {
                    code: CodeParams::new(k, n, p, 0)?,
                    circle: CircleParams::new(vocab, p, a.r.unwrap_or(4 * p), 0.0)?,
                    solver: Default::default(),
                    theorem2_mode: false,
                    sampling_seed: 0,
                    keying: Default::default(),
                }
            }
        }
        (None, None) => {
            return Err(CliError::Config(
                "--N or a config with an embed section is required".into(),
            ))
        }
    };
    if let Some(v) = a.vocab {
        embed.circle.vocab = v;
    }
    if let Some(k) = a.k {
        embed.code.k = k;
    }
    if let Some(n) = a.n {
        embed.code.n = n;
    }
    if let Some(p) = a.p {
        embed.code.p = p;
        embed.circle.p = p;
    }
    if let Some(r) = a.r {
        embed.circle.r = r;
    }
    if let Some(phi) = a.phi {
        embed.circle.phi = phi;
    }
    if let Some(s) = a.code_seed {
        embed.code.code_seed = s;
    }
    if let Some(s) = a.sampling_seed {
        embed.sampling_seed = s;
    }
    match a.solver {
        Some(SolverArg::Exact) => embed.solver.method = SolverMethod::Exact,
        Some(SolverArg::Sinkhorn) => embed.solver.method = SolverMethod::Sinkhorn,
        None => {}
    }
    if let Some(e) = a.epsilon {
        embed.solver.epsilon = e;
    }
    embed.theorem2_mode |= a.theorem2;
    let embed = embed.normalized()?;

    let mut source = cfg
        .source
        .clone()
        .unwrap_or_else(|| SourceSpec::new(SourceKind::Dirichlet, embed.circle.vocab));
    source.vocab = embed.circle.vocab;
    if let Some(kind) = a.source {
        source.kind = kind;
    }
    if let Some(s) = a.source_seed {
        source.source_seed = s;
    }
    if let Some(x) = a.alpha {
        source.alpha = x;
    }
    if a.top_k.is_some() {
        source.top_k = a.top_k;
    }
    if let Some(t) = a.temperature {
        source.temperature = t;
    }
    if let Some(p) = &a.replay {
        source.path = Some(p.clone());
        if a.source.is_none() {
            source.kind = SourceKind::Replay;
        }
    }
    source.validate()?;
    Ok((embed, source))
}

fn cmd_embed(config: Option<&Path>, args: EmbedArgs) -> CliResult<()> {
    let run_cfg = load_run_config(config)?;
    let (cfg, source_spec) = resolve_setup(&run_cfg, &args.setup)?;
    let stream_id = args.setup.stream_id.or(run_cfg.stream_id).unwrap_or(0);
    let mk = master_key(&run_cfg, stream_id)?;
    let m = Message::parse(&args.message)?;
    let mut source = build_source(&source_spec)?;
    let trace = embed_sequence(&m, source.as_mut(), &mk, &cfg)?;
    let file = TraceFile::new(&trace, &cfg, stream_id);
    let text = serde_json::to_string_pretty(&file).map_err(Error::from)?;
    emit(&(text + "\n"), args.output.as_ref())
}

fn cmd_decode(config: Option<&Path>, trace: &Path, distance: DistanceArg) -> CliResult<()> {
    let run_cfg = load_run_config(config)?;
    let file: TraceFile = read_json(trace)?;
    let cfg = file.embed_config()?;
    let mk = master_key(&run_cfg, file.stream_id)?;
    let result = decode(&file.tokens, &mk, &cfg, distance.resolve(file.vocab))?;
    print_json(&result)
}

fn cmd_capacity(vocab: Option<usize>, brute_force: bool, max_letters: usize, limit: bool) -> CliResult<()> {
    let mut out = serde_json::Map::new();
    if let Some(n) = vocab {
        out.insert("N".into(), n.into());
        out.insert("closed_form_bits".into(), capacity_closed_form(n)?.into());
        if brute_force {
            let res = brute_force_capacity(n, max_letters)?;
            out.insert("brute_force_bits".into(), res.bits.into());
            out.insert("table".into(), serde_json::to_value(&res.table).map_err(Error::from)?);
            out.insert(
                "skipped_letters".into(),
                serde_json::to_value(&res.skipped_letters).map_err(Error::from)?,
            );
        } else {
            let table = optimal_construction(n)?;
            out.insert("construction_bits".into(), table.mutual_information_bits().into());
        }
    } else if !limit {
        return Err(CliError::Config("capacity needs --N or --limit".into()));
    }
    if limit {
        out.insert("limit_bits".into(), capacity_limit().into());
    }
    print_json(&out)
}

fn cmd_dftest(config: Option<&Path>, args: DftestArgs) -> CliResult<()> {
    let run_cfg = load_run_config(config)?;
    let (cfg, source_spec) = resolve_setup(&run_cfg, &args.setup)?;
    let q = match source_spec.kind {
        SourceKind::Replay => {
            let mut src = build_source(&source_spec)?;
            src.next_distribution(args.step, &[])?
        }
        _ => SyntheticSource::new(source_spec)?.distribution_at(args.step)?,
    };
    let mk = match master_key(&run_cfg, 0) {
        Ok(k) => k,
        Err(_) => MasterKey::for_trial(args.seed, 0),
    };
    let report = run_distortion_test(&cfg, &q, &mk, args.samples, &args.symbols, args.seed)?;
    print_json(&report)
}

fn experiment_spec(config: Option<&Path>, args: &ExperimentArgs) -> CliResult<ExperimentSpec> {
    let path = config.ok_or_else(|| CliError::Config("experiments need --config <spec.json>".into()))?;
    let mut spec: ExperimentSpec = read_json(path)?;
    spec.master_seed = args.seed;
    if let Some(t) = args.trials {
        spec.trials = t;
    }
    spec.embed.normalize()?;
    spec.validate()?;
    Ok(spec)
}
