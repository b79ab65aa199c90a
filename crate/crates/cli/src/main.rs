use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use ncamul::eval::{self, EvalReport, LengthRecord};
use ncamul::model::checkpoint::{self, AnyModel};
use ncamul::model::{Engine, ModelKind, Stepper, Symbolic};
use ncamul::train::{self, TrainConfig};
use ncamul::{decode_product, multiply_oracle, outer_product_encode, BitVec, Error, Grid};

/// Binary multiplication on a 2D outer-product grid, by an exact local rule
/// or a learned neural cellular automaton.
#[derive(Parser, Debug)]
#[command(name = "ncamul", version)]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Chaos-train a rule network and write a checkpoint plus metrics CSV.
    Train(TrainArgs),
    /// Score a checkpoint (or the exact rule) on random operands of given widths.
    Eval(EvalArgs),
    /// Print every grid frame of one multiplication.
    Trace(TraceArgs),
    /// Train one NCA per (hidden width, seed) and count generalisation successes.
    Sweep(SweepArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Nca,
    Mlp,
}

#[derive(Args, Debug, Clone)]
struct ProtocolArgs {
    /// Optimisation steps.
    #[arg(long, default_value_t = 30_000)]
    steps: usize,
    /// Chaos samples per step.
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// Peak learning rate (cosine-annealed to 0).
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Smallest training operand width.
    #[arg(long, default_value_t = 2)]
    n_min: usize,
    /// Largest training operand width.
    #[arg(long, default_value_t = 6)]
    n_max: usize,
    /// Steps between single-step accuracy probes.
    #[arg(long, default_value_t = 500)]
    eval_every: usize,
    /// Fresh chaos samples per probe.
    #[arg(long, default_value_t = 1024)]
    eval_samples: usize,
}

impl ProtocolArgs {
    fn config(&self, kind: ModelKind, hidden: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            kind,
            hidden,
            total_steps: self.steps,
            batch_size: self.batch,
            lr0: self.lr,
            n_min: self.n_min,
            n_max: self.n_max,
            eval_every: self.eval_every,
            eval_samples: self.eval_samples,
            seed,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Network family.
    #[arg(long, value_enum, default_value_t = KindArg::Nca)]
    kind: KindArg,
    /// Hidden width (default 16 for nca, 32 for mlp).
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Checkpoint path.
    #[arg(long, default_value = "nca.json")]
    out: PathBuf,
    /// Metrics CSV path (default: checkpoint path with .metrics.csv).
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long, conflicts_with = "symbolic", required_unless_present = "symbolic")]
    model: Option<PathBuf>,
    /// Evaluate the exact rule instead of a checkpoint.
    #[arg(long)]
    symbolic: bool,
    /// Operand widths.
    #[arg(long, value_delimiter = ',', default_values_t = eval::DEFAULT_LENGTHS.to_vec())]
    bits: Vec<usize>,
    /// Also run the 2048- and 4096-bit rows (hours on one core).
    #[arg(long)]
    long: bool,
    /// Samples per width (default: 200 up to 16 bits, 50 up to 256, 10 beyond).
    #[arg(long)]
    samples: Option<usize>,
    /// Check every operand pair instead of sampling (widths up to 12).
    #[arg(long)]
    exhaustive: bool,
    /// Exit 1 unless every width reaches this exact-match rate.
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path prefix; writes <out>.json and <out>.csv.
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Ascii,
    Json,
}

#[derive(Args, Debug)]
struct TraceArgs {
    /// Checkpoint to run.
    #[arg(long, conflicts_with = "symbolic", required_unless_present = "symbolic")]
    model: Option<PathBuf>,
    /// Use the exact rule.
    #[arg(long)]
    symbolic: bool,
    /// First operand (decimal).
    #[arg(long)]
    a: String,
    /// Second operand (decimal).
    #[arg(long)]
    b: String,
    /// Grid width (default: bit length of the wider operand).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, value_enum, default_value_t = FormatArg::Ascii)]
    format: FormatArg,
    /// Step cap (default 4n + 64).
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the frames as JSON to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Hidden widths to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = vec![4, 8, 16, 32])]
    hidden: Vec<usize>,
    /// Seeds per width (seeds 0..N, offset by --seed).
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path prefix; writes <out>.csv and <out>.json.
    #[arg(long, default_value = "sweep")]
    out: PathBuf,
    #[command(flatten)]
    protocol: ProtocolArgs,
}

enum CliError {
    Failure(String),
    Usage(String),
    Io(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Checkpoint(_) => CliError::Io(e.to_string()),
            Error::InvalidConfig(_) | Error::InvalidDecimal(_) | Error::OperandTooWide { .. } | Error::ZeroWidth => {
                CliError::Usage(e.to_string())
            }
            other => CliError::Failure(other.to_string()),
        }
    }
}

type CliResult = Result<(), CliError>;

fn write_file(path: &Path, contents: &str) -> CliResult {
    checkpoint::write_atomic(path, contents.as_bytes()).map_err(CliError::from)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_model(path: &Path) -> Result<AnyModel, CliError> {
    Ok(checkpoint::load(path)?.model)
}

fn cmd_train(args: TrainArgs) -> CliResult {
    let kind = match args.kind {
        KindArg::Nca => ModelKind::Nca,
        KindArg::Mlp => ModelKind::Mlp,
    };
    let hidden = args.hidden.unwrap_or(match kind {
        ModelKind::Nca => 16,
        ModelKind::Mlp => 32,
    });
    let config = args.protocol.config(kind, hidden, args.seed);
    config.validate()?;
    let metrics_path = args
        .metrics
        .clone()
        .unwrap_or_else(|| args.out.with_extension("metrics.csv"));
    // Fail on unwritable destinations before spending minutes training.
    for p in [&args.out, &metrics_path] {
        if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            if !dir.is_dir() {
                return Err(CliError::Io(format!("directory {} does not exist", dir.display())));
            }
        }
    }

    let (model, metrics) = train::train_reporting(&config, |p| {
        eprintln!(
            "step {:>6}  lr {:.3e}  loss {:.4e}  single-step acc {:.4}",
            p.step, p.lr, p.loss, p.single_step_acc
        );
    })?;
    let cfg_json = serde_json::to_value(&config).expect("config serializes");
    let text = match &model {
        AnyModel::Nca(m) => checkpoint::to_json(m, Some(args.seed), &cfg_json),
        AnyModel::Mlp(m) => checkpoint::to_json(m, Some(args.seed), &cfg_json),
    };
    write_file(&args.out, &text)?;
    write_file(&metrics_path, &metrics.to_csv()?)?;
    println!(
        "{} hidden={} params={} final single-step accuracy {:.4} (first perfect at {})",
        kind.as_str(),
        hidden,
        model.param_count(),
        metrics.final_single_step_acc,
        metrics
            .first_perfect_step
            .map_or_else(|| "never".to_string(), |s| format!("step {s}"))
    );
    println!("wrote {} and {}", args.out.display(), metrics_path.display());
    Ok(())
}

fn run_eval<S: Stepper>(stepper: &S, args: &EvalArgs) -> Result<EvalReport, CliError> {
    let mut lengths = args.bits.clone();
    if args.long {
        lengths.extend(eval::LONG_LENGTHS);
    }
    if args.exhaustive {
        let records: Vec<LengthRecord> = lengths
            .iter()
            .map(|&n| eval::evaluate_exhaustive(stepper, n))
            .collect::<Result<_, _>>()?;
        return Ok(EvalReport {
            model_id: stepper.label(),
            seed: args.seed,
            records,
        });
    }
    let plan: Vec<(usize, usize)> = lengths
        .iter()
        .map(|&n| (n, args.samples.unwrap_or_else(|| eval::default_samples(n))))
        .collect();
    let mut records = Vec::new();
    for &(n, samples) in &plan {
        let r = eval::evaluate_length(stepper, n, samples, args.seed)?;
        eprintln!(
            "{:>5} bits: {}/{} exact, steps mean {:.1} max {}",
            n, r.correct, r.samples, r.mean_steps, r.max_steps
        );
        records.push(r);
    }
    Ok(EvalReport {
        model_id: stepper.label(),
        seed: args.seed,
        records,
    })
}

fn cmd_eval(args: EvalArgs) -> CliResult {
    if args.bits.contains(&0) {
        return Err(CliError::Usage("--bits entries must be at least 1".into()));
    }
    let report = match &args.model {
        None => run_eval(&Symbolic, &args)?,
        Some(path) => match load_model(path)? {
            AnyModel::Nca(m) => run_eval(&Engine::new(&m), &args)?,
            AnyModel::Mlp(m) => run_eval(&Engine::new(&m), &args)?,
        },
    };
    write_file(&with_suffix(&args.out, ".json"), &report.to_json())?;
    write_file(&with_suffix(&args.out, ".csv"), &report.to_csv()?)?;
    print!("{}", report.to_table());
    if report.all_at_least(args.threshold) {
        Ok(())
    } else {
        Err(CliError::Failure(format!(
            "exact-match rate below {} at some width",
            args.threshold
        )))
    }
}

fn emit_frame(format: FormatArg, t: usize, g: &Grid, frames: &mut Vec<serde_json::Value>) {
    match format {
        FormatArg::Ascii => print!("t={t}\n{}\n", g.to_ascii()),
        FormatArg::Json => frames.push(serde_json::to_value(g.to_frame()).expect("frame serializes")),
    }
}

fn run_trace(stepper: &dyn Stepper, args: &TraceArgs) -> CliResult {
    let a = BitVec::from_decimal_str(&args.a)?;
    let b = BitVec::from_decimal_str(&args.b)?;
    let n = args.n.unwrap_or_else(|| a.len().max(b.len()));
    let g0 = outer_product_encode(&a, &b, n)?;
    let cap = args.max_steps.unwrap_or_else(|| ncamul::rule::default_step_cap(n));
    if cap == 0 {
        return Err(CliError::Usage("--max-steps must be at least 1".into()));
    }

    let mut frames = Vec::new();
    emit_frame(args.format, 0, &g0, &mut frames);
    let mut g = g0;
    let mut converged_at = None;
    for t in 1..=cap {
        let next = stepper.step(&g)?;
        if next == g {
            converged_at = Some(if t == 1 { 0 } else { t });
            if t > 1 {
                emit_frame(args.format, t, &next, &mut frames);
            }
            break;
        }
        emit_frame(args.format, t, &next, &mut frames);
        g = next;
    }

    let json = serde_json::Value::Array(frames);
    if let FormatArg::Json = args.format {
        println!("{json}");
    }
    if let Some(path) = &args.out {
        write_file(path, &(json.to_string() + "\n"))?;
    }
    let Some(steps) = converged_at else {
        println!("diverged: no fixed point within {cap} steps");
        return Err(CliError::Failure("divergence".into()));
    };
    let product = decode_product(&g)?;
    println!("product: {product} steps: {steps}");
    let truth = multiply_oracle(&a, &b);
    if product != truth {
        println!("mismatch: expected {truth}");
        return Err(CliError::Failure("wrong product".into()));
    }
    Ok(())
}

fn cmd_trace(args: TraceArgs) -> CliResult {
    match &args.model {
        None => run_trace(&Symbolic, &args),
        Some(path) => match load_model(path)? {
            AnyModel::Nca(m) => run_trace(&Engine::new(&m), &args),
            AnyModel::Mlp(m) => run_trace(&Engine::new(&m), &args),
        },
    }
}

fn cmd_sweep(args: SweepArgs) -> CliResult {
    if args.hidden.contains(&0) || args.seeds == 0 {
        return Err(CliError::Usage("--hidden entries and --seeds must be at least 1".into()));
    }
    let base = args.protocol.config(ModelKind::Nca, 16, 0);
    base.validate()?;
    let mut records = Vec::new();
    for &h in &args.hidden {
        for s in 0..args.seeds {
            let seed = args.seed + s;
            let (record, _) = eval::sweep_cell(&base, h, seed);
            eprintln!(
                "hidden {:>3} seed {:>3}: single-step {:.4}, generalises {}",
                h, seed, record.final_single_step_acc, record.generalization_success
            );
            records.push(record);
        }
    }
    let report = eval::SweepReport::from_records(records);
    write_file(&with_suffix(&args.out, ".csv"), &report.to_csv()?)?;
    write_file(
        &with_suffix(&args.out, ".json"),
        &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"),
    )?;
    print!("{}", report.to_table());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
    {
        eprintln!("error: cannot start worker pool: {e}");
        return ExitCode::from(3);
    }
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Trace(a) => cmd_trace(a),
        Command::Sweep(a) => cmd_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Failure(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
