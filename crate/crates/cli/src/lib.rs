//! `poseval` command line: evaluation, threshold sweeps, dataset
//! validation and fixture generation.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use poseval_core::dataset::validate::validate_benchmark;
use poseval_core::dataset::{self, open_benchmark, Sectioned, TestTarget};
use poseval_core::fixturegen;
use poseval_core::harness::{
    default_bin_edges, output, run_evaluation, sweep, EvalConfig, Evaluation, HarnessError,
};
use poseval_core::metrics::{DEFAULT_TAU_MM, DEFAULT_THETA};
use poseval_core::visibility::{VisibilityConfig, DEFAULT_DELTA_MM};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

pub const DATASET_ENV: &str = "POSEVAL_DATASET";
pub const RUN_LOG_FILE: &str = "run.log";

#[derive(Parser, Debug)]
#[command(name = "poseval", version, about = "Evaluate 6D object pose estimates")]
pub struct Cli {
    /// More log output on standard error (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Score estimates and write the per-target ledger and recall report.
    Eval(RunArgs),
    /// Score estimates over a grid of τ and θ values.
    Sweep(SweepArgs),
    /// Check manifest, models and scenes for consistency.
    Validate {
        /// Benchmark root: a dataset directory or a directory of datasets.
        #[arg(long, env = DATASET_ENV)]
        dataset: PathBuf,
    },
    /// Write a synthetic miniature benchmark plus exact ground-truth estimates.
    Fixturegen {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Random seed.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Benchmark root: a dataset directory or a directory of datasets.
    #[arg(long, env = DATASET_ENV)]
    pub dataset: PathBuf,
    /// Estimates file with rows `scene_id,im_id,obj_id,score,R,t,time`.
    #[arg(long)]
    pub estimates: PathBuf,
    /// Test targets file with rows `scene_id,im_id,obj_id`. Without it every
    /// annotated object of every image is a target.
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Misalignment tolerance τ, millimeters.
    #[arg(long, value_name = "MM", default_value_t = DEFAULT_TAU_MM)]
    pub tau: f64,
    /// Correctness threshold θ on the VSD error, a fraction in (0, 1].
    #[arg(long, value_name = "FRACTION", default_value_t = DEFAULT_THETA)]
    pub theta: f64,
    /// Occlusion tolerance δ for visibility masks, millimeters.
    #[arg(long, value_name = "MM", default_value_t = DEFAULT_DELTA_MM)]
    pub delta: f64,
    /// Worker threads.
    #[arg(long, value_name = "N", default_value_t = default_workers())]
    pub workers: usize,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated τ values, millimeters.
    #[arg(long, value_name = "MM,...", value_delimiter = ',', default_values_t = [5.0, 10.0, 20.0, 40.0])]
    pub taus: Vec<f64>,
    /// Comma-separated θ values, fractions in (0, 1].
    #[arg(long, value_name = "FRACTION,...", value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])]
    pub thetas: Vec<f64>,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Resolved settings of one evaluation run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub targets_file: Option<PathBuf>,
    pub estimates_file: PathBuf,
    pub output_dir: PathBuf,
    pub eval: EvalConfig,
}

/// A failed command: message for standard error plus exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Self {
            code: if e.is_io() { EXIT_IO } else { EXIT_VALIDATION },
            message: e.to_string(),
        }
    }
}

impl From<dataset::DatasetError> for Failure {
    fn from(e: dataset::DatasetError) -> Self {
        HarnessError::from(e).into()
    }
}

impl RunArgs {
    pub fn config(&self) -> Result<RunConfig, Failure> {
        let eval = EvalConfig::new(self.tau, self.theta, self.delta, self.workers)?;
        Ok(RunConfig {
            dataset_root: self.dataset.clone(),
            targets_file: self.targets.clone(),
            estimates_file: self.estimates.clone(),
            output_dir: self.out.clone(),
            eval,
        })
    }
}

fn append_run_log(dir: &Path, line: &str) {
    let stamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0);
    let path = dir.join(RUN_LOG_FILE);
    let res = std::fs::create_dir_all(dir).and_then(|_| {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&path)?;
        writeln!(f, "{stamp:.3} {line}")
    });
    if let Err(e) = res {
        log::warn!("cannot append to {}: {e}", path.display());
    }
}

fn evaluate(cfg: &RunConfig) -> Result<Evaluation, Failure> {
    Ok(run_evaluation(
        &cfg.dataset_root,
        cfg.targets_file.as_deref(),
        &cfg.estimates_file,
        &cfg.eval,
    )?)
}

fn fmt_recall(r: Option<f64>) -> String {
    r.map_or_else(|| "n/a".to_string(), |v| format!("{:.4}", v))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Evaluation, Failure> {
    append_run_log(&cfg.output_dir, "eval started");
    let eval = evaluate(cfg)?;
    output::write_evaluation(&cfg.output_dir, &eval, &default_bin_edges())?;
    for (name, d) in &eval.report.per_dataset {
        println!("{name}: recall {} ({} of {} targets evaluated)", fmt_recall(d.recall), d.counts.evaluated, d.counts.total);
    }
    println!("overall: {}", fmt_recall(eval.report.overall));
    append_run_log(&cfg.output_dir, "eval finished");
    Ok(eval)
}

pub fn cmd_sweep(cfg: &RunConfig, taus: &[f64], thetas: &[f64]) -> Result<(), Failure> {
    for &t in taus {
        EvalConfig::new(t, cfg.eval.vsd.theta, cfg.eval.visibility.delta, 1)?;
    }
    for &t in thetas {
        EvalConfig::new(cfg.eval.vsd.tau, t, cfg.eval.visibility.delta, 1)?;
    }
    append_run_log(&cfg.output_dir, "sweep started");
    let eval = evaluate(cfg)?;
    let grid = sweep(&eval.results, taus, thetas)?;
    output::write_sweep(&cfg.output_dir, &grid)?;
    println!("{} grid points written to {}", grid.cells.len(), cfg.output_dir.join(output::SWEEP_FILE).display());
    append_run_log(&cfg.output_dir, "sweep finished");
    Ok(())
}

pub fn cmd_validate(root: &Path) -> Result<(), Failure> {
    let findings = validate_benchmark(root)?;
    if findings.is_empty() {
        println!("{}: no problems found", root.display());
        return Ok(());
    }
    for f in &findings {
        eprintln!("{f}");
    }
    Err(Failure::validation(format!("{} problem(s) found", findings.len())))
}

pub const EXACT_ESTIMATES_FILE: &str = "estimates_exact.csv";
pub const TARGETS_FILE: &str = "targets.csv";

pub fn cmd_fixturegen(out: &Path, seed: u64) -> Result<(), Failure> {
    fixturegen::write_benchmark(out, seed)?;
    let mut estimates = Sectioned::new();
    let mut targets: Sectioned<TestTarget> = Sectioned::new();
    for d in open_benchmark(out)? {
        estimates.insert(d.name().to_string(), fixturegen::exact_estimates(&d, &VisibilityConfig::default())?);
        targets.insert(d.name().to_string(), dataset::derive_targets(d.load_all_meta()?.values()));
    }
    dataset::save_estimates(&out.join(EXACT_ESTIMATES_FILE), &estimates)?;
    dataset::write_atomic(
        &out.join(TARGETS_FILE),
        dataset::targets::format_targets(&targets).as_bytes(),
    )?;
    println!("benchmark written to {}", out.display());
    Ok(())
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Runs the command line and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let outcome = match &cli.command {
        Command::Eval(a) => a.config().and_then(|c| cmd_eval(&c).map(|_| ())),
        Command::Sweep(s) => s.run.config().and_then(|c| cmd_sweep(&c, &s.taus, &s.thetas)),
        Command::Validate { dataset } => cmd_validate(dataset),
        Command::Fixturegen { out, seed } => cmd_fixturegen(out, *seed),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
