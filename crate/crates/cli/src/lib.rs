//! `vibeseg` command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input or usage, 2 I/O failure.

mod commands;
mod config;
mod output;

use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Help or version text; not a failure.
    #[error("{0}")]
    Info(String),
    #[error(transparent)]
    Core(#[from] vibeseg_core::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write {what}: {source}")]
    Output { what: String, source: Box<dyn std::error::Error + Send + Sync> },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => 0,
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_io() => 2,
            CliError::Core(_) => 1,
            CliError::Io(_) | CliError::Output { .. } => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "vibeseg", version, about = "Torso MR segmentation pre- and post-processing")]
pub struct Cli {
    /// Flat key=value file supplying defaults for any long flag; `sub.key`
    /// limits a key to one subcommand. Explicit flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every stochastic step (bootstrap, augmentation, noise oracles).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Stitch overlapping axial stacks into one volume.
    Stitch(StitchArgs),
    /// Build a pseudo-CT image from water, in-phase and muscle inputs.
    Pseudoct(PseudoctArgs),
    /// Component filtering and priority merge of labelmaps.
    Postproc(PostprocArgs),
    /// Coarse left/right body-band localizer from an in-phase image.
    Quadrants(QuadrantsArgs),
    /// Number vertebral bodies from C3 downwards and flag anomalies.
    Vertebrae(VertebraeArgs),
    /// Dice and ASSD per class with bootstrap confidence intervals.
    Eval(EvalArgs),
    /// Sliding-window inference through a patch oracle.
    Infer(InferArgs),
    /// Random elastic deformation of an image or labelmap.
    Augment(AugmentArgs),
    /// Label catalog utilities.
    #[command(subcommand)]
    Schema(SchemaCommand),
    /// Serve a mock oracle over the pipe protocol on stdin/stdout.
    #[command(hide = true)]
    OracleServe(OracleServeArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct StitchArgs {
    /// Input stacks, any order.
    #[arg(required = true)]
    pub stacks: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Output spacing x,y,z in mm (default: finest per axis).
    #[arg(long, value_parser = parse_triple_f64)]
    pub spacing: Option<[f64; 3]>,
    /// JSON report with warnings.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PseudoctArgs {
    #[arg(long)]
    pub water: PathBuf,
    #[arg(long)]
    pub inphase: PathBuf,
    /// Muscle mask or labelmap; any nonzero voxel counts as muscle.
    #[arg(long)]
    pub muscle: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of the in-phase 99th percentile below which voxels are air.
    #[arg(long, default_value_t = 0.1)]
    pub threshold_fraction: f64,
    /// Minimum interior air component kept as lung, mm³.
    #[arg(long, default_value_t = 1000.0)]
    pub min_volume: f64,
    /// Also write the background (1) / lung (2) labelmap.
    #[arg(long)]
    pub bglung_out: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct PostprocArgs {
    /// Input labelmap; repeat to priority-merge several.
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub labels: Vec<PathBuf>,
    /// Catalog JSON (default: built-in torso catalog).
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// 6, 18 or 26.
    #[arg(long, default_value_t = 26)]
    pub connectivity: u8,
    /// Skip component filtering; only merge.
    #[arg(long)]
    pub skip_filter: bool,
    /// Per-component CSV.
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct QuadrantsArgs {
    #[arg(long)]
    pub inphase: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Axial bands; the top band is unsplit.
    #[arg(long, default_value_t = vibeseg_core::quadrants::DEFAULT_BANDS)]
    pub bands: usize,
    #[arg(long, default_value_t = 0.1)]
    pub threshold_fraction: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct VertebraeArgs {
    /// Vertebral body mask, or a labelmap with --body-label.
    #[arg(long)]
    pub body: PathBuf,
    /// Use only this label of --body.
    #[arg(long)]
    pub body_label: Option<u32>,
    #[arg(long)]
    pub ivd: Option<PathBuf>,
    #[arg(long)]
    pub ivd_label: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value = "C3")]
    pub start_level: String,
    /// Smallest body component counted, mm³.
    #[arg(long, default_value_t = 500.0)]
    pub min_volume: f64,
    #[arg(long, default_value_t = 1.8)]
    pub merge_factor: f64,
    #[arg(long, default_value_t = 1.8)]
    pub gap_factor: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    /// Prediction; repeat together with --ref for several subjects.
    #[arg(long, required = true, action = clap::ArgAction::Append)]
    pub pred: Vec<PathBuf>,
    #[arg(long = "ref", required = true, action = clap::ArgAction::Append)]
    pub reference: Vec<PathBuf>,
    #[arg(long)]
    pub schema: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
    /// CSV mirror of the report (default: report path with .csv).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = vibeseg_core::metrics::DEFAULT_ITERATIONS)]
    pub iterations: usize,
    #[arg(long, default_value_t = vibeseg_core::metrics::DEFAULT_LEVEL)]
    pub level: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct InferArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `mock:constant:C`, `mock:threshold:T`, `mock:checkerboard`,
    /// `mock:quantize:K`, `mock:noise:K[:SEED]` or `exec:PROGRAM [ARGS]`.
    #[arg(long)]
    pub oracle: String,
    /// Optional second input channel, e.g. a quadrant map on the same grid.
    #[arg(long)]
    pub aux: Option<PathBuf>,
    #[arg(long, default_value = "224,224,64", value_parser = parse_triple_usize)]
    pub patch: [usize; 3],
    #[arg(long, default_value_t = vibeseg_core::tiler::DEFAULT_OVERLAP)]
    pub overlap: f64,
    /// Accumulator budget, e.g. 2G, 512M or plain bytes.
    #[arg(long, default_value = "2G", value_parser = parse_bytes)]
    pub memory_budget: usize,
    /// gaussian or uniform.
    #[arg(long, default_value = "gaussian")]
    pub kernel: String,
    /// f32 or f16.
    #[arg(long, default_value = "f32")]
    pub precision: String,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Control-point spacing, mm.
    #[arg(long, default_value_t = 32.0)]
    pub control_spacing: f64,
    /// Displacement standard deviation, mm.
    #[arg(long, default_value_t = 4.0)]
    pub sigma: f64,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(tag = "action", rename_all = "kebab-case")]
pub enum SchemaCommand {
    /// Write a catalog as JSON (default: the built-in torso catalog).
    Dump {
        /// `builtin`, `totalct` or a path.
        #[arg(long, default_value = "builtin")]
        catalog: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List differences between two catalogs.
    Diff { a: String, b: String },
    /// Map a labelmap from one catalog to another by class name.
    Map {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "totalct")]
        from: String,
        #[arg(long, default_value = "builtin")]
        to: String,
        #[arg(long)]
        out: PathBuf,
        /// Extra `source target` id pairs applied before mapping.
        #[arg(long)]
        remap: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Report unknown ids, per-class volumes and laterality problems.
    Check {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "builtin")]
        catalog: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Debug, Args, Serialize)]
pub struct OracleServeArgs {
    #[arg(long)]
    pub oracle: String,
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated values, got {s:?}"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| format!("cannot parse {p:?}"))?);
    }
    out.try_into().map_err(|_| unreachable!())
}

fn parse_triple_f64(s: &str) -> Result<[f64; 3], String> {
    parse_triple(s)
}

fn parse_triple_usize(s: &str) -> Result<[usize; 3], String> {
    parse_triple(s)
}

/// `123`, `64K`, `512M`, `2G` (binary multiples).
pub fn parse_bytes(s: &str) -> Result<usize, String> {
    let s = s.trim();
    let (num, mult) = match s.chars().last().map(|c| c.to_ascii_uppercase()) {
        Some('K') => (&s[..s.len() - 1], 1usize << 10),
        Some('M') => (&s[..s.len() - 1], 1 << 20),
        Some('G') => (&s[..s.len() - 1], 1 << 30),
        Some('T') => (&s[..s.len() - 1], 1 << 40),
        _ => (s, 1),
    };
    let v: f64 = num.trim().parse().map_err(|_| format!("cannot parse byte size {s:?}"))?;
    if !(v >= 0.0) || !v.is_finite() {
        return Err(format!("byte size must be non-negative, got {s:?}"));
    }
    Ok((v * mult as f64) as usize)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn parse_argv(argv: &[String]) -> CliResult<Cli> {
    let argv = match config::config_path(argv) {
        Some(path) => {
            let text = std::fs::read_to_string(&path)?;
            config::merge(argv, &Cli::command(), &config::parse(&text)?)?
        }
        None => argv.to_vec(),
    };
    Cli::try_parse_from(&argv).map_err(|e| match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Info(e.render().to_string()),
        _ => CliError::Usage(e.render().to_string()),
    })
}

/// Runs one invocation and returns the process exit code.
pub fn run(argv: &[String]) -> i32 {
    let cli = match parse_argv(argv) {
        Ok(c) => c,
        Err(CliError::Info(msg)) => {
            print!("{msg}");
            return 0;
        }
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    init_logging(cli.verbose);
    if cli.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global();
    }
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
