//! Command-line interface: argument parsing, experiment configuration and
//! the command implementations.
//!
//! Every command writes only inside its output directory, atomically, and
//! records a `manifest.json` listing what it wrote. All randomness comes from
//! the top-level seed.

mod commands;
mod config;

pub use commands::{cmd_eval, cmd_fit, cmd_pareto, cmd_report, cmd_sample, cmd_sweep, cmd_train, ParetoInput, RunManifest};
pub use config::{EvalConfig, ExperimentConfig, ModelConfig, ObjectiveConfig, SweepConfig};

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use crate::io::OutputFormat;

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Validation(_) | Error::Domain(_) | Error::StateSpace(_) => 2,
        Error::Numerical { .. } | Error::Degenerate(_) => 3,
        Error::Mismatch(_) | Error::Io { .. } | Error::Format(_) => 4,
    }
}

#[derive(Debug, Parser)]
#[command(name = "difflab", version, about = "Desk-scale discrete diffusion language model laboratory")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override the configuration's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory (overrides the configuration's `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to all cores; results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Format of tabular outputs.
    #[arg(long, global = true, value_enum, default_value = "csv")]
    pub format: FormatArg,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum FormatArg {
    Csv,
    Jsonlines,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Jsonlines => OutputFormat::Jsonlines,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes a checkpoint, metrics and a manifest.
    Train,
    /// Evaluate a checkpoint: NELBO, generative perplexity, entropy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Draw samples from a checkpoint and write generation traces.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of samples (defaults to `eval.samples`).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Run the IsoFLOP sweep of the configuration's `sweep` section.
    Sweep,
    /// Fit IsoFLOP parabolas and power laws to a sweep-records CSV.
    Fit {
        #[arg(long)]
        records: PathBuf,
    },
    /// Build a speed–quality Pareto frontier from fitted curves (TOML).
    Pareto {
        #[arg(long)]
        curves: PathBuf,
    },
    /// Write plot data from sweep records and, optionally, fitted curves.
    Report {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        curves: Option<PathBuf>,
    },
}

/// Parse `args` and run; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> crate::Result<()> {
    let g = &cli.global;
    if let Some(n) = g.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // Only the first call in a process can set the global pool; the
        // results never depend on the thread count anyway.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let format = OutputFormat::from(g.format);
    match &cli.command {
        Command::Train => cmd_train(&load_config(g)?, &out_dir(g)?, format),
        Command::Eval { checkpoint } => cmd_eval(&load_config(g)?, checkpoint, &out_dir(g)?),
        Command::Sample { checkpoint, count } => cmd_sample(&load_config(g)?, checkpoint, *count, &out_dir(g)?),
        Command::Sweep => cmd_sweep(&load_config(g)?, &out_dir(g)?, format),
        Command::Fit { records } => cmd_fit(records, &plain_out(g)?, format),
        Command::Pareto { curves } => cmd_pareto(curves, &plain_out(g)?, format),
        Command::Report { records, curves } => cmd_report(records, curves.as_deref(), &plain_out(g)?, format),
    }
}

fn load_config(g: &GlobalArgs) -> crate::Result<ExperimentConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &g.out {
        cfg.out = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(g: &GlobalArgs) -> crate::Result<PathBuf> {
    if let Some(o) = &g.out {
        return Ok(o.clone());
    }
    let cfg = load_config(g)?;
    cfg.out
        .ok_or_else(|| Error::Config("no output directory: pass --out or set `out` in the config".into()))
}

fn plain_out(g: &GlobalArgs) -> crate::Result<PathBuf> {
    g.out
        .clone()
        .ok_or_else(|| Error::Config("this command needs --out".into()))
}
