//! `visitpat`: staged pipeline from raw traces to frequent visiting patterns.
//!
//! Each subcommand reads files, writes files, and leaves a `run.json`
//! sidecar with the resolved config and content digests.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;
mod runlog;

use config::RunConfig;
use error::CliError;

#[derive(Parser, Debug)]
#[command(name = "visitpat", version, about = "Frequent visiting-pattern mining")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override any config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Cap on worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Print failures as JSON on stderr.
    #[arg(long, global = true)]
    error_json: bool,

    /// Exit with code 3 when any clustering run fails to converge.
    #[arg(long, global = true)]
    strict_convergence: bool,

    #[command(flatten)]
    overrides: Overrides,
}

/// Shorthand flags for the most common config keys.
#[derive(Args, Debug, Default)]
struct Overrides {
    #[arg(long, global = true, value_name = "SECONDS")]
    delta: Option<u32>,
    #[arg(long, global = true, value_name = "SECONDS")]
    lambda: Option<u32>,
    #[arg(long, global = true, value_name = "SECONDS")]
    omega: Option<u32>,
    #[arg(long, global = true)]
    alpha: Option<usize>,
    /// minimizing | median
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    damping: Option<f64>,
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Unit-interval window `le:ri`; repeatable.
    #[arg(long = "window", global = true, value_name = "LE:RI")]
    windows: Vec<String>,
    /// pooled | per_subject
    #[arg(long, global = true)]
    grouping: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("delta_s", self.delta.map(|v| v.to_string()));
        push("lambda_s", self.lambda.map(|v| v.to_string()));
        push("omega_s", self.omega.map(|v| v.to_string()));
        push("alpha", self.alpha.map(|v| v.to_string()));
        push("preference_mode", self.mode.clone());
        push("damping", self.damping.map(|v| v.to_string()));
        push("max_iter", self.max_iter.map(|v| v.to_string()));
        push("seed", self.seed.map(|v| v.to_string()));
        push("grouping", self.grouping.clone());
        if !self.windows.is_empty() {
            push("windows", Some(self.windows.join(";")));
        }
        out
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Raw sensor CSV to point sequences.
    Ingest {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Point sequences to binary interval sequences.
    Preprocess {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Build and persist the segment tree of distance matrices.
    Tree {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Cluster windows and export patterns as JSON.
    Discover {
        #[arg(long)]
        tree: PathBuf,
        #[arg(long)]
        bis: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Also write `cluster_id,exemplar_index,member_indices` CSV.
        #[arg(long)]
        clusters_csv: Option<PathBuf>,
    },
    /// Generate a planted dataset with ground-truth labels.
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Write raw sensor records instead of sequences.
        #[arg(long)]
        emit_raw: bool,
    },
    /// Score discovered clusters against labels.
    Eval {
        #[arg(long)]
        patterns: PathBuf,
        #[arg(long)]
        bis: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Also run k-means and hierarchical baselines with the true k.
        #[arg(long)]
        baselines: bool,
    },
    /// Cluster counts and scores over the omega sweep, both preference modes.
    Sweep {
        #[arg(long)]
        bis: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v)?;
    }
    for (k, v) in cli.overrides.pairs() {
        cfg.set(k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(j) = cli.jobs {
        visitpat::par::set_jobs(j);
    }
    let cfg = resolve_config(cli)?;
    let strict = cli.strict_convergence;
    match &cli.command {
        Command::Ingest { input, out } => commands::ingest(input, out, &cfg),
        Command::Preprocess { input, out } => commands::preprocess(input, out, &cfg),
        Command::Tree { input, out } => commands::tree(input, out, &cfg),
        Command::Discover {
            tree,
            bis,
            out,
            clusters_csv,
        } => commands::discover(tree, bis, out, clusters_csv.as_deref(), &cfg, strict),
        Command::Synth {
            out,
            labels,
            emit_raw,
        } => commands::synth(out, labels, *emit_raw, &cfg),
        Command::Eval {
            patterns,
            bis,
            labels,
            out,
            baselines,
        } => commands::eval(patterns, bis, labels, out, *baselines, &cfg),
        Command::Sweep { bis, labels, out } => commands::sweep(bis, labels.as_deref(), out, &cfg, strict),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.error_json {
                eprintln!("{}", e.to_json());
            } else {
                eprintln!("visitpat: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
