//! Command-line front end for the fedskip simulator.

pub mod commands;
pub mod config;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use fedskip::orch::Mode;
use fedskip::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "fedskip", version, about = "Layer-skipping federated learning simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct Common {
    /// Experiment config file of `key = value` lines.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (overrides `out.dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Training mode (overrides `fed.mode`).
    #[arg(long)]
    pub mode: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the corpus, task datasets, and client partitions.
    Gen(Common),
    /// Run one mode and write its history CSV.
    Run(Common),
    /// Sweep the number of trainable blocks.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated k values; `all` adds a full-model row.
        #[arg(long, default_value = "1")]
        k_list: String,
    },
    /// Summarize history CSVs into a markdown table and plots.
    Report {
        /// Directory for report.md and the plots.
        #[arg(long, default_value = "report")]
        out: PathBuf,
        #[arg(required = true)]
        csvs: Vec<PathBuf>,
    },
}

/// Process exit code of an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Input(_) | Error::Decode { .. } | Error::Io(_) => 3,
        Error::Protocol(_) => 4,
        Error::Internal(_) => 1,
    }
}

fn load(c: &Common) -> Result<config::CliConfig> {
    let text = std::fs::read_to_string(&c.config)
        .map_err(|e| Error::config(format!("cannot read config {}: {e}", c.config.display())))?;
    let mut text = text;
    if let Some(seed) = c.seed {
        text = text.lines().filter(|l| l.split('=').next().map(str::trim) != Some("seed")).collect::<Vec<_>>().join("\n");
        text.push_str(&format!("\nseed = {seed}\n"));
    }
    let mut cfg = config::parse_config(&text)?;
    if let Some(m) = &c.mode {
        cfg.mode = Mode::parse(m)?;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Gen(c) => commands::cmd_gen(&load(c)?),
        Command::Run(c) => commands::cmd_run(&load(c)?),
        Command::Ablate { common, k_list } => commands::cmd_ablate(&load(common)?, &commands::parse_k_list(k_list)?),
        Command::Report { out, csvs } => commands::cmd_report(csvs, out),
    }
}

/// Parses `args`, runs the command, prints its output, and returns the
/// exit code.
pub fn main_with_args<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(out) => {
            println!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
