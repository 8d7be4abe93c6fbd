//! `spreadvote` command-line tool.
//!
//! Exit codes: 0 ok, 1 configuration error, 2 runtime error, 3 a check
//! (bounds verdict or cross-validation) failed.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{Flags, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "spreadvote", version, about = "Spread-out voter model measures and percolation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw fields on B(0, radius) and write them as JSON.
    Sample(Flags),
    /// Meeting probabilities h_R(0, r e1) for r = 1..=r-max.
    Hscan(Flags),
    /// Batch of exponential-eta and disjoint-occurrence bound checks.
    Bounds(Flags),
    /// Enumerate or sample tree embeddings and audit sparsity.
    Renorm(Flags),
    /// Threshold estimates per range against Bernoulli percolation.
    Threshold(Flags),
    /// Two-point covariances for r = 1..=r-max.
    Covariance(Flags),
    /// Forward dynamics against the duality sampler.
    Crossval(Flags),
}

pub enum Failure {
    Config(String),
    Runtime(String),
    Check(String),
}

impl From<spreadvote::Error> for Failure {
    fn from(e: spreadvote::Error) -> Self {
        match e {
            spreadvote::Error::InvalidParameter { .. } | spreadvote::Error::UnsupportedDimension(_) => {
                Failure::Config(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, flags) = match &cli.command {
        Command::Sample(f) => ("sample", f),
        Command::Hscan(f) => ("hscan", f),
        Command::Bounds(f) => ("bounds", f),
        Command::Renorm(f) => ("renorm", f),
        Command::Threshold(f) => ("threshold", f),
        Command::Covariance(f) => ("covariance", f),
        Command::Crossval(f) => ("crossval", f),
    };
    let cfg = match RunConfig::resolve(flags) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global() {
        eprintln!("runtime error: {e}");
        return ExitCode::from(2);
    }
    match commands::run(name, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("runtime error ({name}, {}): {m}", cfg.echo_line());
            ExitCode::from(2)
        }
        Err(Failure::Check(m)) => {
            eprintln!("check failed: {m}");
            ExitCode::from(3)
        }
    }
}
