//! `wfdiff`: decompose, corrupt, train and sample from the command line.
//!
//! Every failure ends the process with a single stderr line of the form
//! `wfdiff: error[<kind>]: <message>` and a nonzero exit code.

mod commands;
mod error;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use error::CliError;
use wfdiff_core::io::config::describe_keys;
use wfdiff_core::io::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "wfdiff", version, about = "Wavelet-Fourier diffusion toolkit")]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides one configuration key; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the low band, its spectrum and the detail planes of an image.
    Decompose(DecomposeArgs),
    /// Corrupt an image to step t and write the reconstruction.
    Corrupt(CorruptArgs),
    /// Write reconstructions of one forward trajectory at several steps.
    Chain(ChainArgs),
    /// Train a denoiser on the synthetic shapes dataset.
    Train(TrainArgs),
    /// Draw images from a trained checkpoint.
    Sample(SampleArgs),
    /// Check transform roundtrips on random images and write a CSV report.
    Roundtrip(RoundtripArgs),
    /// Radial power spectra and band energies as CSV.
    Spectra(SpectraArgs),
}

#[derive(Debug, Args)]
struct DecomposeArgs {
    #[arg(long = "in", value_name = "IMAGE")]
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CorruptArgs {
    #[arg(long = "in", value_name = "IMAGE")]
    input: PathBuf,
    /// Output image path.
    #[arg(long, value_name = "IMAGE")]
    out: PathBuf,
    #[arg(long)]
    t: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use this checkpoint's schedule instead of one calibrated on the input.
    #[arg(long, value_name = "PATH")]
    ckpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ChainArgs {
    #[arg(long = "in", value_name = "IMAGE")]
    input: PathBuf,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Steps to write; defaults to 0, T/4, T/2, 3T/4 and T.
    #[arg(long, value_delimiter = ',')]
    ts: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_name = "PATH")]
    ckpt: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long, value_name = "PATH")]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long, value_name = "PATH")]
    ckpt: PathBuf,
    /// Shape class; unconditional when omitted.
    #[arg(long)]
    class: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct RoundtripArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random images per size and level combination.
    #[arg(long, default_value_t = 8)]
    count: usize,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct SpectraArgs {
    /// Images or directories of images; the synthetic dataset when omitted.
    #[arg(long = "in", value_name = "PATH")]
    inputs: Vec<PathBuf>,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

fn parse() -> Result<Cli, clap::Error> {
    let keys = format!(
        "Configuration keys (default, meaning):\n{}",
        describe_keys()
    );
    let matches = Cli::command()
        .after_long_help(keys.clone())
        .after_help(keys)
        .try_get_matches()?;
    Cli::from_arg_matches(&matches)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Decompose(a) => commands::decompose(&cfg, &a.input, &a.out),
        Command::Corrupt(a) => {
            commands::corrupt(&cfg, &a.input, &a.out, a.t, a.seed, a.ckpt.as_deref())
        }
        Command::Chain(a) => {
            commands::chain(&cfg, &a.input, &a.out, &a.ts, a.seed, a.ckpt.as_deref())
        }
        Command::Train(a) => commands::train(&cfg, &a.out, a.resume.as_deref()),
        Command::Sample(a) => commands::sample(&cfg, &a.ckpt, a.class, a.seed, a.count, &a.out),
        Command::Roundtrip(a) => commands::roundtrip(a.seed, a.count, &a.out),
        Command::Spectra(a) => commands::spectra(&cfg, &a.inputs, &a.out),
    }
}

fn main() -> ExitCode {
    let cli = match parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::usage(e.kind().to_string(), &e.to_string());
            eprintln!("{err}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
