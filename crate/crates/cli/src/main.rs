//! Command-line front end: decompose scene text into directives, solve the
//! implied layouts, run the progressive pipeline with all artifacts on
//! disk, and score, compare, or sweep finished configurations.

mod ablate;
mod decompose;
mod eval;
mod layout;
mod run;
mod rundir;
mod sweep;

use std::path::Path;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use latentstage::config::RunConfig;
use latentstage::eval::EvalError;

/// Exit code for rejected input: scene text, configs, flags, run dirs.
pub const EXIT_INPUT: u8 = 2;
/// Exit code for a directive that failed to solve or run; artifacts of
/// the stages that did finish are kept.
pub const EXIT_DIRECTIVE: u8 = 3;
/// Exit code for denoiser-backend trouble: spawn, protocol, timeout, or
/// a missing background latent.
pub const EXIT_BACKEND: u8 = 4;

/// An error routed to a specific process exit code.
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn input(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_INPUT, error: error.into() }
    }

    pub fn directive(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_DIRECTIVE, error: error.into() }
    }

    pub fn backend(error: impl Into<anyhow::Error>) -> Self {
        Self { code: EXIT_BACKEND, error: error.into() }
    }
}

/// Suite evaluation failures: a stage that refused to run is a directive
/// problem; anything else is bad input.
pub fn eval_failure(error: EvalError) -> Failure {
    match error {
        EvalError::Run(_) => Failure::directive(error),
        _ => Failure::input(error),
    }
}

/// Loads a config file when given, otherwise the defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))
                .map_err(Failure::input)?;
            RunConfig::parse(&text)
                .with_context(|| format!("config {}", p.display()))
                .map_err(Failure::input)
        }
    }
}

#[derive(Parser)]
#[command(
    name = "latentstage",
    version,
    about = "Progressive scene construction over diffusion latents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split scene text into an ordered directive script.
    Decompose(decompose::Args),
    /// Solve the boxes a script implies, without running diffusion.
    Layout(layout::Args),
    /// Run a script stage by stage, writing artifacts to a run directory.
    Run(run::Args),
    /// Score a finished run directory from its stage traces.
    Eval(eval::Args),
    /// Compare pipeline variants on the bundled suite.
    Ablate(ablate::Args),
    /// Sweep one knob over a bundled suite, emitting CSV.
    Sweep(sweep::Args),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Decompose(args) => decompose::run(args),
        Command::Layout(args) => layout::run(args),
        Command::Run(args) => run::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Ablate(args) => ablate::run(args),
        Command::Sweep(args) => sweep::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
