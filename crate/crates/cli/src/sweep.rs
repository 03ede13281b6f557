//! `sweep`: one knob over a bundled relational suite, CSV out.

use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args as ClapArgs, ValueEnum};
use latentstage::eval::{relational_suite, sweep_alpha, sweep_csv, sweep_tau};

use crate::{eval_failure, Failure};

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
pub enum Param {
    /// Gradient step size of the latent response.
    Alpha,
    /// Mask schedule switch step.
    Tau,
}

#[derive(ClapArgs)]
pub struct Args {
    /// Knob to sweep.
    #[arg(value_enum)]
    param: Param,
    /// Comma-separated values to sample.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Number of suite cases.
    #[arg(long, default_value_t = 6)]
    cases: usize,
    /// Base seed of the suite.
    #[arg(long, default_value_t = 500)]
    seed: u64,
    /// `key = value` config; supplies the non-swept knobs.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parallel worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Write the CSV here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<(), Failure> {
    let config = crate::load_config(args.config.as_deref())?;
    let suite = relational_suite(args.cases, args.seed).map_err(eval_failure)?;
    let stimulus = config.stimulus();
    let fusion = config.fusion();
    let rows = match args.param {
        Param::Alpha => sweep_alpha(
            &args.values,
            &suite,
            &stimulus,
            &fusion,
            config.recall_threshold,
            args.jobs,
        )
        .map_err(eval_failure)?,
        Param::Tau => {
            let taus = integer_values(&args.values)?;
            sweep_tau(&taus, &suite, &stimulus, &fusion, config.recall_threshold, args.jobs)
                .map_err(eval_failure)?
        }
    };
    let csv = sweep_csv(&rows);
    match &args.out {
        Some(path) => std::fs::write(path, &csv)
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::input)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn integer_values(values: &[f64]) -> Result<Vec<usize>, Failure> {
    values
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && (0.0..=u32::MAX as f64).contains(&v) {
                Ok(v as usize)
            } else {
                Err(Failure::input(anyhow!("tau value {v} is not a small non-negative integer")))
            }
        })
        .collect()
}
