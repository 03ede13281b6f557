//! `eval`: score a finished run directory from its stage traces.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args as ClapArgs;
use latentstage::eval::{metric_report, BoxSource};
use latentstage::io::read_trace;
use latentstage::srf::StageTrace;

use crate::Failure;

#[derive(ClapArgs)]
pub struct Args {
    /// Run directory produced by `run`.
    run_dir: PathBuf,
    /// `key = value` config; supplies the recall threshold.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Judge relations against solver boxes instead of realized attention.
    #[arg(long)]
    planned: bool,
}

pub fn run(args: Args) -> Result<(), Failure> {
    let config = crate::load_config(args.config.as_deref())?;
    let traces = read_traces(&args.run_dir)?;
    let source = if args.planned { BoxSource::Planned } else { BoxSource::Realized };
    let report =
        metric_report(&traces, config.recall_threshold, source).map_err(Failure::input)?;
    let json = serde_json::to_string_pretty(&report).map_err(Failure::input)?;
    println!("{json}");
    Ok(())
}

fn read_traces(run_dir: &Path) -> Result<Vec<StageTrace>, Failure> {
    let dir = run_dir.join("traces");
    let entries = std::fs::read_dir(&dir)
        .with_context(|| format!("listing {}", dir.display()))
        .map_err(Failure::input)?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Failure::input(anyhow!("no stage traces under {}", dir.display())));
    }
    files
        .iter()
        .map(|p| {
            read_trace(p)
                .with_context(|| format!("trace {}", p.display()))
                .map_err(Failure::input)
        })
        .collect()
}
