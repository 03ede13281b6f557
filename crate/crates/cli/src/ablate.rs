//! `ablate`: the bundled three-object suite under each pipeline variant,
//! summarized side by side.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args as ClapArgs;
use latentstage::eval::{ablation_run, ablation_suite, VariantSummary};
use latentstage::srf::AblationVariant;

use crate::{eval_failure, Failure};

#[derive(ClapArgs)]
pub struct Args {
    /// `key = value` config; supplies stimulus, fusion, and threshold knobs.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parallel worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Also write the summaries as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<(), Failure> {
    let config = crate::load_config(args.config.as_deref())?;
    let suite = ablation_suite().map_err(eval_failure)?;
    let variants =
        [AblationVariant::Full, AblationVariant::NoStimulus, AblationVariant::NoFusion];
    let rows = ablation_run(
        &suite,
        &config.stimulus(),
        &config.fusion(),
        &variants,
        config.recall_threshold,
        args.jobs,
    )
    .map_err(eval_failure)?;
    print!("{}", render_table(&rows));
    if let Some(path) = &args.out {
        let json = serde_json::to_string_pretty(&rows).map_err(Failure::input)?;
        std::fs::write(path, json + "\n")
            .with_context(|| format!("writing {}", path.display()))
            .map_err(Failure::input)?;
    }
    Ok(())
}

fn render_table(rows: &[VariantSummary]) -> String {
    let mut out =
        String::from("variant    object_recall  relation_accuracy  nonfinite  locality\n");
    for r in rows {
        let rel =
            r.relation_accuracy.map(|v| format!("{v:.4}")).unwrap_or_else(|| "na".to_string());
        out.push_str(&format!(
            "{:<10} {:>13.4}  {:>17}  {:>9}  {:>8}\n",
            r.label, r.object_recall, rel, r.nonfinite_cases, r.locality_violations
        ));
    }
    out
}
