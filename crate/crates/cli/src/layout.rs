//! `layout`: the boxes a script implies, stage by stage, with no
//! diffusion involved — the same solver calls the runner makes, dry.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::Args as ClapArgs;
use latentstage::directive::{
    decompose, load_script, render_directive, Directive, DirectiveScript,
};
use latentstage::io::{render_layout_report, write_layout_report};
use latentstage::layout::{relation_to_constraints, solve_relaxed, BBox};
use latentstage::srf::STAGE_SEED_STRIDE;

use crate::Failure;

#[derive(ClapArgs)]
pub struct Args {
    /// Scene text; alternative to --script.
    #[arg(required_unless_present = "script", conflicts_with = "script")]
    text: Option<String>,
    /// Pre-split directive script file.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Seed for the solver's deterministic tie-breaking.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write one report per stage into this directory instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<(), Failure> {
    let script = resolve_script(args.text.as_deref(), args.script.as_deref())?;
    let stages = solve_script(&script, args.seed)?;

    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::input)?;
        for (i, (_, boxes)) in stages.iter().enumerate() {
            write_layout_report(&dir.join(format!("{i:02}.txt")), boxes)
                .map_err(Failure::input)?;
        }
        println!("wrote {} stage reports to {}", stages.len(), dir.display());
    } else {
        for (i, (text, boxes)) in stages.iter().enumerate() {
            println!("stage {i:02}  {text}");
            print!("{}", render_layout_report(boxes));
        }
    }
    Ok(())
}

/// Loads a script file or decomposes inline text; either way a parse
/// problem is an input failure.
pub fn resolve_script(
    text: Option<&str>,
    script: Option<&std::path::Path>,
) -> Result<DirectiveScript, Failure> {
    match script {
        Some(path) => load_script(path)
            .with_context(|| format!("script {}", path.display()))
            .map_err(Failure::input),
        None => decompose(text.expect("clap enforces text|script").trim()).map_err(Failure::input),
    }
}

/// Replays the runner's box bookkeeping: solve synthesis stages, inherit
/// on edits, drop on erases. Returns each stage's text and the scene
/// boxes after it.
fn solve_script(
    script: &DirectiveScript,
    seed: u64,
) -> Result<Vec<(String, BTreeMap<String, BBox>)>, Failure> {
    let mut scene: BTreeMap<String, BBox> = BTreeMap::new();
    let mut stages = Vec::new();
    for (i, directive) in script.directives().iter().enumerate() {
        let stage_seed = seed ^ (i as u64 + 1).wrapping_mul(STAGE_SEED_STRIDE);
        match directive {
            Directive::Synthesis { .. } => {
                let set = relation_to_constraints(directive, &scene, &BBox::CANVAS)
                    .map_err(Failure::directive)?;
                let existing: Vec<BBox> = scene.values().copied().collect();
                let (report, _) = solve_relaxed(&set, &existing, stage_seed)
                    .map_err(Failure::directive)?;
                for (spec, bbox) in set.vars().iter().zip(&report.boxes) {
                    if scene.insert(spec.name.clone(), *bbox).is_some() {
                        return Err(Failure::directive(anyhow!(
                            "entity {:?} already exists in the scene (stage {i})",
                            spec.name
                        )));
                    }
                }
            }
            Directive::Editing { source, target } => {
                let b = scene.remove(source.name()).ok_or_else(|| {
                    Failure::directive(anyhow!(
                        "entity {:?} is not part of the scene (stage {i})",
                        source.name()
                    ))
                })?;
                if scene.insert(target.name().to_string(), b).is_some() {
                    return Err(Failure::directive(anyhow!(
                        "entity {:?} already exists in the scene (stage {i})",
                        target.name()
                    )));
                }
            }
            Directive::Erasing { target } => {
                if scene.remove(target.name()).is_none() {
                    return Err(Failure::directive(anyhow!(
                        "entity {:?} is not part of the scene (stage {i})",
                        target.name()
                    )));
                }
            }
        }
        stages.push((render_directive(directive), scene.clone()));
    }
    Ok(stages)
}
