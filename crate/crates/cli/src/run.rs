//! `run`: execute a directive script progressively, recording every
//! stage's artifacts in a run directory.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::Context;
use clap::Args as ClapArgs;
use latentstage::config::DenoiserChoice;
use latentstage::diffusion::{
    Denoiser, DiffusionError, ExternalDenoiser, LatentGrid, ReferenceDenoiser,
};
use latentstage::io::read_latent;
use latentstage::srf::{run_progressive, AblationVariant, ProgressiveConfig, SrfError};

use crate::rundir::RunDirWriter;
use crate::{Failure, EXIT_BACKEND, EXIT_DIRECTIVE};

#[derive(ClapArgs)]
pub struct Args {
    /// Scene text; alternative to --script.
    #[arg(required_unless_present = "script", conflicts_with = "script")]
    text: Option<String>,
    /// Pre-split directive script file.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Run directory to write.
    #[arg(long)]
    out: PathBuf,
    /// `key = value` config file; defaults apply otherwise.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Starting background latent; zeros when omitted.
    #[arg(long)]
    background: Option<PathBuf>,
    /// Denoiser subprocess command; implies an external backend.
    #[arg(long)]
    denoiser_cmd: Option<String>,
}

pub fn run(args: Args) -> Result<(), Failure> {
    let mut config = crate::load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(cmd) = &args.denoiser_cmd {
        config.denoiser = DenoiserChoice::External;
        config.denoiser_cmd = cmd.clone();
    }
    config.validate().map_err(Failure::input)?;
    config.check_modules().map_err(Failure::input)?;

    let script = crate::layout::resolve_script(args.text.as_deref(), args.script.as_deref())?;

    let background = match &args.background {
        Some(path) => read_latent(path)
            .with_context(|| format!("reading background {}", path.display()))
            .map_err(Failure::backend)?,
        None => LatentGrid::zeros(config.channels, config.height, config.width, 0),
    };

    let progressive = ProgressiveConfig {
        schedule: config.schedule().map_err(Failure::input)?,
        channels: config.channels,
        height: config.height,
        width: config.width,
        stimulus: config.stimulus(),
        fusion: config.fusion(),
        seed: config.seed,
        variant: AblationVariant::Full,
    };

    let denoiser: Box<dyn Denoiser> = match config.denoiser {
        DenoiserChoice::Reference => {
            Box::new(ReferenceDenoiser::new(config.seed, config.reference_lambda))
        }
        DenoiserChoice::External => Box::new(
            ExternalDenoiser::spawn(
                &config.denoiser_argv(),
                Duration::from_secs(config.timeout_secs),
            )
            .context("spawning denoiser backend")
            .map_err(Failure::backend)?,
        ),
    };

    let writer = RunDirWriter::create(&args.out, &config.render()).map_err(Failure::input)?;

    match run_progressive(&background, &script, denoiser.as_ref(), &progressive) {
        Ok(outcome) => {
            for stage in &outcome.stages {
                writer.write_stage(stage).map_err(Failure::input)?;
                println!("{:02} {:<9} {}", stage.trace.index, stage.trace.mode, stage.trace.text);
            }
            let manifest = writer.finalize().map_err(Failure::input)?;
            println!("{} stages -> {}", outcome.stages.len(), manifest.display());
            Ok(())
        }
        Err(e) => {
            for stage in &e.partial {
                writer.write_stage(stage).map_err(Failure::input)?;
            }
            let code = classify(&e.source);
            let kept = e.partial.len();
            let error = anyhow::Error::new(*e).context(format!(
                "run failed; kept {kept} finished stage(s) in {}",
                args.out.display()
            ));
            Err(Failure { code, error })
        }
    }
}

/// Backend trouble gets its own exit code; everything else that can stop
/// a stage is a directive failure.
fn classify(error: &SrfError) -> u8 {
    match error {
        SrfError::Diffusion(
            DiffusionError::Protocol { .. }
            | DiffusionError::Backend(_)
            | DiffusionError::Timeout { .. }
            | DiffusionError::Io(_)
            | DiffusionError::GradientUnsupported(_),
        ) => EXIT_BACKEND,
        _ => EXIT_DIRECTIVE,
    }
}
