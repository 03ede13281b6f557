//! `decompose`: scene text in, directive script out.

use std::path::PathBuf;

use anyhow::Context;
use clap::Args as ClapArgs;
use latentstage::directive::{decompose, render_script, save_script};

use crate::Failure;

#[derive(ClapArgs)]
pub struct Args {
    /// Scene text; alternative to --file.
    #[arg(required_unless_present = "file", conflicts_with = "file")]
    text: Option<String>,
    /// Read the scene text from a file.
    #[arg(long)]
    file: Option<PathBuf>,
    /// Write the script here instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn run(args: Args) -> Result<(), Failure> {
    let text = match &args.file {
        Some(path) => std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(Failure::input)?,
        None => args.text.clone().expect("clap enforces text|file"),
    };
    let script = decompose(text.trim()).map_err(Failure::input)?;
    match &args.out {
        Some(path) => {
            save_script(&script, path)
                .with_context(|| format!("writing {}", path.display()))
                .map_err(Failure::input)?;
            println!("wrote {} directives to {}", script.len(), path.display());
        }
        None => print!("{}", render_script(&script)),
    }
    Ok(())
}
