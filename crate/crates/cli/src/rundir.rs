//! Run-directory writer: a fixed artifact layout per stage plus a hashed
//! manifest, so identical runs are byte-comparable end to end.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use latentstage::io::{write_latent, write_layout_report, write_pgm, write_trace};
use latentstage::layout::{BBox, LayoutError};
use latentstage::srf::StageOutcome;
use sha2::{Digest, Sha256};

pub struct RunDirWriter {
    root: PathBuf,
}

impl RunDirWriter {
    /// Creates the directory skeleton and writes the resolved config echo.
    pub fn create(root: &Path, config_echo: &str) -> Result<Self> {
        for sub in ["stages", "traces", "heatmaps", "layout"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let config_path = root.join("config.txt");
        fs::write(&config_path, config_echo)
            .with_context(|| format!("writing {}", config_path.display()))?;
        Ok(Self { root: root.to_path_buf() })
    }

    /// One stage's latent, trace, per-token attention heatmaps, and layout
    /// report, all named by the stage index.
    pub fn write_stage(&self, stage: &StageOutcome) -> Result<()> {
        let trace = &stage.trace;
        let nn = trace.index;
        write_latent(&self.root.join(format!("stages/{nn:02}.latent")), &stage.latent)?;
        write_trace(&self.root.join(format!("traces/{nn:02}.json")), trace)?;
        for (name, map) in &trace.final_attention {
            let Some(token) = trace.entities.get(name) else { continue };
            write_pgm(
                &self.root.join(format!("heatmaps/{nn:02}_token_{token}.pgm")),
                map,
                trace.height,
                trace.width,
            )?;
        }
        let boxes = trace
            .boxes
            .iter()
            .map(|(name, b)| Ok((name.clone(), BBox::new(b[0], b[1], b[2], b[3])?)))
            .collect::<Result<BTreeMap<String, BBox>, LayoutError>>()?;
        write_layout_report(&self.root.join(format!("layout/{nn:02}.txt")), &boxes)?;
        Ok(())
    }

    /// Hashes every file under the run directory into `manifest.txt` —
    /// `<sha256>  <path>` lines sorted by path, the manifest excluded.
    pub fn finalize(&self) -> Result<PathBuf> {
        let mut files = Vec::new();
        collect_files(&self.root, &self.root, &mut files)?;
        files.sort();
        let mut out = String::new();
        for rel in &files {
            if rel == "manifest.txt" {
                continue;
            }
            let bytes = fs::read(self.root.join(rel))?;
            out.push_str(&format!("{:x}  {rel}\n", Sha256::digest(&bytes)));
        }
        let path = self.root.join("manifest.txt");
        fs::write(&path, out).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path.strip_prefix(root).expect("children live under the root");
            out.push(rel.to_string_lossy().replace('\\', "/"));
        }
    }
    Ok(())
}
