//! Serializable records of what a directive run did at every reverse step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Which mask fused this step's latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskLabel {
    /// Layout box mask (early schedule phase).
    Box,
    /// Attention-derived mask (late schedule phase).
    Attention,
    /// Attention mask that fell back to all-on because the map was constant.
    AttentionDegenerate,
    /// Fixed mask used for every step of an editing/erasing stage.
    Fixed,
    /// Blending skipped; the whole latent was kept.
    Full,
}

/// One reverse step of a directive run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    /// Ascending completed-step count, 1-based.
    pub step: usize,
    /// Descending diffusion time index this step consumed.
    pub t: usize,
    /// Stimulus loss at the latent entering the step, before any update.
    pub loss: f64,
    pub mask_source: MaskLabel,
    /// Mean over stimulated tokens of the softmaxed attention mass inside
    /// that token's capture region.
    pub attention_mass_in_mask: f64,
}

/// Everything recorded about one directive's run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    /// Stage position in the script, 0-based.
    pub index: usize,
    /// "synthesis" | "editing" | "erasing".
    pub mode: String,
    /// Rendered directive text.
    pub text: String,
    /// Attention grid dimensions for the maps stored below.
    pub height: usize,
    pub width: usize,
    /// Entities active during this stage, name to token id.
    pub entities: BTreeMap<String, u32>,
    /// Planned layout boxes after this stage, name to [x0, y0, x1, y1].
    pub boxes: BTreeMap<String, [f64; 4]>,
    /// Set when the layout solver had to drop soft constraints.
    pub relaxation: Option<String>,
    pub steps: Vec<StepTrace>,
    /// Softmaxed attention per active token at the stage's final latent.
    pub final_attention: BTreeMap<String, Vec<f64>>,
    /// Cell mask (0/1, row-major) chosen at the last reverse step. Cells at
    /// 0 were taken verbatim from the background; recorded even when
    /// blending was skipped so the divergence is checkable afterwards.
    pub final_mask: Vec<u8>,
    /// Erasing stages: max/mean ratio of the target's softmaxed attention
    /// at the stage's starting background, for before/after comparisons.
    pub peak_ratio_before: Option<f64>,
}

impl StageTrace {
    /// Peakedness (max over mean) of a stored final attention map.
    pub fn peak_ratio(map: &[f64]) -> f64 {
        let max = map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mean = map.iter().sum::<f64>() / map.len() as f64;
        if mean == 0.0 {
            0.0
        } else {
            max / mean
        }
    }
}
