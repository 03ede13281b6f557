//! The stimulus-response-fusion loop: a quadratic loss that pulls per-token
//! attention toward target maps, gradient updates of the latent through the
//! denoiser's attention adjoint, a two-phase fusion mask schedule, bitwise
//! latent blending against an inverted background trajectory, and the
//! drivers that run one directive or a whole script.

mod fusion;
mod run;
mod stimulus;
mod trace;

pub use fusion::{fuse_latents, mask_schedule};
pub use run::{
    run_directive, run_progressive, AblationVariant, InitLatent, MaskPolicy, ProgressiveConfig,
    ProgressiveError, ProgressiveOutcome, SceneState, StageMode, StageOutcome, StagePlan,
    STAGE_SEED_STRIDE,
};
pub use stimulus::{latent_response, stimulus_loss, StimulusTarget};
pub use trace::{MaskLabel, StageTrace, StepTrace};

use crate::diffusion::{DiffusionError, TokenId};
use crate::layout::LayoutError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SrfError {
    #[error(transparent)]
    Diffusion(#[from] DiffusionError),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error("non-finite gradient at reverse step t={t}")]
    NonFiniteGradient { t: usize },
    #[error("entity {0:?} is not part of the scene")]
    UnknownEntity(String),
    #[error("entity {0:?} already exists in the scene")]
    DuplicateEntity(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("denoiser returned no attention map for token {0}")]
    MissingAttention(TokenId),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Parameters of the attention stimulus and the gradient response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StimulusConfig {
    /// Target attention weight per cell.
    pub delta: f64,
    /// Gradient step size applied to the latent.
    pub alpha: f64,
    /// Number of initial reverse steps that receive the stimulus.
    pub stimulus_steps: usize,
    /// Gradient iterations per stimulated step.
    pub inner_iters: usize,
}

impl Default for StimulusConfig {
    fn default() -> Self {
        Self { delta: 0.8, alpha: 40.0, stimulus_steps: 25, inner_iters: 1 }
    }
}

impl StimulusConfig {
    pub fn validate(&self, total_steps: usize) -> Result<(), SrfError> {
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(SrfError::InvalidConfig(format!("delta {} outside (0, 1]", self.delta)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(SrfError::InvalidConfig(format!("alpha {} must be >= 0", self.alpha)));
        }
        if self.stimulus_steps > total_steps {
            return Err(SrfError::InvalidConfig(format!(
                "stimulus_steps {} exceeds the {} reverse steps",
                self.stimulus_steps, total_steps
            )));
        }
        if self.inner_iters == 0 {
            return Err(SrfError::InvalidConfig("inner_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parameters of the fusion mask schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Last step (ascending count) that still uses the layout box mask;
    /// later steps switch to the attention-derived mask.
    pub tau: usize,
    /// Quantile for thresholding attention into a mask.
    pub attn_quantile: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { tau: 40, attn_quantile: 0.75 }
    }
}

impl FusionConfig {
    pub fn validate(&self, total_steps: usize) -> Result<(), SrfError> {
        if self.tau > total_steps {
            return Err(SrfError::InvalidConfig(format!(
                "tau {} exceeds the {} reverse steps",
                self.tau, total_steps
            )));
        }
        if !(self.attn_quantile > 0.0 && self.attn_quantile < 1.0) {
            return Err(SrfError::InvalidConfig(format!(
                "attn_quantile {} outside (0, 1)",
                self.attn_quantile
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configs_validate() {
        StimulusConfig::default().validate(50).unwrap();
        FusionConfig::default().validate(50).unwrap();
    }

    #[test]
    fn config_bounds_are_enforced() {
        let mut s = StimulusConfig::default();
        s.delta = 0.0;
        assert!(s.validate(50).is_err());
        let mut s = StimulusConfig::default();
        s.alpha = -1.0;
        assert!(s.validate(50).is_err());
        let mut s = StimulusConfig::default();
        s.stimulus_steps = 51;
        assert!(s.validate(50).is_err());
        let mut s = StimulusConfig::default();
        s.inner_iters = 0;
        assert!(s.validate(50).is_err());

        let mut f = FusionConfig::default();
        f.tau = 51;
        assert!(f.validate(50).is_err());
        let mut f = FusionConfig::default();
        f.attn_quantile = 1.0;
        assert!(f.validate(50).is_err());
    }
}
