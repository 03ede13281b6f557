//! The attention stimulus: a squared-error loss pulling each stimulated
//! token's softmaxed attention toward a target map, and the latent update
//! that descends it through the denoiser's attention adjoint.

use crate::diffusion::{softmax_slice, AttentionStack, Denoiser, LatentGrid, TokenId};
use crate::layout::LayoutMask;

use super::{SrfError, StimulusConfig};

/// One stimulated token: the target map its softmaxed attention is pulled
/// toward (values in [0, 1], scaled by delta inside the loss) and the
/// binary region used when reporting how much attention mass was captured.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusTarget {
    token: TokenId,
    map: Vec<f64>,
    region: LayoutMask,
}

impl StimulusTarget {
    /// Binary target: 1 inside the mask, 0 outside; the mask is also the
    /// capture region.
    pub fn from_mask(token: TokenId, mask: &LayoutMask) -> Self {
        let map = mask.cells().iter().map(|&c| if c { 1.0 } else { 0.0 }).collect();
        Self { token, map, region: mask.clone() }
    }

    /// Continuous target map (e.g. a normalized reference attention), with
    /// an explicit capture region for reporting.
    pub fn from_map(token: TokenId, map: Vec<f64>, region: LayoutMask) -> Result<Self, SrfError> {
        if map.len() != region.cells().len() {
            return Err(SrfError::ShapeMismatch(format!(
                "target map has {} cells, region has {}",
                map.len(),
                region.cells().len()
            )));
        }
        if map.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(SrfError::InvalidConfig(
                "target map values must be finite and within [0, 1]".into(),
            ));
        }
        Ok(Self { token, map, region })
    }

    pub fn token(&self) -> TokenId {
        self.token
    }

    pub fn map(&self) -> &[f64] {
        &self.map
    }

    pub fn region(&self) -> &LayoutMask {
        &self.region
    }
}

/// Measures how far each stimulated token's attention distribution is from
/// `delta` times its target map, and the exact gradient of that measure
/// with respect to the raw (pre-softmax) scores.
///
/// With `s = softmax(a)` and residual `r = s - delta * m`, the loss
/// contribution is `sum(r^2)` and the score gradient is
/// `g_j = 2 * s_j * (r_j - <r, s>)`.
pub fn stimulus_loss(
    attn: &AttentionStack,
    targets: &[StimulusTarget],
    delta: f64,
) -> Result<(f64, AttentionStack), SrfError> {
    let mut loss = 0.0;
    let mut grad = AttentionStack::new(attn.height(), attn.width());
    for target in targets {
        let scores = attn
            .get(target.token)
            .ok_or(SrfError::MissingAttention(target.token))?;
        if target.map.len() != scores.len() {
            return Err(SrfError::ShapeMismatch(format!(
                "target map has {} cells, attention has {}",
                target.map.len(),
                scores.len()
            )));
        }
        let s = softmax_slice(scores);
        let r: Vec<f64> = s.iter().zip(&target.map).map(|(si, mi)| si - delta * mi).collect();
        loss += r.iter().map(|ri| ri * ri).sum::<f64>();
        let dot: f64 = r.iter().zip(&s).map(|(ri, si)| ri * si).sum();
        let g: Vec<f64> = s.iter().zip(&r).map(|(si, ri)| 2.0 * si * (ri - dot)).collect();
        grad.insert(target.token, g).map_err(SrfError::Diffusion)?;
    }
    Ok((loss, grad))
}

/// Applies `inner_iters` gradient steps `z <- z - alpha * dL/dz` at reverse
/// step `t`, chaining [`stimulus_loss`] through the denoiser's attention
/// adjoint. Returns the updated latent and the loss measured at the start
/// of each iteration (before that iteration's update).
pub fn latent_response(
    z: &LatentGrid,
    t: usize,
    tokens: &[TokenId],
    targets: &[StimulusTarget],
    denoiser: &dyn Denoiser,
    cfg: &StimulusConfig,
) -> Result<(LatentGrid, Vec<f64>), SrfError> {
    let mut cur = z.clone();
    let mut losses = Vec::with_capacity(cfg.inner_iters);
    for _ in 0..cfg.inner_iters {
        let out = denoiser.denoise(&cur, t, tokens)?;
        let (loss, grad) = stimulus_loss(&out.attention, targets, cfg.delta)?;
        losses.push(loss);
        if cfg.alpha == 0.0 {
            continue;
        }
        let grad_z = denoiser.attention_vjp(&cur, t, tokens, &grad)?;
        if !grad_z.is_finite() {
            return Err(SrfError::NonFiniteGradient { t });
        }
        cur.add_scaled(&grad_z, -cfg.alpha);
        if !cur.is_finite() {
            return Err(SrfError::NonFiniteGradient { t });
        }
    }
    Ok((cur, losses))
}
