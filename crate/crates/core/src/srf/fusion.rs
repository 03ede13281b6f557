//! Two-phase fusion mask selection and bitwise latent blending.

use crate::diffusion::LatentGrid;
use crate::layout::LayoutMask;

use super::SrfError;

/// Picks the fusion mask for an ascending reverse-step count: the layout
/// box mask through step `tau`, the attention-derived mask afterwards.
pub fn mask_schedule(
    step: usize,
    tau: usize,
    box_mask: &LayoutMask,
    attn_mask: &LayoutMask,
) -> LayoutMask {
    assert_eq!(
        (box_mask.height(), box_mask.width()),
        (attn_mask.height(), attn_mask.width()),
        "mask_schedule inputs must share a grid"
    );
    if step <= tau {
        box_mask.clone()
    } else {
        attn_mask.clone()
    }
}

/// Per-cell selection between two latents: cells where the mask is set take
/// `z_star`, the rest take `z_bg`, copied bitwise across all channels — no
/// arithmetic touches the values.
pub fn fuse_latents(
    z_star: &LatentGrid,
    z_bg: &LatentGrid,
    mask: &LayoutMask,
) -> Result<LatentGrid, SrfError> {
    if !z_star.same_shape(z_bg) {
        return Err(SrfError::ShapeMismatch(format!(
            "latents {:?} vs {:?}",
            z_star.shape(),
            z_bg.shape()
        )));
    }
    if (mask.height(), mask.width()) != (z_star.height(), z_star.width()) {
        return Err(SrfError::ShapeMismatch(format!(
            "mask {}x{} vs latent {:?}",
            mask.height(),
            mask.width(),
            z_star.shape()
        )));
    }
    let mut out = z_star.clone();
    for h in 0..out.height() {
        for w in 0..out.width() {
            if !mask.get(h, w) {
                for c in 0..out.channels() {
                    out.set(c, h, w, z_bg.get(c, h, w));
                }
            }
        }
    }
    Ok(out)
}
