//! Diffusion substrate: latent tensors, noise schedule, deterministic DDIM
//! stepping and inversion, and the denoiser backends (an analytic linear
//! reference plus a subprocess client for real models).

mod ddim;
mod external;
pub mod protocol;
mod reference;
mod schedule;

pub use ddim::{ddim_inversion, ddim_inversion_with_attention, ddim_reverse_step, LatentTrajectory};
pub use external::{ExternalDenoiser, DEFAULT_TIMEOUT};
pub use reference::ReferenceDenoiser;
pub use schedule::NoiseSchedule;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

/// Prompt tokens are plain integer ids; the mapping from entity names to ids
/// is owned by the scene that drives a run.
pub type TokenId = u32;

/// Errors raised by the diffusion substrate and denoiser backends.
#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    /// Malformed traffic on the backend wire, including responses whose
    /// shapes disagree with the request. `offset` is the byte position in
    /// the stream where decoding stopped, when known.
    #[error("protocol error{}: {detail}", offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    Protocol { offset: Option<u64>, detail: String },
    /// The backend answered with an explicit error payload.
    #[error("backend error: {0}")]
    Backend(String),
    #[error("backend timed out after {secs} s")]
    Timeout { secs: u64 },
    /// The backend cannot propagate gradients through its attention maps.
    #[error("denoiser does not support attention gradients: {0}")]
    GradientUnsupported(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid latent: {0}")]
    InvalidLatent(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A dense C x H x W latent in channel-major order, tagged with the
/// diffusion time `t` it currently sits at (0 = fully denoised).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid {
    channels: usize,
    height: usize,
    width: usize,
    step_index: usize,
    data: Vec<f64>,
}

impl LatentGrid {
    pub fn zeros(channels: usize, height: usize, width: usize, step_index: usize) -> Self {
        Self { channels, height, width, step_index, data: vec![0.0; channels * height * width] }
    }

    pub fn from_data(
        channels: usize,
        height: usize,
        width: usize,
        step_index: usize,
        data: Vec<f64>,
    ) -> Result<Self, DiffusionError> {
        if data.len() != channels * height * width {
            return Err(DiffusionError::ShapeMismatch {
                expected: format!("{} values for {channels}x{height}x{width}", channels * height * width),
                got: format!("{}", data.len()),
            });
        }
        Ok(Self { channels, height, width, step_index, data })
    }

    /// Standard-normal latent drawn from a ChaCha stream, so the same seed
    /// reproduces the same bytes on every platform.
    pub fn seeded_normal(
        channels: usize,
        height: usize,
        width: usize,
        step_index: usize,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let data = (0..channels * height * width)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Self { channels, height, width, step_index, data }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// (channels, height, width)
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn spatial_len(&self) -> usize {
        self.height * self.width
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn set_step_index(&mut self, t: usize) {
        self.step_index = t;
    }

    pub fn with_step_index(mut self, t: usize) -> Self {
        self.step_index = t;
        self
    }

    #[inline]
    fn idx(&self, c: usize, h: usize, w: usize) -> usize {
        (c * self.height + h) * self.width + w
    }

    #[inline]
    pub fn get(&self, c: usize, h: usize, w: usize) -> f64 {
        self.data[self.idx(c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, h: usize, w: usize, v: f64) {
        let i = self.idx(c, h, w);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert!(self.same_shape(other), "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// self <- self + scale * other
    pub fn add_scaled(&mut self, other: &Self, scale: f64) {
        assert!(self.same_shape(other), "add_scaled on mismatched shapes");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
    }

    pub fn scaled(&self, scale: f64) -> Self {
        let mut out = self.clone();
        for v in out.data.iter_mut() {
            *v *= scale;
        }
        out
    }
}

/// Per-token spatial attention maps at a fixed resolution. Values are raw
/// scores as produced by the denoiser, not yet normalized; call
/// [`AttentionStack::softmax`] to get a distribution over cells.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    height: usize,
    width: usize,
    maps: BTreeMap<TokenId, Vec<f64>>,
}

impl AttentionStack {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width, maps: BTreeMap::new() }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn spatial_len(&self) -> usize {
        self.height * self.width
    }

    pub fn insert(&mut self, token: TokenId, map: Vec<f64>) -> Result<(), DiffusionError> {
        if map.len() != self.spatial_len() {
            return Err(DiffusionError::ShapeMismatch {
                expected: format!("{} cells", self.spatial_len()),
                got: format!("{} cells for token {token}", map.len()),
            });
        }
        self.maps.insert(token, map);
        Ok(())
    }

    pub fn get(&self, token: TokenId) -> Option<&[f64]> {
        self.maps.get(&token).map(|v| v.as_slice())
    }

    pub fn tokens(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.maps.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    /// Numerically stable softmax of one token's map over all spatial cells.
    pub fn softmax(&self, token: TokenId) -> Option<Vec<f64>> {
        self.get(token).map(softmax_slice)
    }
}

/// Softmax over a flat slice, stable under large scores.
pub fn softmax_slice(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

/// One denoiser evaluation: predicted noise plus the attention stack for
/// every requested prompt token.
#[derive(Debug, Clone)]
pub struct DenoiserOutput {
    pub eps: LatentGrid,
    pub attention: AttentionStack,
}

impl DenoiserOutput {
    /// Checks the output against the latent it was computed from and the
    /// token list that was requested.
    pub fn validate(&self, z: &LatentGrid, tokens: &[TokenId]) -> Result<(), DiffusionError> {
        if !self.eps.same_shape(z) {
            return Err(DiffusionError::ShapeMismatch {
                expected: format!("{:?}", z.shape()),
                got: format!("{:?}", self.eps.shape()),
            });
        }
        for &t in tokens {
            if self.attention.get(t).is_none() {
                return Err(DiffusionError::ShapeMismatch {
                    expected: format!("attention map for token {t}"),
                    got: "missing map".into(),
                });
            }
        }
        Ok(())
    }
}

/// A denoising backend: predicts noise for a latent at diffusion time `t`
/// and reports per-token spatial attention scores.
///
/// `attention_vjp` is the adjoint of the attention maps with respect to the
/// latent: given upstream gradients for each token's scores it returns the
/// gradient with respect to `z`. Backends without gradient access return
/// [`DiffusionError::GradientUnsupported`].
pub trait Denoiser {
    fn denoise(
        &self,
        z: &LatentGrid,
        t: usize,
        tokens: &[TokenId],
    ) -> Result<DenoiserOutput, DiffusionError>;

    fn attention_vjp(
        &self,
        z: &LatentGrid,
        t: usize,
        tokens: &[TokenId],
        grad_scores: &AttentionStack,
    ) -> Result<LatentGrid, DiffusionError>;
}
