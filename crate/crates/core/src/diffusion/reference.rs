//! Analytic reference denoiser. Noise prediction is a fixed linear map of
//! the latent and per-token attention scores are channel projections, so
//! every downstream quantity (steps, inversions, gradients) has a closed
//! form to test against.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::{AttentionStack, Denoiser, DenoiserOutput, DiffusionError, LatentGrid, TokenId};

/// Mixes token ids into the base seed so each token gets an independent
/// projection stream.
const TOKEN_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Linear denoiser: `eps(z) = lambda * z`, attention score of token `k` at
/// cell `(h, w)` is the dot product of a per-token channel projection with
/// `z[:, h, w]`. Both maps are exactly differentiable by hand.
#[derive(Debug, Clone)]
pub struct ReferenceDenoiser {
    seed: u64,
    lambda: f64,
    projection_scale: f64,
}

impl ReferenceDenoiser {
    pub fn new(seed: u64, lambda: f64) -> Self {
        Self { seed, lambda, projection_scale: 0.5 }
    }

    /// Rescales the per-token projections; larger values sharpen attention.
    pub fn with_projection_scale(mut self, scale: f64) -> Self {
        self.projection_scale = scale;
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The channel projection for one token, drawn uniformly from
    /// `[-scale, scale)` on a stream decorrelated per token.
    pub fn projection(&self, token: TokenId, channels: usize) -> Vec<f64> {
        let stream = self.seed ^ (token as u64 + 1).wrapping_mul(TOKEN_SEED_STRIDE);
        let mut rng = ChaCha12Rng::seed_from_u64(stream);
        (0..channels)
            .map(|_| rng.gen_range(-self.projection_scale..self.projection_scale))
            .collect()
    }

    fn scores(&self, z: &LatentGrid, token: TokenId) -> Vec<f64> {
        let w = self.projection(token, z.channels());
        let mut out = vec![0.0; z.spatial_len()];
        for c in 0..z.channels() {
            let plane = &z.data()[c * z.spatial_len()..(c + 1) * z.spatial_len()];
            for (o, v) in out.iter_mut().zip(plane) {
                *o += w[c] * v;
            }
        }
        out
    }
}

impl Denoiser for ReferenceDenoiser {
    fn denoise(
        &self,
        z: &LatentGrid,
        _t: usize,
        tokens: &[TokenId],
    ) -> Result<DenoiserOutput, DiffusionError> {
        if !z.is_finite() {
            return Err(DiffusionError::InvalidLatent("non-finite latent".into()));
        }
        let eps = z.scaled(self.lambda).with_step_index(z.step_index());
        let mut attention = AttentionStack::new(z.height(), z.width());
        for &k in tokens {
            attention.insert(k, self.scores(z, k))?;
        }
        Ok(DenoiserOutput { eps, attention })
    }

    fn attention_vjp(
        &self,
        z: &LatentGrid,
        _t: usize,
        _tokens: &[TokenId],
        grad_scores: &AttentionStack,
    ) -> Result<LatentGrid, DiffusionError> {
        if grad_scores.height() != z.height() || grad_scores.width() != z.width() {
            return Err(DiffusionError::ShapeMismatch {
                expected: format!("{}x{}", z.height(), z.width()),
                got: format!("{}x{}", grad_scores.height(), grad_scores.width()),
            });
        }
        // Scores are linear in z, so the adjoint scatters each token's
        // upstream gradient back through its projection.
        let mut grad = LatentGrid::zeros(z.channels(), z.height(), z.width(), z.step_index());
        let spatial = z.spatial_len();
        for k in grad_scores.tokens() {
            let w = self.projection(k, z.channels());
            let g = grad_scores.get(k).expect("token listed by iterator");
            for c in 0..z.channels() {
                let plane = &mut grad.data_mut()[c * spatial..(c + 1) * spatial];
                for (o, gv) in plane.iter_mut().zip(g) {
                    *o += w[c] * gv;
                }
            }
        }
        Ok(grad)
    }
}
