//! Noise schedule for the diffusion process: per-step betas and the
//! cumulative signal fractions derived from them.

use super::DiffusionError;

/// Variance schedule over `steps` diffusion steps.
///
/// `alpha_bar` has `steps + 1` entries indexed by diffusion time `t`:
/// `alpha_bar[0] = 1` (clean data) and `alpha_bar[t]` is the product of
/// `1 - beta` over the first `t` steps, so it decreases strictly in `t`.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    steps: usize,
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas spaced linearly from `beta_start` to `beta_end` inclusive.
    pub fn linear_beta(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self, DiffusionError> {
        if steps == 0 {
            return Err(DiffusionError::InvalidSchedule("steps must be positive".into()));
        }
        if !(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end) {
            return Err(DiffusionError::InvalidSchedule(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_start]
        } else {
            (0..steps)
                .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
                .collect()
        };
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for &b in &betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        Ok(Self { steps, betas, alpha_bar })
    }

    /// The default operating point: 50 steps, betas from 1e-4 to 2e-2.
    pub fn default_linear() -> Self {
        Self::linear_beta(50, 1e-4, 2e-2).expect("default schedule is valid")
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn beta(&self, step: usize) -> f64 {
        self.betas[step]
    }

    /// Cumulative signal fraction at diffusion time `t` (0..=steps).
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// sqrt(alpha_bar[t])
    pub fn signal(&self, t: usize) -> f64 {
        self.alpha_bar[t].sqrt()
    }

    /// sqrt(1 - alpha_bar[t])
    pub fn noise(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t]).sqrt()
    }
}
