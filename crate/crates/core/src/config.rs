//! Run settings as a flat `key = value` text file: typed parsing with
//! defaults, rejection of unknown keys, and a deterministic render so a
//! resolved configuration can be echoed verbatim into a run directory.

use std::fmt::Write as _;

use thiserror::Error;

use crate::diffusion::{DiffusionError, NoiseSchedule};
use crate::srf::{FusionConfig, SrfError, StimulusConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    MalformedLine { line: usize, text: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {key:?}: {detail}")]
    BadValue { key: &'static str, detail: String },
    #[error("{0}")]
    Invalid(String),
}

/// Which denoiser a run drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenoiserChoice {
    /// Built-in analytic linear denoiser.
    Reference,
    /// Child process speaking the length-prefixed JSON protocol.
    External,
}

impl DenoiserChoice {
    fn as_str(&self) -> &'static str {
        match self {
            DenoiserChoice::Reference => "reference",
            DenoiserChoice::External => "external",
        }
    }
}

/// Every tunable of a run. [`RunConfig::default`] gives the calibrated
/// values; [`RunConfig::parse`] overlays a config file onto them.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub steps: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub delta: f64,
    pub alpha: f64,
    pub stimulus_steps: usize,
    pub inner_iters: usize,
    pub tau: usize,
    pub attn_quantile: f64,
    pub recall_threshold: f64,
    pub seed: u64,
    pub denoiser: DenoiserChoice,
    /// Whitespace-split command line for the external denoiser.
    pub denoiser_cmd: String,
    pub timeout_secs: u64,
    /// Epsilon-scale of the reference denoiser.
    pub reference_lambda: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            steps: 50,
            channels: 4,
            height: 16,
            width: 16,
            delta: 0.8,
            alpha: 40.0,
            stimulus_steps: 25,
            inner_iters: 1,
            tau: 40,
            attn_quantile: 0.75,
            recall_threshold: 0.5,
            seed: 0,
            denoiser: DenoiserChoice::Reference,
            denoiser_cmd: String::new(),
            timeout_secs: 120,
            reference_lambda: 0.1,
        }
    }
}

impl RunConfig {
    /// Overlays `key = value` lines (# or ; comments, blank lines allowed)
    /// onto the defaults. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::MalformedLine { line: idx + 1, text: raw.to_string() });
            };
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn num<T: std::str::FromStr>(key: &'static str, value: &str) -> Result<T, ConfigError>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| ConfigError::BadValue { key, detail: format!("{value:?}: {e}") })
        }
        match key {
            "steps" => self.steps = num("steps", value)?,
            "channels" => self.channels = num("channels", value)?,
            "height" => self.height = num("height", value)?,
            "width" => self.width = num("width", value)?,
            "delta" => self.delta = num("delta", value)?,
            "alpha" => self.alpha = num("alpha", value)?,
            "stimulus_steps" => self.stimulus_steps = num("stimulus_steps", value)?,
            "inner_iters" => self.inner_iters = num("inner_iters", value)?,
            "tau" => self.tau = num("tau", value)?,
            "attn_quantile" => self.attn_quantile = num("attn_quantile", value)?,
            "recall_threshold" => self.recall_threshold = num("recall_threshold", value)?,
            "seed" => self.seed = num("seed", value)?,
            "denoiser" => {
                self.denoiser = match value {
                    "reference" => DenoiserChoice::Reference,
                    "external" => DenoiserChoice::External,
                    other => {
                        return Err(ConfigError::BadValue {
                            key: "denoiser",
                            detail: format!("{other:?}: want `reference` or `external`"),
                        })
                    }
                }
            }
            "denoiser_cmd" => self.denoiser_cmd = value.to_string(),
            "timeout_secs" => self.timeout_secs = num("timeout_secs", value)?,
            "reference_lambda" => self.reference_lambda = num("reference_lambda", value)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: String| Err(ConfigError::Invalid(msg));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return bad(format!(
                "latent dims {}x{}x{} must all be positive",
                self.channels, self.height, self.width
            ));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad(format!("delta {} outside (0, 1]", self.delta));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha {} must be finite and non-negative", self.alpha));
        }
        if self.stimulus_steps > self.steps {
            return bad(format!(
                "stimulus_steps {} exceeds steps {}",
                self.stimulus_steps, self.steps
            ));
        }
        if self.inner_iters == 0 {
            return bad("inner_iters must be at least 1".into());
        }
        if self.tau > self.steps {
            return bad(format!("tau {} exceeds steps {}", self.tau, self.steps));
        }
        if !(self.attn_quantile > 0.0 && self.attn_quantile < 1.0) {
            return bad(format!("attn_quantile {} outside (0, 1)", self.attn_quantile));
        }
        if !(0.0..=1.0).contains(&self.recall_threshold) {
            return bad(format!("recall_threshold {} outside [0, 1]", self.recall_threshold));
        }
        if !(self.reference_lambda.is_finite() && self.reference_lambda > 0.0) {
            return bad(format!("reference_lambda {} must be finite and positive", self.reference_lambda));
        }
        if self.timeout_secs == 0 {
            return bad("timeout_secs must be at least 1".into());
        }
        if self.denoiser == DenoiserChoice::External && self.denoiser_argv().is_empty() {
            return bad("denoiser = external requires denoiser_cmd".into());
        }
        if self.denoiser == DenoiserChoice::External && self.alpha > 0.0 {
            // Subprocess backends expose attention values but not their
            // gradients, so a nonzero response step can never run.
            return bad(format!(
                "denoiser = external cannot apply a stimulus response; set alpha = 0 (got {})",
                self.alpha
            ));
        }
        Ok(())
    }

    /// Renders every key sorted, one `key = value` per line — the config
    /// echo written into run directories.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "attn_quantile = {}", self.attn_quantile);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "delta = {}", self.delta);
        let _ = writeln!(s, "denoiser = {}", self.denoiser.as_str());
        let _ = writeln!(s, "denoiser_cmd = {}", self.denoiser_cmd);
        let _ = writeln!(s, "height = {}", self.height);
        let _ = writeln!(s, "inner_iters = {}", self.inner_iters);
        let _ = writeln!(s, "recall_threshold = {}", self.recall_threshold);
        let _ = writeln!(s, "reference_lambda = {}", self.reference_lambda);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "steps = {}", self.steps);
        let _ = writeln!(s, "stimulus_steps = {}", self.stimulus_steps);
        let _ = writeln!(s, "tau = {}", self.tau);
        let _ = writeln!(s, "timeout_secs = {}", self.timeout_secs);
        let _ = writeln!(s, "width = {}", self.width);
        s
    }

    pub fn denoiser_argv(&self) -> Vec<String> {
        self.denoiser_cmd.split_whitespace().map(str::to_string).collect()
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, DiffusionError> {
        if self.steps == 50 {
            Ok(NoiseSchedule::default_linear())
        } else {
            NoiseSchedule::linear_beta(self.steps, 1e-4, 2e-2)
        }
    }

    pub fn stimulus(&self) -> StimulusConfig {
        StimulusConfig {
            delta: self.delta,
            alpha: self.alpha,
            stimulus_steps: self.stimulus_steps,
            inner_iters: self.inner_iters,
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig { tau: self.tau, attn_quantile: self.attn_quantile }
    }

    /// Cross-checks the derived module configs against the step count.
    pub fn check_modules(&self) -> Result<(), SrfError> {
        self.stimulus().validate(self.steps)?;
        self.fusion().validate(self.steps)
    }
}
