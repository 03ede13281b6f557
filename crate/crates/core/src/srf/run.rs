//! Stage drivers: execute one directive's reverse loop against an inverted
//! background, and fold a whole script while tracking the scene's entities,
//! tokens, and planned boxes.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::diffusion::{
    ddim_inversion, ddim_inversion_with_attention, ddim_reverse_step, Denoiser, LatentGrid,
    LatentTrajectory, NoiseSchedule, TokenId,
};
use crate::directive::{render_directive, Directive, DirectiveScript};
use crate::layout::{
    attention_mass, attention_to_mask, rasterize_mask, relation_to_constraints, solve_relaxed,
    BBox, LayoutMask, MaskSource, Relaxation,
};

use super::trace::{MaskLabel, StageTrace, StepTrace};
use super::{
    fuse_latents, latent_response, mask_schedule, stimulus_loss, FusionConfig, SrfError,
    StimulusConfig, StimulusTarget,
};

/// Mixes the base seed into per-stage seeds.
pub const STAGE_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Which part of the loop a comparison run disables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationVariant {
    /// The complete loop.
    Full,
    /// Blending skipped: every step keeps the whole updated latent.
    NoFusion,
    /// Stimulus disabled (step size forced to zero); fusion still runs.
    NoStimulus,
}

impl AblationVariant {
    pub fn label(&self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoFusion => "no_fusion",
            AblationVariant::NoStimulus => "no_sr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageMode {
    Synthesis,
    Editing,
    Erasing,
}

impl StageMode {
    pub fn name(&self) -> &'static str {
        match self {
            StageMode::Synthesis => "synthesis",
            StageMode::Editing => "editing",
            StageMode::Erasing => "erasing",
        }
    }
}

/// How the fusion mask is chosen each step.
#[derive(Debug, Clone)]
pub enum MaskPolicy {
    /// Box mask through step tau, then the quantile-thresholded mean
    /// attention of the stimulated tokens.
    Scheduled { box_mask: LayoutMask },
    /// The same mask at every step.
    Fixed { mask: LayoutMask },
}

/// Where the stage's starting latent comes from.
#[derive(Debug, Clone)]
pub enum InitLatent {
    /// Fresh seeded noise (synthesis stages).
    Noise { seed: u64 },
    /// The endpoint of the background inversion (editing/erasing stages).
    Inverted,
}

/// A fully prepared stage: everything [`run_directive`] needs.
#[derive(Debug, Clone)]
pub struct StagePlan {
    pub mode: StageMode,
    pub text: String,
    /// All tokens the denoiser attends to this stage.
    pub tokens: Vec<TokenId>,
    /// Entity labels for the tokens above.
    pub names: BTreeMap<String, TokenId>,
    pub targets: Vec<StimulusTarget>,
    pub mask_policy: MaskPolicy,
    pub init: InitLatent,
}

/// Runs one directive's reverse loop over the inverted background
/// trajectory, returning the stage's final latent and its trace.
pub fn run_directive(
    plan: &StagePlan,
    bg: &LatentTrajectory,
    denoiser: &dyn Denoiser,
    schedule: &NoiseSchedule,
    stimulus: &StimulusConfig,
    fusion: &FusionConfig,
    variant: AblationVariant,
) -> Result<(LatentGrid, StageTrace), SrfError> {
    let total = schedule.steps();
    stimulus.validate(total)?;
    fusion.validate(total)?;
    if bg.len() != total + 1 {
        return Err(SrfError::ShapeMismatch(format!(
            "background trajectory has {} states, schedule wants {}",
            bg.len(),
            total + 1
        )));
    }
    let (channels, height, width) = bg.first().shape();
    let policy_mask = match &plan.mask_policy {
        MaskPolicy::Scheduled { box_mask } => box_mask,
        MaskPolicy::Fixed { mask } => mask,
    };
    if (policy_mask.height(), policy_mask.width()) != (height, width) {
        return Err(SrfError::ShapeMismatch(format!(
            "fusion mask {}x{} vs latent grid {height}x{width}",
            policy_mask.height(),
            policy_mask.width()
        )));
    }

    let cfg = StimulusConfig {
        alpha: match variant {
            AblationVariant::NoStimulus => 0.0,
            _ => stimulus.alpha,
        },
        ..*stimulus
    };

    let mut z = match plan.init {
        InitLatent::Noise { seed } => LatentGrid::seeded_normal(channels, height, width, total, seed),
        InitLatent::Inverted => bg.get(total).clone(),
    };

    let mut steps = Vec::with_capacity(total);
    let mut last_mask: Option<LayoutMask> = None;
    for t in (1..=total).rev() {
        let step = total - t + 1;
        let stimulated =
            step <= cfg.stimulus_steps && cfg.alpha > 0.0 && !plan.targets.is_empty();

        let (z_used, pre_loss) = if stimulated {
            let (updated, losses) =
                latent_response(&z, t, &plan.tokens, &plan.targets, denoiser, &cfg)?;
            (updated, Some(losses[0]))
        } else {
            (z, None)
        };
        let out = denoiser.denoise(&z_used, t, &plan.tokens)?;
        let loss = match pre_loss {
            Some(l) => l,
            None if plan.targets.is_empty() => 0.0,
            None => stimulus_loss(&out.attention, &plan.targets, cfg.delta)?.0,
        };

        let mass = if plan.targets.is_empty() {
            0.0
        } else {
            let mut total_mass = 0.0;
            for target in &plan.targets {
                let s = out
                    .attention
                    .softmax(target.token())
                    .ok_or(SrfError::MissingAttention(target.token()))?;
                total_mass += attention_mass(&s, target.region())?;
            }
            total_mass / plan.targets.len() as f64
        };

        let z_next = ddim_reverse_step(&z_used, &out.eps, t, schedule)?;

        let (mask, base_label) = match &plan.mask_policy {
            MaskPolicy::Fixed { mask } => (mask.clone(), MaskLabel::Fixed),
            MaskPolicy::Scheduled { box_mask } => {
                let attn_mask = if plan.targets.is_empty() {
                    LayoutMask::all_on(
                        height,
                        width,
                        MaskSource::FromAttention { degenerate: true },
                    )
                } else {
                    let mut mean = vec![0.0; height * width];
                    for target in &plan.targets {
                        let s = out
                            .attention
                            .softmax(target.token())
                            .ok_or(SrfError::MissingAttention(target.token()))?;
                        for (m, v) in mean.iter_mut().zip(&s) {
                            *m += v;
                        }
                    }
                    for m in &mut mean {
                        *m /= plan.targets.len() as f64;
                    }
                    attention_to_mask(&mean, height, width, fusion.attn_quantile)?
                };
                let chosen = mask_schedule(step, fusion.tau, box_mask, &attn_mask);
                let label = match chosen.source() {
                    MaskSource::FromBox => MaskLabel::Box,
                    MaskSource::FromAttention { degenerate: false } => MaskLabel::Attention,
                    MaskSource::FromAttention { degenerate: true } => {
                        MaskLabel::AttentionDegenerate
                    }
                };
                (chosen, label)
            }
        };
        let (z_fused, label) = if variant == AblationVariant::NoFusion {
            (z_next, MaskLabel::Full)
        } else {
            (fuse_latents(&z_next, bg.get(t - 1), &mask)?, base_label)
        };
        last_mask = Some(mask);

        steps.push(StepTrace {
            step,
            t,
            loss,
            mask_source: label,
            attention_mass_in_mask: mass,
        });
        z = z_fused;
    }

    let final_out = denoiser.denoise(&z, 1, &plan.tokens)?;
    let mut final_attention = BTreeMap::new();
    for (name, token) in &plan.names {
        let s = final_out
            .attention
            .softmax(*token)
            .ok_or(SrfError::MissingAttention(*token))?;
        final_attention.insert(name.clone(), s);
    }

    let final_mask = last_mask
        .map(|m| m.cells().iter().map(|&on| on as u8).collect())
        .unwrap_or_default();
    let trace = StageTrace {
        index: 0,
        mode: plan.mode.name().to_string(),
        text: plan.text.clone(),
        height,
        width,
        entities: plan.names.clone(),
        boxes: BTreeMap::new(),
        relaxation: None,
        steps,
        final_attention,
        final_mask,
        peak_ratio_before: None,
    };
    Ok((z, trace))
}

/// Entities visible in the scene: their tokens and planned boxes.
#[derive(Debug, Clone, Default)]
pub struct SceneState {
    tokens: BTreeMap<String, TokenId>,
    boxes: BTreeMap<String, BBox>,
    next_token: TokenId,
}

impl SceneState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tokens(&self) -> &BTreeMap<String, TokenId> {
        &self.tokens
    }

    pub fn boxes(&self) -> &BTreeMap<String, BBox> {
        &self.boxes
    }

    /// All scene token ids, ascending (= order of first appearance).
    pub fn token_ids(&self) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = self.tokens.values().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn name_of(&self, token: TokenId) -> Option<&str> {
        self.tokens
            .iter()
            .find_map(|(n, t)| (*t == token).then_some(n.as_str()))
    }

    fn add_entity(&mut self, name: &str) -> Result<TokenId, SrfError> {
        if self.tokens.contains_key(name) {
            return Err(SrfError::DuplicateEntity(name.to_string()));
        }
        let id = self.next_token;
        self.next_token += 1;
        self.tokens.insert(name.to_string(), id);
        Ok(id)
    }

    fn remove_entity(&mut self, name: &str) -> Result<TokenId, SrfError> {
        let id = self
            .tokens
            .remove(name)
            .ok_or_else(|| SrfError::UnknownEntity(name.to_string()))?;
        self.boxes.remove(name);
        Ok(id)
    }
}

/// One completed stage of a progressive run.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub trace: StageTrace,
    pub latent: LatentGrid,
    pub relaxation: Option<Relaxation>,
}

/// A finished progressive run.
#[derive(Debug, Clone)]
pub struct ProgressiveOutcome {
    pub stages: Vec<StageOutcome>,
    pub scene: SceneState,
    pub final_latent: LatentGrid,
}

/// A progressive run that failed partway: the failing stage's index, the
/// cause, and every stage completed before it.
#[derive(Debug, Error)]
#[error("stage {stage} failed")]
pub struct ProgressiveError {
    pub stage: usize,
    #[source]
    pub source: SrfError,
    pub partial: Vec<StageOutcome>,
}

/// Settings of a progressive run.
#[derive(Debug, Clone)]
pub struct ProgressiveConfig {
    pub schedule: NoiseSchedule,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stimulus: StimulusConfig,
    pub fusion: FusionConfig,
    pub seed: u64,
    pub variant: AblationVariant,
}

impl ProgressiveConfig {
    pub fn stage_seed(&self, stage: usize) -> u64 {
        self.seed ^ (stage as u64 + 1).wrapping_mul(STAGE_SEED_STRIDE)
    }
}

struct PreparedStage {
    plan: StagePlan,
    bg: LatentTrajectory,
    relaxation: Option<Relaxation>,
    peak_before: Option<f64>,
    /// Entities to drop from the scene once the stage succeeds.
    cleanup: Vec<String>,
}

fn mean_softmax_of(
    stacks: &[crate::diffusion::AttentionStack],
    token: TokenId,
) -> Result<Vec<f64>, SrfError> {
    let mut mean: Option<Vec<f64>> = None;
    for stack in stacks {
        let s = stack.softmax(token).ok_or(SrfError::MissingAttention(token))?;
        match &mut mean {
            None => mean = Some(s),
            Some(m) => {
                for (a, b) in m.iter_mut().zip(&s) {
                    *a += b;
                }
            }
        }
    }
    let mut m = mean.ok_or(SrfError::MissingAttention(token))?;
    for v in &mut m {
        *v /= stacks.len() as f64;
    }
    Ok(m)
}

fn prepare_stage(
    scene: &mut SceneState,
    directive: &Directive,
    current: &LatentGrid,
    denoiser: &dyn Denoiser,
    config: &ProgressiveConfig,
    stage_seed: u64,
) -> Result<PreparedStage, SrfError> {
    let (height, width) = (config.height, config.width);
    let scene_tokens = scene.token_ids();
    let mut names = scene.tokens.clone();

    match directive {
        Directive::Synthesis { .. } => {
            let set = relation_to_constraints(directive, scene.boxes(), &BBox::CANVAS)?;
            let existing: Vec<BBox> = scene.boxes.values().copied().collect();
            let (report, relaxation) = solve_relaxed(&set, &existing, stage_seed)?;

            let mut tokens = scene_tokens;
            let mut targets = Vec::new();
            let mut union = vec![false; height * width];
            for (spec, bbox) in set.vars().iter().zip(&report.boxes) {
                let id = scene.add_entity(&spec.name)?;
                scene.boxes.insert(spec.name.clone(), *bbox);
                names.insert(spec.name.clone(), id);
                tokens.push(id);
                let mask = rasterize_mask(bbox, height, width)?;
                for (u, c) in union.iter_mut().zip(mask.cells()) {
                    *u |= *c;
                }
                targets.push(StimulusTarget::from_mask(id, &mask));
            }
            let box_mask = LayoutMask::new(height, width, union, MaskSource::FromBox)?;

            let bg = ddim_inversion(current, denoiser, &config.schedule)?;
            Ok(PreparedStage {
                plan: StagePlan {
                    mode: StageMode::Synthesis,
                    text: render_directive(directive),
                    tokens,
                    names,
                    targets,
                    mask_policy: MaskPolicy::Scheduled { box_mask },
                    init: InitLatent::Noise { seed: stage_seed },
                },
                bg,
                relaxation: Some(relaxation),
                peak_before: None,
                cleanup: Vec::new(),
            })
        }
        Directive::Editing { source, target } => {
            let src_id = *scene
                .tokens
                .get(source.name())
                .ok_or_else(|| SrfError::UnknownEntity(source.name().to_string()))?;
            if scene.tokens.contains_key(target.name()) {
                return Err(SrfError::DuplicateEntity(target.name().to_string()));
            }

            let (bg, inv_attn) = ddim_inversion_with_attention(
                current,
                denoiser,
                &config.schedule,
                &scene_tokens,
            )?;
            let ref_map = mean_softmax_of(&inv_attn, src_id)?;
            let mask = attention_to_mask(&ref_map, height, width, config.fusion.attn_quantile)?;
            let peak = ref_map.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let target_map: Vec<f64> = ref_map.iter().map(|v| v / peak).collect();

            let tgt_id = scene.add_entity(target.name())?;
            if let Some(b) = scene.boxes.get(source.name()).copied() {
                scene.boxes.insert(target.name().to_string(), b);
            }
            names.insert(target.name().to_string(), tgt_id);
            let mut tokens = scene_tokens;
            tokens.push(tgt_id);

            Ok(PreparedStage {
                plan: StagePlan {
                    mode: StageMode::Editing,
                    text: render_directive(directive),
                    tokens,
                    names,
                    targets: vec![StimulusTarget::from_map(tgt_id, target_map, mask.clone())?],
                    mask_policy: MaskPolicy::Fixed { mask },
                    init: InitLatent::Inverted,
                },
                bg,
                relaxation: None,
                peak_before: None,
                cleanup: vec![source.name().to_string()],
            })
        }
        Directive::Erasing { target } => {
            let id = *scene
                .tokens
                .get(target.name())
                .ok_or_else(|| SrfError::UnknownEntity(target.name().to_string()))?;

            let (bg, inv_attn) = ddim_inversion_with_attention(
                current,
                denoiser,
                &config.schedule,
                &scene_tokens,
            )?;
            let ref_map = mean_softmax_of(&inv_attn, id)?;
            let mask = attention_to_mask(&ref_map, height, width, config.fusion.attn_quantile)?;
            let n = (height * width) as f64;
            let uniform = vec![1.0 / n; height * width];

            let start = denoiser.denoise(current, 1, &scene_tokens)?;
            let peak_before = start
                .attention
                .softmax(id)
                .map(|s| StageTrace::peak_ratio(&s))
                .ok_or(SrfError::MissingAttention(id))?;

            Ok(PreparedStage {
                plan: StagePlan {
                    mode: StageMode::Erasing,
                    text: render_directive(directive),
                    tokens: scene_tokens,
                    names,
                    targets: vec![StimulusTarget::from_map(id, uniform, mask.clone())?],
                    mask_policy: MaskPolicy::Fixed { mask },
                    init: InitLatent::Inverted,
                },
                bg,
                relaxation: None,
                peak_before: Some(peak_before),
                cleanup: vec![target.name().to_string()],
            })
        }
    }
}

/// Folds [`run_directive`] over a script: each stage's background is the
/// previous stage's output, re-inverted. On failure, the error carries the
/// completed stages.
pub fn run_progressive(
    background: &LatentGrid,
    script: &DirectiveScript,
    denoiser: &dyn Denoiser,
    config: &ProgressiveConfig,
) -> Result<ProgressiveOutcome, Box<ProgressiveError>> {
    let fail = |stage: usize, source: SrfError, partial: Vec<StageOutcome>| {
        Box::new(ProgressiveError { stage, source, partial })
    };

    if background.shape() != (config.channels, config.height, config.width) {
        return Err(fail(
            0,
            SrfError::ShapeMismatch(format!(
                "background {:?} vs configured {:?}",
                background.shape(),
                (config.channels, config.height, config.width)
            )),
            Vec::new(),
        ));
    }
    if !background.is_finite() {
        return Err(fail(
            0,
            SrfError::InvalidConfig("background latent contains non-finite values".into()),
            Vec::new(),
        ));
    }
    if let Err(e) = config
        .stimulus
        .validate(config.schedule.steps())
        .and_then(|_| config.fusion.validate(config.schedule.steps()))
    {
        return Err(fail(0, e, Vec::new()));
    }

    let mut scene = SceneState::new();
    let mut current = background.clone().with_step_index(0);
    let mut stages: Vec<StageOutcome> = Vec::with_capacity(script.len());

    for (index, directive) in script.directives().iter().enumerate() {
        let stage_seed = config.stage_seed(index);
        let prepared =
            match prepare_stage(&mut scene, directive, &current, denoiser, config, stage_seed) {
                Ok(p) => p,
                Err(e) => return Err(fail(index, e, stages)),
            };
        let (latent, mut trace) = match run_directive(
            &prepared.plan,
            &prepared.bg,
            denoiser,
            &config.schedule,
            &config.stimulus,
            &config.fusion,
            config.variant,
        ) {
            Ok(r) => r,
            Err(e) => return Err(fail(index, e, stages)),
        };

        for name in &prepared.cleanup {
            if let Err(e) = scene.remove_entity(name) {
                return Err(fail(index, e, stages));
            }
        }

        trace.index = index;
        trace.relaxation = prepared.relaxation.and_then(|r| match r {
            Relaxation::None => None,
            Relaxation::DroppedNoOverlap => Some("dropped_no_overlap".to_string()),
            Relaxation::DroppedProximity => Some("dropped_proximity".to_string()),
        });
        trace.peak_ratio_before = prepared.peak_before;
        trace.boxes = scene
            .boxes
            .iter()
            .map(|(n, b)| (n.clone(), [b.x0, b.y0, b.x1, b.y1]))
            .collect();

        current = latent.clone();
        stages.push(StageOutcome { trace, latent, relaxation: prepared.relaxation });
    }

    Ok(ProgressiveOutcome { stages, scene, final_latent: current })
}
