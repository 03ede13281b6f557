//! Metrics and comparison harnesses over run traces: which objects
//! captured their planned regions, which relations the final scene
//! satisfies, how the loop's variants rank, and how the step size and
//! mask switch point sweep.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffusion::{LatentGrid, NoiseSchedule, ReferenceDenoiser};
use crate::directive::{decompose, parse_directive, DirectiveError, DirectiveScript};
use crate::layout::{
    attention_mass, half_peak_box, rasterize_mask, relation_groups, relation_to_constraints,
    solve_relaxed, BBox, LayoutError, RelationCheck,
};
use crate::srf::{
    run_progressive, AblationVariant, FusionConfig, ProgressiveConfig, ProgressiveError,
    ProgressiveOutcome, SrfError, StageOutcome, StageTrace, StimulusConfig, STAGE_SEED_STRIDE,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to evaluate: {0}")]
    EmptyInput(String),
    #[error(transparent)]
    Layout(#[from] LayoutError),
    #[error(transparent)]
    Directive(#[from] DirectiveError),
    #[error(transparent)]
    Run(#[from] Box<ProgressiveError>),
    #[error("suite construction: {0}")]
    Suite(String),
}

/// Which boxes ground the relation predicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxSource {
    /// Solver-planned boxes, as recorded in the traces.
    Planned,
    /// Half-peak bounding boxes of each entity's final attention — what
    /// the run actually put where.
    Realized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub name: String,
    /// Final softmaxed attention mass inside the planned box.
    pub mass: f64,
    pub synthesized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub description: String,
    pub satisfied: bool,
}

/// Everything measured about one directive of the script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectiveRecord {
    pub index: usize,
    pub mode: String,
    pub text: String,
    /// Objects this directive introduced that survive to the end.
    pub objects: Vec<ObjectRecord>,
    pub relations: Vec<RelationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub object_recall: f64,
    /// None when the script states no relations (reported as n/a).
    pub relation_accuracy: Option<f64>,
    pub records: Vec<DirectiveRecord>,
}

fn planned_boxes(trace: &StageTrace) -> Result<BTreeMap<String, BBox>, EvalError> {
    let mut out = BTreeMap::new();
    for (name, [x0, y0, x1, y1]) in &trace.boxes {
        let b = BBox::new(*x0, *y0, *x1, *y1)?;
        out.insert(name.clone(), b);
    }
    Ok(out)
}

fn realized_boxes(trace: &StageTrace) -> Result<BTreeMap<String, BBox>, EvalError> {
    let mut out = BTreeMap::new();
    for name in trace.boxes.keys() {
        let map = trace
            .final_attention
            .get(name)
            .ok_or_else(|| EvalError::EmptyInput(format!("no final attention for {name:?}")))?;
        out.insert(name.clone(), half_peak_box(map, trace.height, trace.width)?);
    }
    Ok(out)
}

/// Fraction of surviving objects whose final attention mass inside their
/// planned box reaches `threshold`. Empty trace list is an error; a scene
/// with no surviving objects counts as vacuously complete.
pub fn object_recall(traces: &[StageTrace], threshold: f64) -> Result<f64, EvalError> {
    let report = metric_report(traces, threshold, BoxSource::Planned)?;
    Ok(report.object_recall)
}

/// Fraction of stated relations satisfied by the final boxes; None when
/// no relation is checkable.
pub fn relation_accuracy(
    traces: &[StageTrace],
    source: BoxSource,
) -> Result<Option<f64>, EvalError> {
    let report = metric_report(traces, 0.5, source)?;
    Ok(report.relation_accuracy)
}

fn checks_of(trace: &StageTrace) -> Result<Vec<RelationCheck>, EvalError> {
    if trace.mode != "synthesis" {
        return Ok(vec![]);
    }
    let directive = parse_directive(&trace.text)?;
    Ok(relation_groups(&directive)?)
}

/// Computes both metrics plus per-directive records from a run's traces.
pub fn metric_report(
    traces: &[StageTrace],
    threshold: f64,
    source: BoxSource,
) -> Result<MetricReport, EvalError> {
    let last = traces
        .last()
        .ok_or_else(|| EvalError::EmptyInput("run produced no stage traces".into()))?;
    let planned = planned_boxes(last)?;
    let relation_boxes = match source {
        BoxSource::Planned => planned.clone(),
        BoxSource::Realized => realized_boxes(last)?,
    };

    // First pass: score every surviving object against its planned box.
    let mut object_ok: BTreeMap<String, bool> = BTreeMap::new();
    let mut object_mass: BTreeMap<String, f64> = BTreeMap::new();
    for (name, planned_box) in &planned {
        let map = last
            .final_attention
            .get(name)
            .ok_or_else(|| EvalError::EmptyInput(format!("no final attention for {name:?}")))?;
        let mask = rasterize_mask(planned_box, last.height, last.width)?;
        let mass = attention_mass(map, &mask)?;
        object_mass.insert(name.clone(), mass);
        object_ok.insert(name.clone(), mass >= threshold);
    }

    let mut records = Vec::with_capacity(traces.len());
    let mut relations_total = 0usize;
    let mut relations_ok = 0usize;
    let mut seen: BTreeSet<String> = BTreeSet::new();

    for trace in traces {
        let introduced: Vec<String> = trace
            .entities
            .keys()
            .filter(|n| !seen.contains(*n))
            .cloned()
            .collect();
        seen.extend(introduced.iter().cloned());

        let objects = introduced
            .into_iter()
            .filter(|name| planned.contains_key(name)) // erased entities drop out
            .map(|name| ObjectRecord {
                mass: object_mass[&name],
                synthesized: object_ok[&name],
                name,
            })
            .collect();

        let mut relations = Vec::new();
        for check in checks_of(trace)? {
            // Relations over entities erased later can no longer be judged.
            match check.holds(&relation_boxes) {
                Ok(geometry_ok) => {
                    // Against realized boxes, a relation additionally needs
                    // its participants to have been synthesized at all —
                    // diffuse leftover attention has a box but no object.
                    let ok = geometry_ok
                        && (source == BoxSource::Planned
                            || check.entities().iter().all(|n| object_ok[*n]));
                    relations_total += 1;
                    relations_ok += ok as usize;
                    relations.push(RelationRecord { description: check.description, satisfied: ok });
                }
                Err(LayoutError::MissingLayout(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }

        records.push(DirectiveRecord {
            index: trace.index,
            mode: trace.mode.clone(),
            text: trace.text.clone(),
            objects,
            relations,
        });
    }

    let total_objects = planned.len();
    let object_recall = if total_objects == 0 {
        1.0
    } else {
        object_ok.values().filter(|ok| **ok).count() as f64 / total_objects as f64
    };
    let relation_accuracy =
        (relations_total > 0).then(|| relations_ok as f64 / relations_total as f64);
    Ok(MetricReport { object_recall, relation_accuracy, records })
}

/// Stage indices whose output diverges from their background outside the
/// final fusion mask. Empty for runs that blended every step; skipping the
/// blend trips it.
pub fn fusion_locality_violations(
    background: &LatentGrid,
    stages: &[StageOutcome],
) -> Vec<usize> {
    let mut hits = Vec::new();
    for (i, stage) in stages.iter().enumerate() {
        let bg = if i == 0 { background } else { &stages[i - 1].latent };
        let mask = &stage.trace.final_mask;
        let (c, h, w) = stage.latent.shape();
        if bg.shape() != (c, h, w) || mask.len() != h * w {
            hits.push(i);
            continue;
        }
        let spatial = h * w;
        let violated = stage
            .latent
            .data()
            .iter()
            .zip(bg.data())
            .enumerate()
            .any(|(idx, (a, b))| mask[idx % spatial] == 0 && a.to_bits() != b.to_bits());
        if violated {
            hits.push(i);
        }
    }
    hits
}

/// One script + background + seed, shared across every variant compared.
#[derive(Debug, Clone)]
pub struct SuiteCase {
    pub name: String,
    pub seed: u64,
    pub background: LatentGrid,
    pub script: DirectiveScript,
}

/// A case's run: finished, or aborted by a non-finite gradient.
#[derive(Debug)]
pub enum CaseOutcome {
    Done(ProgressiveOutcome),
    NonFinite { stage: usize },
}

const SUITE_LAMBDA: f64 = 0.1;

fn case_config(
    seed: u64,
    stimulus: &StimulusConfig,
    fusion: &FusionConfig,
    variant: AblationVariant,
) -> ProgressiveConfig {
    ProgressiveConfig {
        schedule: NoiseSchedule::default_linear(),
        channels: 4,
        height: 16,
        width: 16,
        stimulus: stimulus.clone(),
        fusion: fusion.clone(),
        seed,
        variant,
    }
}

/// Runs every case under one variant. Non-finite gradients are recorded
/// per case; any other failure aborts.
pub fn run_suite(
    suite: &[SuiteCase],
    stimulus: &StimulusConfig,
    fusion: &FusionConfig,
    variant: AblationVariant,
    jobs: usize,
) -> Result<Vec<CaseOutcome>, EvalError> {
    let run_one = |case: &SuiteCase| -> Result<CaseOutcome, EvalError> {
        let denoiser = ReferenceDenoiser::new(case.seed, SUITE_LAMBDA);
        let config = case_config(case.seed, stimulus, fusion, variant);
        match run_progressive(&case.background, &case.script, &denoiser, &config) {
            Ok(outcome) => Ok(CaseOutcome::Done(outcome)),
            Err(e) if matches!(e.source, SrfError::NonFiniteGradient { .. }) => {
                Ok(CaseOutcome::NonFinite { stage: e.stage })
            }
            Err(e) => Err(e.into()),
        }
    };

    let jobs = jobs.max(1).min(suite.len().max(1));
    if jobs == 1 {
        return suite.iter().map(run_one).collect();
    }
    let mut results: Vec<Option<Result<CaseOutcome, EvalError>>> =
        (0..suite.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let pending: Vec<(usize, &SuiteCase)> = suite.iter().enumerate().collect();
        let mut handles = Vec::new();
        for chunk in pending.chunks(suite.len().div_ceil(jobs)) {
            let chunk: Vec<(usize, &SuiteCase)> = chunk.to_vec();
            handles.push(scope.spawn(move || {
                chunk.into_iter().map(|(i, case)| (i, run_one(case))).collect::<Vec<_>>()
            }));
        }
        for handle in handles {
            for (i, res) in handle.join().expect("suite worker panicked") {
                results[i] = Some(res);
            }
        }
    });
    results.into_iter().map(|r| r.expect("every case ran")).collect()
}

fn trace_vec(outcome: &ProgressiveOutcome) -> Vec<StageTrace> {
    outcome.stages.iter().map(|s| s.trace.clone()).collect()
}

/// Suite-level metrics for one variant: metrics averaged over cases.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub label: String,
    pub object_recall: f64,
    pub relation_accuracy: Option<f64>,
    /// Cases aborted by non-finite gradients.
    pub nonfinite_cases: usize,
    /// Stages whose output strayed from the background outside the mask.
    pub locality_violations: usize,
}

fn summarize_variant(
    label: &str,
    suite: &[SuiteCase],
    outcomes: &[CaseOutcome],
    threshold: f64,
    source: BoxSource,
) -> Result<VariantSummary, EvalError> {
    let mut recall_sum = 0.0;
    let mut rel_ok = 0usize;
    let mut rel_total = 0usize;
    let mut nonfinite = 0usize;
    let mut locality = 0usize;
    for (case, outcome) in suite.iter().zip(outcomes) {
        match outcome {
            CaseOutcome::NonFinite { .. } => {
                nonfinite += 1; // counts as zero recall, relations unjudged
            }
            CaseOutcome::Done(o) => {
                let traces = trace_vec(o);
                let report = metric_report(&traces, threshold, source)?;
                recall_sum += report.object_recall;
                for record in &report.records {
                    for rel in &record.relations {
                        rel_total += 1;
                        rel_ok += rel.satisfied as usize;
                    }
                }
                locality += fusion_locality_violations(&case.background, &o.stages).len();
            }
        }
    }
    let cases = suite.len().max(1);
    Ok(VariantSummary {
        label: label.to_string(),
        object_recall: recall_sum / cases as f64,
        relation_accuracy: (rel_total > 0).then(|| rel_ok as f64 / rel_total as f64),
        nonfinite_cases: nonfinite,
        locality_violations: locality,
    })
}

/// Runs the suite under each variant (identical cases and seeds — the
/// pairing the comparisons rely on) and summarizes per variant.
pub fn ablation_run(
    suite: &[SuiteCase],
    stimulus: &StimulusConfig,
    fusion: &FusionConfig,
    variants: &[AblationVariant],
    threshold: f64,
    jobs: usize,
) -> Result<Vec<VariantSummary>, EvalError> {
    if suite.is_empty() {
        return Err(EvalError::EmptyInput("ablation suite is empty".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for variant in variants {
        let outcomes = run_suite(suite, stimulus, fusion, *variant, jobs)?;
        rows.push(summarize_variant(
            variant.label(),
            suite,
            &outcomes,
            threshold,
            BoxSource::Realized,
        )?);
    }
    Ok(rows)
}

/// One sweep sample: metrics at a single parameter value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub object_recall: f64,
    pub relation_accuracy: Option<f64>,
    /// Fraction of cases killed by non-finite gradients.
    pub nonfinite_rate: f64,
    /// Mean fraction of stimulus-window steps whose entering loss rose.
    pub degradation_rate: f64,
}

fn degradation_of(traces: &[StageTrace], window: usize) -> f64 {
    let mut increases = 0usize;
    let mut steps = 0usize;
    for trace in traces {
        let w = window.min(trace.steps.len());
        for pair in trace.steps[..w].windows(2) {
            steps += 1;
            increases += (pair[1].loss > pair[0].loss) as usize;
        }
    }
    if steps == 0 {
        0.0
    } else {
        increases as f64 / steps as f64
    }
}

fn sweep_point(
    suite: &[SuiteCase],
    stimulus: &StimulusConfig,
    fusion: &FusionConfig,
    threshold: f64,
    jobs: usize,
    value: f64,
) -> Result<SweepRow, EvalError> {
    let outcomes = run_suite(suite, stimulus, fusion, AblationVariant::Full, jobs)?;
    let mut recall_sum = 0.0;
    let mut rel_ok = 0usize;
    let mut rel_total = 0usize;
    let mut nonfinite = 0usize;
    let mut degradation_sum = 0.0;
    let mut done = 0usize;
    for outcome in &outcomes {
        match outcome {
            CaseOutcome::NonFinite { .. } => nonfinite += 1,
            CaseOutcome::Done(o) => {
                let traces = trace_vec(o);
                let report = metric_report(&traces, threshold, BoxSource::Realized)?;
                recall_sum += report.object_recall;
                for record in &report.records {
                    for rel in &record.relations {
                        rel_total += 1;
                        rel_ok += rel.satisfied as usize;
                    }
                }
                degradation_sum += degradation_of(&traces, stimulus.stimulus_steps);
                done += 1;
            }
        }
    }
    let cases = suite.len().max(1);
    Ok(SweepRow {
        value,
        object_recall: recall_sum / cases as f64,
        relation_accuracy: (rel_total > 0).then(|| rel_ok as f64 / rel_total as f64),
        nonfinite_rate: nonfinite as f64 / cases as f64,
        degradation_rate: if done == 0 { 1.0 } else { degradation_sum / done as f64 },
    })
}

/// Sweeps the response step size over the suite.
pub fn sweep_alpha(
    values: &[f64],
    suite: &[SuiteCase],
    base: &StimulusConfig,
    fusion: &FusionConfig,
    threshold: f64,
    jobs: usize,
) -> Result<Vec<SweepRow>, EvalError> {
    if suite.is_empty() {
        return Err(EvalError::EmptyInput("sweep suite is empty".into()));
    }
    values
        .iter()
        .map(|&alpha| {
            let stimulus = StimulusConfig { alpha, ..base.clone() };
            sweep_point(suite, &stimulus, fusion, threshold, jobs, alpha)
        })
        .collect()
}

/// Sweeps the mask switch point over the suite.
pub fn sweep_tau(
    values: &[usize],
    suite: &[SuiteCase],
    stimulus: &StimulusConfig,
    base: &FusionConfig,
    threshold: f64,
    jobs: usize,
) -> Result<Vec<SweepRow>, EvalError> {
    if suite.is_empty() {
        return Err(EvalError::EmptyInput("sweep suite is empty".into()));
    }
    values
        .iter()
        .map(|&tau| {
            let fusion = FusionConfig { tau, ..base.clone() };
            sweep_point(suite, stimulus, &fusion, threshold, jobs, tau as f64)
        })
        .collect()
}

/// Renders sweep rows as `value,object_recall,relation_accuracy` CSV.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,object_recall,relation_accuracy\n");
    for row in rows {
        let rel = row
            .relation_accuracy
            .map(|v| format!("{v}"))
            .unwrap_or_else(|| "na".to_string());
        out.push_str(&format!("{},{},{}\n", row.value, row.object_recall, rel));
    }
    out
}

/// Paired full-vs-baseline outcome counts over a synthesis suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficacyReport {
    pub pairs: usize,
    /// Pairs where the stimulated run captured strictly more mass.
    pub mass_wins: usize,
    /// Stimulated runs whose entering loss fell across the window.
    pub loss_drops: usize,
}

fn final_mass_of(outcome: &ProgressiveOutcome) -> Result<f64, EvalError> {
    let trace = outcome
        .stages
        .last()
        .map(|s| &s.trace)
        .ok_or_else(|| EvalError::EmptyInput("no stages".into()))?;
    let planned = planned_boxes(trace)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (name, bbox) in &planned {
        let map = trace
            .final_attention
            .get(name)
            .ok_or_else(|| EvalError::EmptyInput(format!("no final attention for {name:?}")))?;
        let mask = rasterize_mask(bbox, trace.height, trace.width)?;
        total += attention_mass(map, &mask)?;
        count += 1;
    }
    if count == 0 {
        return Err(EvalError::EmptyInput("no surviving objects to measure".into()));
    }
    Ok(total / count as f64)
}

/// Runs each case twice — stimulated and with the step size zeroed — and
/// counts mass wins and within-window loss drops for the stimulated runs.
pub fn stimulus_efficacy(
    suite: &[SuiteCase],
    stimulus: &StimulusConfig,
    fusion: &FusionConfig,
    jobs: usize,
) -> Result<EfficacyReport, EvalError> {
    if suite.is_empty() {
        return Err(EvalError::EmptyInput("efficacy suite is empty".into()));
    }
    let full = run_suite(suite, stimulus, fusion, AblationVariant::Full, jobs)?;
    let baseline = run_suite(suite, stimulus, fusion, AblationVariant::NoStimulus, jobs)?;

    let mut mass_wins = 0usize;
    let mut loss_drops = 0usize;
    for (f, b) in full.iter().zip(&baseline) {
        let (CaseOutcome::Done(f), CaseOutcome::Done(b)) = (f, b) else {
            continue; // a non-finite abort can never count as a win
        };
        if final_mass_of(f)? > final_mass_of(b)? {
            mass_wins += 1;
        }
        let trace = &f.stages.last().expect("done outcome has stages").trace;
        let w = stimulus.stimulus_steps.min(trace.steps.len());
        if w >= 2 && trace.steps[w - 1].loss < trace.steps[0].loss {
            loss_drops += 1;
        }
    }
    Ok(EfficacyReport { pairs: suite.len(), mass_wins, loss_drops })
}

const SUITE_NOUNS: &[&str] = &[
    "cat", "dog", "bird", "car", "bus", "tree", "lamp", "sofa", "rug", "cup", "plate", "fork",
    "box", "bag", "hat", "fish", "boat", "duck", "drum", "bell", "kite", "sock", "vase", "fan",
    "pot",
];

/// Single-directive synthesis cases (one object, no relations) over
/// distinct seeds — the stimulus efficacy testbed.
pub fn synthesis_suite(count: usize, base_seed: u64) -> Result<Vec<SuiteCase>, EvalError> {
    (0..count)
        .map(|i| {
            let noun = SUITE_NOUNS[i % SUITE_NOUNS.len()];
            let script = decompose(&format!("add a {noun}"))?;
            Ok(SuiteCase {
                name: format!("synthesis_{i:02}_{noun}"),
                seed: base_seed.wrapping_add(i as u64),
                background: LatentGrid::zeros(4, 16, 16, 0),
                script,
            })
        })
        .collect()
}

/// Two-stage cases whose second object is placed relative to the first —
/// gives the sweeps a relation to score.
pub fn relational_suite(count: usize, base_seed: u64) -> Result<Vec<SuiteCase>, EvalError> {
    let relations = ["left of", "right of", "above", "below"];
    (0..count)
        .map(|i| {
            let a = SUITE_NOUNS[(2 * i) % SUITE_NOUNS.len()];
            let b = SUITE_NOUNS[(2 * i + 1) % SUITE_NOUNS.len()];
            let rel = relations[i % relations.len()];
            let script =
                decompose(&format!("add a {a}. then add a {b} {rel} the {a}"))?;
            Ok(SuiteCase {
                name: format!("relational_{i:02}_{b}_{rel}_{a}"),
                seed: base_seed.wrapping_add(100 + i as u64),
                background: LatentGrid::zeros(4, 16, 16, 0),
                script,
            })
        })
        .collect()
}

/// Component of `target` orthogonal to every vector in `others`.
fn orthogonal_component(target: &[f64], others: &[Vec<f64>]) -> Vec<f64> {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for other in others {
        let mut v = other.clone();
        for e in &basis {
            let c = dot(&v, e) / dot(e, e);
            for (vi, ei) in v.iter_mut().zip(e) {
                *vi -= c * ei;
            }
        }
        if dot(&v, &v) > 1e-12 {
            basis.push(v);
        }
    }
    let mut u = target.to_vec();
    for e in &basis {
        let c = dot(&u, e) / dot(e, e);
        for (ui, ei) in u.iter_mut().zip(e) {
            *ui -= c * ei;
        }
    }
    u
}

/// Writes a pattern into `bg` inside `bbox` that drives `token`'s
/// attention logits to `logit` there while leaving the other listed
/// tokens' logits untouched.
fn embed_object(
    bg: &mut LatentGrid,
    denoiser: &ReferenceDenoiser,
    token: u32,
    other_tokens: &[u32],
    bbox: &BBox,
    logit: f64,
) -> Result<(), EvalError> {
    let (channels, height, width) = bg.shape();
    let w_token = denoiser.projection(token, channels);
    let others: Vec<Vec<f64>> =
        other_tokens.iter().map(|&t| denoiser.projection(t, channels)).collect();
    let u = orthogonal_component(&w_token, &others);
    let gain: f64 = w_token.iter().zip(&u).map(|(a, b)| a * b).sum();
    if gain.abs() < 1e-9 {
        return Err(EvalError::Suite(format!(
            "token {token}: projection nearly inside the span of its peers"
        )));
    }
    let scale = logit / gain;
    let mask = rasterize_mask(bbox, height, width)?;
    for row in 0..height {
        for col in 0..width {
            if !mask.get(row, col) {
                continue;
            }
            for (c, uc) in u.iter().enumerate() {
                bg.set(c, row, col, bg.get(c, row, col) + scale * uc);
            }
        }
    }
    Ok(())
}

/// Re-derives the box the driver's solver will assign to a one-variable
/// synthesis stage, so backgrounds can be built around it.
fn presolve_stage_box(
    directive: &crate::directive::Directive,
    anchors: &BTreeMap<String, BBox>,
    stage_seed: u64,
) -> Result<BBox, EvalError> {
    let set = relation_to_constraints(directive, anchors, &BBox::CANVAS)?;
    let existing: Vec<BBox> = anchors.values().copied().collect();
    let (report, _) = solve_relaxed(&set, &existing, stage_seed)?;
    Ok(report.boxes[0])
}

/// The bundled comparison suite: three-object scenes whose first two
/// objects are etched into the background at the exact boxes the solver
/// will pick, with the third added live and placed relative to the first.
/// Blending restores the etched objects each stage; skipping it erases
/// them — which is what the variant comparisons measure.
pub fn ablation_suite() -> Result<Vec<SuiteCase>, EvalError> {
    // Seeds picked so every scene is well-conditioned: the live object's
    // stimulus converges and the etched objects stay out of later masks.
    const CASES: &[(&str, &str, &str, &str, u64)] = &[
        ("cat", "dog", "bird", "left of", 5000),
        ("car", "bus", "tree", "right of", 5017),
        ("lamp", "sofa", "rug", "above", 5034),
        ("cup", "plate", "fork", "below", 4051),
        ("boxer", "bag", "hat", "right of", 4068),
        ("fish", "boat", "duck", "left of", 4085),
    ];
    const EMBED_LOGIT: f64 = 5.0;
    CASES
        .iter()
        .enumerate()
        .map(|(i, (a, b, c, rel, seed))| {
            let seed = *seed;
            let text = format!("add a {a}. then add a {b}. then add a {c} {rel} the {a}");
            let script = decompose(&text)?;
            let directives = script.directives();

            let mut anchors = BTreeMap::new();
            let box_a = presolve_stage_box(
                &directives[0],
                &anchors,
                seed ^ 1u64.wrapping_mul(STAGE_SEED_STRIDE),
            )?;
            anchors.insert(a.to_string(), box_a);
            let box_b = presolve_stage_box(
                &directives[1],
                &anchors,
                seed ^ 2u64.wrapping_mul(STAGE_SEED_STRIDE),
            )?;

            let denoiser = ReferenceDenoiser::new(seed, SUITE_LAMBDA);
            let mut background = LatentGrid::zeros(4, 16, 16, 0);
            embed_object(&mut background, &denoiser, 0, &[1, 2], &box_a, EMBED_LOGIT)?;
            embed_object(&mut background, &denoiser, 1, &[0, 2], &box_b, EMBED_LOGIT)?;

            Ok(SuiteCase {
                name: format!("ablation_{i}_{a}_{b}_{c}"),
                seed,
                background,
                script,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::srf::{MaskLabel, StepTrace};

    fn mini_trace(mass_cat: f64) -> StageTrace {
        // 2x2 grid; cat planned in the left column.
        let mut final_attention = BTreeMap::new();
        final_attention.insert(
            "cat".to_string(),
            vec![mass_cat / 2.0, 0.5 - mass_cat / 2.0, mass_cat / 2.0, 0.5 - mass_cat / 2.0],
        );
        StageTrace {
            index: 0,
            mode: "synthesis".into(),
            text: "add a cat".into(),
            height: 2,
            width: 2,
            entities: BTreeMap::from([("cat".to_string(), 0)]),
            boxes: BTreeMap::from([("cat".to_string(), [0.0, 0.0, 0.5, 1.0])]),
            relaxation: None,
            steps: vec![
                StepTrace {
                    step: 1,
                    t: 2,
                    loss: 1.0,
                    mask_source: MaskLabel::Box,
                    attention_mass_in_mask: 0.2,
                },
                StepTrace {
                    step: 2,
                    t: 1,
                    loss: 0.5,
                    mask_source: MaskLabel::Box,
                    attention_mass_in_mask: 0.6,
                },
            ],
            final_attention,
            final_mask: vec![1, 0, 1, 0],
            peak_ratio_before: None,
        }
    }

    #[test]
    fn recall_thresholds_on_planned_mass() {
        let high = [mini_trace(0.9)];
        assert_eq!(object_recall(&high, 0.5).unwrap(), 1.0);
        let low = [mini_trace(0.2)];
        assert_eq!(object_recall(&low, 0.5).unwrap(), 0.0);
        assert!(matches!(object_recall(&[], 0.5), Err(EvalError::EmptyInput(_))));
    }

    #[test]
    fn report_is_deterministic() {
        let traces = [mini_trace(0.7)];
        let a = metric_report(&traces, 0.5, BoxSource::Planned).unwrap();
        let b = metric_report(&traces, 0.5, BoxSource::Planned).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.records.len(), traces.len());
        assert!(a.relation_accuracy.is_none(), "no relations stated");
    }

    #[test]
    fn relation_accuracy_judges_boxes() {
        let mut trace = mini_trace(0.9);
        trace.text = "add a cat left of the dog".into();
        trace.entities.insert("dog".to_string(), 1);
        trace.boxes.insert("dog".to_string(), [0.6, 0.0, 0.9, 1.0]);
        trace.final_attention.insert("dog".to_string(), vec![0.25; 4]);
        let acc = relation_accuracy(&[trace.clone()], BoxSource::Planned).unwrap();
        assert_eq!(acc, Some(1.0), "planned: cat center is left of dog center");

        // Swap the planned boxes and the same relation fails.
        trace.boxes.insert("cat".to_string(), [0.6, 0.0, 0.9, 1.0]);
        trace.boxes.insert("dog".to_string(), [0.0, 0.0, 0.5, 1.0]);
        let acc = relation_accuracy(&[trace], BoxSource::Planned).unwrap();
        assert_eq!(acc, Some(0.0));
    }

    #[test]
    fn degradation_counts_loss_rises() {
        let mut trace = mini_trace(0.9);
        trace.steps[1].loss = 2.0; // rose from 1.0
        assert_eq!(degradation_of(&[trace.clone()], 2), 1.0);
        trace.steps[1].loss = 0.25;
        assert_eq!(degradation_of(&[trace], 2), 0.0);
    }

    #[test]
    fn sweep_csv_format() {
        let rows = vec![
            SweepRow {
                value: 0.0,
                object_recall: 0.25,
                relation_accuracy: None,
                nonfinite_rate: 0.0,
                degradation_rate: 0.0,
            },
            SweepRow {
                value: 40.0,
                object_recall: 1.0,
                relation_accuracy: Some(0.75),
                nonfinite_rate: 0.0,
                degradation_rate: 0.125,
            },
        ];
        assert_eq!(
            sweep_csv(&rows),
            "value,object_recall,relation_accuracy\n0,0.25,na\n40,1,0.75\n"
        );
    }

    #[test]
    fn suites_are_well_formed() {
        let synth = synthesis_suite(5, 900).unwrap();
        assert_eq!(synth.len(), 5);
        assert!(synth.iter().all(|c| c.script.len() == 1));
        let seeds: BTreeSet<u64> = synth.iter().map(|c| c.seed).collect();
        assert_eq!(seeds.len(), 5, "seeds must be distinct");

        let rel = relational_suite(4, 900).unwrap();
        assert!(rel.iter().all(|c| c.script.len() == 2));

        let abl = ablation_suite().unwrap();
        assert_eq!(abl.len(), 6);
        assert!(abl.iter().all(|c| c.script.len() == 3));
        assert!(abl.iter().all(|c| c.background.data().iter().any(|v| *v != 0.0)));
    }

    #[test]
    fn embedded_objects_attend_at_their_boxes() {
        let abl = ablation_suite().unwrap();
        let case = &abl[0];
        let denoiser = ReferenceDenoiser::new(case.seed, SUITE_LAMBDA);
        let out = crate::diffusion::Denoiser::denoise(&denoiser, &case.background, 1, &[0, 1, 2])
            .unwrap();

        let mut anchors = BTreeMap::new();
        let directives = case.script.directives();
        let box_a = presolve_stage_box(
            &directives[0],
            &anchors,
            case.seed ^ STAGE_SEED_STRIDE,
        )
        .unwrap();
        anchors.insert("cat".to_string(), box_a);
        let box_b = presolve_stage_box(
            &directives[1],
            &anchors,
            case.seed ^ 2u64.wrapping_mul(STAGE_SEED_STRIDE),
        )
        .unwrap();

        let mask_a = rasterize_mask(&box_a, 16, 16).unwrap();
        let mask_b = rasterize_mask(&box_b, 16, 16).unwrap();
        let s0 = out.attention.softmax(0).unwrap();
        let s1 = out.attention.softmax(1).unwrap();
        let s2 = out.attention.softmax(2).unwrap();
        assert!(attention_mass(&s0, &mask_a).unwrap() > 0.8, "first etched object");
        assert!(attention_mass(&s1, &mask_b).unwrap() > 0.8, "second etched object");
        // The live token sees a nearly flat map: no etched cell leaks into it.
        let m2a = attention_mass(&s2, &mask_a).unwrap();
        let frac_a = mask_a.count_set() as f64 / 256.0;
        assert!((m2a - frac_a).abs() < 0.05, "etch is invisible to the third token");
    }

    #[test]
    fn locality_detector_fires_on_unblended_output() {
        let background = LatentGrid::zeros(4, 2, 2, 0);
        let mut latent = background.clone();
        latent.set(0, 1, 1, 9.0); // diverges at a cell the mask says is background
        let mut trace = mini_trace(0.9);
        trace.final_mask = vec![1, 0, 0, 0];
        let stage = StageOutcome { trace, latent, relaxation: None };
        assert_eq!(fusion_locality_violations(&background, &[stage]), vec![0]);

        // Divergence inside the kept region is fine.
        let mut latent = background.clone();
        latent.set(0, 0, 0, 9.0);
        let mut trace = mini_trace(0.9);
        trace.final_mask = vec![1, 0, 0, 0];
        let stage = StageOutcome { trace, latent, relaxation: None };
        assert!(fusion_locality_violations(&background, &[stage]).is_empty());
    }
}
