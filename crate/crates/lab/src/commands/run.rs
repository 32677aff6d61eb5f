use dleaf_core::engine::{DleafConfig, DleafHook, InterventionLog};
use dleaf_core::eval::{relative_reduction, DetectionScore, PlantedOutcome, PlantedSpec, PlantedTask, SyntheticScene};
use dleaf_core::model::{greedy_decode, init_model, AttentionHook, ModelConfig};
use dleaf_core::trace::{TraceHeader, TraceRecord};
use serde::Serialize;

use crate::error::LabResult;

/// Text tokens appended after the image span of the toy prompt.
pub const PROMPT_TEXT: [u32; 3] = [1, 2, 3];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyRunReport {
    pub intervention: bool,
    pub tokens: Vec<u32>,
    pub flagged_layers: Vec<Vec<usize>>,
    pub corrected_layers: usize,
}

#[derive(Debug, Clone)]
pub struct ToyRun {
    pub report: ToyRunReport,
    pub header: TraceHeader,
    /// Pre-intervention attention of every generated step.
    pub records: Vec<TraceRecord>,
    pub log: InterventionLog,
}

pub fn toy_run(model_config: &ModelConfig, dleaf: Option<&DleafConfig>, scene: &SyntheticScene) -> LabResult<ToyRun> {
    let model = init_model(model_config)?;
    let span = model_config.image_span;
    let text: Vec<u32> = PROMPT_TEXT.iter().map(|t| t % model_config.vocab_size as u32).collect();
    let prompt = scene.prompt(span, model_config.vocab_size, &text);

    let mut hook = match dleaf {
        Some(config) => {
            config.validate_for(model_config.num_heads)?;
            Some(DleafHook::new(config.clone())?)
        }
        None => None,
    };
    let decode = greedy_decode(&model, &prompt, hook.as_mut().map(|h| h as &mut dyn AttentionHook))?;
    let log = hook.map(DleafHook::into_log).unwrap_or_default();

    let records = decode
        .steps
        .iter()
        .zip(&decode.tokens)
        .enumerate()
        .map(|(i, (step, &token))| TraceRecord::from_snapshots(i, token, &step.snapshots, span))
        .collect::<dleaf_core::Result<Vec<_>>>()?;
    let header = TraceHeader::new(
        model_config.num_layers,
        model_config.num_heads,
        span,
        model_config.vocab_size,
        "dleaf toy decoder",
    );
    let report = ToyRunReport {
        intervention: dleaf.is_some(),
        tokens: decode.tokens,
        flagged_layers: log.steps.iter().map(|s| s.flagged_layers()).collect(),
        corrected_layers: log.steps.iter().map(|s| s.corrections.len()).sum(),
    };
    Ok(ToyRun { report, header, records, log })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlantedReport {
    pub steps: usize,
    pub prone_steps: usize,
    pub threshold: f64,
    pub hallucinated_before: usize,
    pub hallucinated_after: usize,
    pub reduction: f64,
    pub detection: DetectionScore,
    pub precision: f64,
    pub recall: f64,
}

impl PlantedReport {
    pub fn new(task: &PlantedTask, outcome: &PlantedOutcome) -> Self {
        let reduction = if outcome.hallucinated_before == 0 {
            0.0
        } else {
            relative_reduction(outcome.hallucinated_before as f64, outcome.hallucinated_after as f64)
        };
        Self {
            steps: task.steps.len(),
            prone_steps: task.steps.iter().filter(|s| s.is_prone()).count(),
            threshold: task.scene.threshold,
            hallucinated_before: outcome.hallucinated_before,
            hallucinated_after: outcome.hallucinated_after,
            reduction,
            detection: outcome.detection,
            precision: outcome.detection.precision(),
            recall: outcome.detection.recall(),
        }
    }
}

/// Evaluation config used when the intervention is switched off.
pub fn disabled_config() -> DleafConfig {
    DleafConfig { window: dleaf_core::engine::LayerWindow::Empty, ..DleafConfig::default() }
}

pub fn planted_run(
    spec: &PlantedSpec,
    scene: &SyntheticScene,
    seed: u64,
    dleaf: Option<&DleafConfig>,
) -> LabResult<(PlantedTask, PlantedOutcome, PlantedReport)> {
    let task = PlantedTask::generate(scene.clone(), spec.clone(), seed)?;
    let config = dleaf.cloned().unwrap_or_else(disabled_config);
    let outcome = task.evaluate(&config)?;
    let report = PlantedReport::new(&task, &outcome);
    Ok((task, outcome, report))
}
