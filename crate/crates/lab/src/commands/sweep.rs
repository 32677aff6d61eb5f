use dleaf_core::engine::DleafConfig;
use dleaf_core::eval::{PlantedSpec, PlantedTask, SyntheticScene};
use dleaf_core::model::ModelConfig;
use rayon::prelude::*;
use serde::Serialize;

use super::run::{toy_run, PlantedReport};
use crate::config::{DetectionMetricName, DleafSettings, HeadMetricName};
use crate::error::{LabError, LabResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Gamma,
    Heads,
    Window,
    Alpha,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Toy,
    Planted,
}

/// Splits a comma-separated grid. Window values use the `a-b` form.
pub fn parse_grid(text: &str) -> LabResult<Vec<String>> {
    let grid: Vec<String> = text.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if grid.is_empty() {
        return Err(LabError::Config("sweep grid is empty".into()));
    }
    Ok(grid)
}

/// Settings for one grid point. Sweeping alpha or beta switches on the
/// metric that uses it.
pub fn point_settings(axis: SweepAxis, value: &str, base: &DleafSettings) -> LabResult<DleafSettings> {
    let bad = |e: &dyn std::fmt::Display| LabError::Config(format!("bad {axis:?} grid value {value:?}: {e}"));
    let mut s = base.clone();
    match axis {
        SweepAxis::Gamma => s.gamma = Some(value.parse().map_err(|e| bad(&e))?),
        SweepAxis::Heads => s.heads = Some(value.parse().map_err(|e| bad(&e))?),
        SweepAxis::Window => s.window = Some(value.to_string()),
        SweepAxis::Alpha => {
            s.alpha = Some(value.parse().map_err(|e| bad(&e))?);
            s.detection_metric = Some(DetectionMetricName::Lias);
        }
        SweepAxis::Beta => {
            s.beta = Some(value.parse().map_err(|e| bad(&e))?);
            s.head_metric = Some(HeadMetricName::Ias);
        }
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyPoint {
    pub tokens: Vec<u32>,
    pub corrected_layers: usize,
    /// Positions where the output differs from the uncorrected decode.
    pub changed_tokens: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub config: DleafConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub planted: Option<PlantedReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub toy: Option<ToyPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub task: Task,
    pub rows: Vec<SweepRow>,
    /// For a planted γ sweep over an ascending grid: whether the
    /// post-intervention hallucination count never increases.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weakly_decreasing_in_gamma: Option<bool>,
}

pub struct SweepInputs<'a> {
    pub axis: SweepAxis,
    pub grid: &'a [String],
    pub base: &'a DleafSettings,
    pub task: Task,
    pub model: &'a ModelConfig,
    pub planted: &'a PlantedSpec,
    pub scene: &'a SyntheticScene,
    pub seed: u64,
}

/// Evaluates every grid point in parallel; rows keep grid order.
pub fn sweep(inputs: &SweepInputs<'_>) -> LabResult<SweepReport> {
    let configs: Vec<DleafConfig> = inputs
        .grid
        .iter()
        .map(|v| point_settings(inputs.axis, v, inputs.base)?.resolve())
        .collect::<LabResult<_>>()?;

    let rows: Vec<SweepRow> = match inputs.task {
        Task::Planted => {
            let task = PlantedTask::generate(inputs.scene.clone(), inputs.planted.clone(), inputs.seed)?;
            configs
                .par_iter()
                .zip(inputs.grid.par_iter())
                .map(|(config, value)| {
                    let outcome = task.evaluate(config)?;
                    Ok(SweepRow {
                        value: value.clone(),
                        config: config.clone(),
                        planted: Some(PlantedReport::new(&task, &outcome)),
                        toy: None,
                    })
                })
                .collect::<LabResult<_>>()?
        }
        Task::Toy => {
            let baseline = toy_run(inputs.model, None, inputs.scene)?.report.tokens;
            configs
                .par_iter()
                .zip(inputs.grid.par_iter())
                .map(|(config, value)| {
                    let run = toy_run(inputs.model, Some(config), inputs.scene)?;
                    let changed = run.report.tokens.iter().zip(&baseline).filter(|(a, b)| a != b).count()
                        + run.report.tokens.len().abs_diff(baseline.len());
                    Ok(SweepRow {
                        value: value.clone(),
                        config: config.clone(),
                        planted: None,
                        toy: Some(ToyPoint {
                            tokens: run.report.tokens,
                            corrected_layers: run.report.corrected_layers,
                            changed_tokens: changed,
                        }),
                    })
                })
                .collect::<LabResult<_>>()?
        }
    };

    let weakly_decreasing_in_gamma = (inputs.axis == SweepAxis::Gamma && inputs.task == Task::Planted).then(|| {
        let ascending = rows.windows(2).all(|w| w[0].config.gamma <= w[1].config.gamma);
        let counts: Vec<usize> = rows.iter().filter_map(|r| r.planted.as_ref().map(|p| p.hallucinated_after)).collect();
        ascending && counts.windows(2).all(|w| w[1] <= w[0])
    });
    Ok(SweepReport { axis: inputs.axis, task: inputs.task, rows, weakly_decreasing_in_gamma })
}
