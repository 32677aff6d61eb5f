//! Hallucination scoring and the synthetic planted-hallucination task.

mod chair;
mod planted;
mod pope;
mod throughput;

pub use chair::{chair_scores, CaptionMentions, ChairReport, SynonymMap};
pub use planted::{DetectionScore, PlantedOutcome, PlantedSpec, PlantedStep, PlantedTask, SyntheticScene};
pub use pope::{pope_score, Answer, PopeItem, PopeReport};
pub use throughput::{median, summarize_throughput, ThroughputRun, ThroughputSummary, MIN_REPETITIONS, MIN_TOKENS};

/// Relative reduction `(before - after) / before`.
pub fn relative_reduction(before: f64, after: f64) -> f64 {
    (before - after) / before
}
