use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Minimum generated tokens per measured run.
pub const MIN_TOKENS: usize = 100;
/// Minimum repetitions per configuration.
pub const MIN_REPETITIONS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThroughputRun {
    pub tokens: usize,
    pub seconds: f64,
}

impl ThroughputRun {
    pub fn tokens_per_second(&self) -> f64 {
        self.tokens as f64 / self.seconds
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ThroughputSummary {
    pub baseline_tps: f64,
    pub hooked_tps: f64,
    /// `1 - hooked / baseline`.
    pub overhead: f64,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { 0.5 * (v[mid - 1] + v[mid]) })
}

fn median_tps(runs: &[ThroughputRun], what: &str) -> Result<f64> {
    if runs.len() < MIN_REPETITIONS {
        return Err(Error::Measurement(alloc::format!(
            "{what}: {} repetitions, need at least {MIN_REPETITIONS}",
            runs.len()
        )));
    }
    if let Some(run) = runs.iter().find(|r| r.tokens < MIN_TOKENS) {
        return Err(Error::Measurement(alloc::format!(
            "{what}: run produced {} tokens, need at least {MIN_TOKENS}",
            run.tokens
        )));
    }
    if runs.iter().any(|r| !(r.seconds > 0.0)) {
        return Err(Error::Measurement(alloc::format!("{what}: non-positive duration")));
    }
    let tps: Vec<f64> = runs.iter().map(ThroughputRun::tokens_per_second).collect();
    Ok(median(&tps).expect("non-empty"))
}

/// Median tokens per second of each arm and the relative slowdown.
pub fn summarize_throughput(baseline: &[ThroughputRun], hooked: &[ThroughputRun]) -> Result<ThroughputSummary> {
    let baseline_tps = median_tps(baseline, "baseline")?;
    let hooked_tps = median_tps(hooked, "hooked")?;
    Ok(ThroughputSummary { baseline_tps, hooked_tps, overhead: 1.0 - hooked_tps / baseline_tps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }

    #[test]
    fn identical_arms_have_zero_overhead() {
        let runs = vec![ThroughputRun { tokens: 120, seconds: 0.5 }; 5];
        let s = summarize_throughput(&runs, &runs).unwrap();
        assert_eq!(s.overhead, 0.0);
        assert_eq!(s.baseline_tps, 240.0);
    }

    #[test]
    fn preconditions() {
        let short = vec![ThroughputRun { tokens: 50, seconds: 0.5 }; 5];
        let ok = vec![ThroughputRun { tokens: 100, seconds: 0.5 }; 5];
        assert!(matches!(summarize_throughput(&short, &ok), Err(Error::Measurement(_))));
        assert!(matches!(summarize_throughput(&ok[..4], &ok), Err(Error::Measurement(_))));
        let slower = vec![ThroughputRun { tokens: 100, seconds: 0.625 }; 5];
        let s = summarize_throughput(&ok, &slower).unwrap();
        assert!((s.overhead - 0.2).abs() < 1e-12);
    }
}
