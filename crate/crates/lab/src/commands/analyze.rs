use dleaf_core::diagnostics::{global_head_histogram, label_split_layer_stats, record_layer_metrics, LabelSplitStats, LayerMetrics};
use dleaf_core::stats::{isotonic_pava, spearman, wilcoxon_with_method, Alternative, TestMethod, TestResult, EXACT_LIMIT};
use dleaf_core::trace::{Label, TraceRecord};
use dleaf_core::Error;
use serde::Serialize;

use crate::error::LabResult;
use crate::trace_io::LabelJoin;

/// Non-increasing least-squares fit of LIAF against LIAE.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IsotonicFit {
    pub liae: Vec<f64>,
    pub liaf: Vec<f64>,
    pub fit: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub records: usize,
    pub labels: LabelJoin,
    pub layers: usize,
    /// Hallucinated-minus-real per-layer mean LIAE, tested for a positive shift.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub liae_test: Option<TestResult>,
    /// Hallucinated-minus-real per-layer mean head IAF, tested for a negative shift.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iaf_test: Option<TestResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub liae_liaf_spearman: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub isotonic: Option<IsotonicFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_histogram: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_split: Option<LabelSplitStats>,
    pub notes: Vec<String>,
}

fn layer_means(metrics: &[Vec<LayerMetrics>], pick: fn(&LayerMetrics) -> f64) -> Vec<f64> {
    let layers = metrics[0].len();
    let mut sums = vec![0.0; layers];
    for rec in metrics {
        for (s, m) in sums.iter_mut().zip(rec) {
            *s += pick(m);
        }
    }
    sums.iter().map(|s| s / metrics.len() as f64).collect()
}

/// Signed-rank test over layers; identical series give W = 0 and p = 1.
fn paired_layer_test(hallucinated: &[f64], real: &[f64], alternative: Alternative) -> LabResult<TestResult> {
    let diffs: Vec<f64> = hallucinated.iter().zip(real).map(|(h, r)| h - r).collect();
    let method = if diffs.len() <= EXACT_LIMIT { TestMethod::Exact } else { TestMethod::NormalApprox };
    match wilcoxon_with_method(&diffs, alternative, method) {
        Err(Error::DegenerateSample(_)) => Ok(TestResult { statistic: 0.0, p_value: 1.0, n_effective: 0, method }),
        other => Ok(other?),
    }
}

pub fn analyze(records: &[TraceRecord], labels: LabelJoin, top_k: usize) -> LabResult<AnalysisReport> {
    let metrics: Vec<Vec<LayerMetrics>> = records.iter().map(record_layer_metrics).collect::<dleaf_core::Result<_>>()?;
    let layers = metrics.first().map_or(0, Vec::len);
    let mut report = AnalysisReport {
        records: records.len(),
        labels,
        layers,
        liae_test: None,
        iaf_test: None,
        liae_liaf_spearman: None,
        isotonic: None,
        head_histogram: None,
        label_split: None,
        notes: Vec::new(),
    };
    if records.is_empty() {
        report.notes.push("trace has no records".into());
        return Ok(report);
    }

    let mut points: Vec<(f64, f64)> = metrics.iter().flatten().map(|m| (m.liae, m.liaf)).collect();
    let (liae, liaf): (Vec<f64>, Vec<f64>) = points.iter().copied().unzip();
    match spearman(&liae, &liaf) {
        Ok(rho) => report.liae_liaf_spearman = Some(rho),
        Err(e) => report.notes.push(format!("spearman skipped: {e}")),
    }
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let negated: Vec<f64> = points.iter().map(|p| -p.1).collect();
    let fit = isotonic_pava(&negated, &vec![1.0; negated.len()])?;
    report.isotonic = Some(IsotonicFit {
        liae: points.iter().map(|p| p.0).collect(),
        liaf: points.iter().map(|p| p.1).collect(),
        fit: fit.iter().map(|v| -v).collect(),
    });

    let split = |label: Label| -> Vec<Vec<LayerMetrics>> {
        records.iter().zip(&metrics).filter(|(r, _)| r.label == label).map(|(_, m)| m.clone()).collect()
    };
    let (hallucinated, real) = (split(Label::Hallucinated), split(Label::Real));
    if hallucinated.is_empty() || real.is_empty() {
        report.notes.push("label tests skipped: need both real and hallucinated records".into());
        return Ok(report);
    }
    report.liae_test = Some(paired_layer_test(
        &layer_means(&hallucinated, |m| m.liae),
        &layer_means(&real, |m| m.liae),
        Alternative::Greater,
    )?);
    report.iaf_test = Some(paired_layer_test(
        &layer_means(&hallucinated, |m| m.mean_iaf),
        &layer_means(&real, |m| m.mean_iaf),
        Alternative::Less,
    )?);
    report.head_histogram = Some(global_head_histogram(records, top_k)?);
    report.label_split = Some(label_split_layer_stats(records)?);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use dleaf_core::eval::{PlantedSpec, PlantedTask, SyntheticScene};

    fn join(records: &[TraceRecord]) -> LabelJoin {
        let count = |l| records.iter().filter(|r| r.label == l).count();
        LabelJoin { real: count(Label::Real), hallucinated: count(Label::Hallucinated), unlabeled: count(Label::Unlabeled) }
    }

    fn planted_records() -> Vec<TraceRecord> {
        let spec = PlantedSpec { steps: 30, ..PlantedSpec::default() };
        PlantedTask::generate(SyntheticScene::default(), spec, 1).unwrap().trace_records().unwrap()
    }

    #[test]
    fn separated_labels_give_small_p() {
        let records = planted_records();
        let r = analyze(&records, join(&records), 10).unwrap();
        assert!(r.liae_test.unwrap().p_value < 0.001);
        assert!(r.iaf_test.unwrap().p_value < 0.001);
        assert_eq!(r.head_histogram.unwrap().iter().sum::<usize>(), 10);
        let rho = r.liae_liaf_spearman.unwrap();
        assert!((-1.0..=1.0).contains(&rho));
        let fit = r.isotonic.unwrap().fit;
        assert!(fit.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn identical_label_distributions_give_p_one() {
        let mut records = planted_records();
        records.truncate(1);
        let mut twin = records[0].clone();
        records[0].label = Label::Real;
        twin.label = Label::Hallucinated;
        twin.step = 1;
        records.push(twin);
        let r = analyze(&records, join(&records), 5).unwrap();
        assert_eq!(r.liae_test.unwrap().p_value, 1.0);
        let split = r.label_split.unwrap();
        assert!(split.attention_difference.iter().all(|d| *d == 0.0));
    }

    #[test]
    fn unlabeled_traces_skip_label_tests() {
        let mut records = planted_records();
        records.iter_mut().for_each(|r| r.label = Label::Unlabeled);
        let r = analyze(&records, join(&records), 5).unwrap();
        assert!(r.liae_test.is_none());
        assert!(r.liae_liaf_spearman.is_some());
        assert_eq!(r.notes.len(), 1);
    }
}
