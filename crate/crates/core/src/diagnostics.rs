//! Analyses around the intervention: logit lens, percentile trajectories,
//! head suppression, global head ranking and label-split layer statistics.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionSnapshot, ImageSpan};
use crate::engine::select_heads;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::{compute_mam, iae, iaf, liae, liaf};
use crate::model::{LayerNormParams, Model, StepResult};
use crate::trace::{stored_span, Label, TraceRecord};

/// LayerNorm followed by unembedding of an arbitrary residual vector.
pub fn logit_lens(residual: &[f64], norm: &LayerNormParams, unembed: &Matrix) -> Result<Vec<f64>> {
    if residual.len() != unembed.rows || norm.gain.len() != residual.len() {
        return Err(Error::Shape(alloc::format!(
            "residual of dim {} against unembedding with {} rows",
            residual.len(),
            unembed.rows
        )));
    }
    Ok(unembed.left_mul(&norm.apply(residual)))
}

/// `p`-th percentile (0..=100) by linear interpolation between closest ranks.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Config(alloc::format!("percentile {p} outside [0, 100]")));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    let frac = pos - lo as f64;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

/// Percentile of the logit-lens logits after every block, for one step.
pub fn percentile_logit_trajectory(model: &Model, step: &StepResult, p: f64) -> Result<Vec<f64>> {
    step.hidden
        .residuals
        .iter()
        .map(|r| percentile(&logit_lens(r, &model.final_norm, &model.unembed)?, p))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum SuppressionMode {
    None,
    /// Heads with the highest image attention.
    Top,
    Bottom,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SuppressionSpec {
    pub mode: SuppressionMode,
    pub fraction: f64,
    pub seed: u64,
}

impl SuppressionSpec {
    pub fn count(&self, heads: usize) -> usize {
        libm::floor(self.fraction * heads as f64) as usize
    }
}

/// Zeroes the span entries of the selected heads. Returns the muted head indices.
///
/// Random selection is seeded by `spec.seed` and the layer index.
pub fn suppress_heads(snapshot: &mut AttentionSnapshot, spec: &SuppressionSpec, span: ImageSpan) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&spec.fraction) {
        return Err(Error::Config(alloc::format!("suppression fraction {} outside [0, 1]", spec.fraction)));
    }
    span.check(snapshot.keys())?;
    let heads = snapshot.heads();
    let count = spec.count(heads).min(heads);
    let chosen: Vec<usize> = match spec.mode {
        SuppressionMode::None => Vec::new(),
        _ if count == 0 => Vec::new(),
        SuppressionMode::Top | SuppressionMode::Bottom => {
            let scores: Vec<f64> = (0..heads).map(|h| iaf(snapshot, h, span)).collect::<Result<_>>()?;
            let mut order: Vec<usize> = (0..heads).collect();
            order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
            if spec.mode == SuppressionMode::Top {
                order.reverse();
            }
            order.truncate(count);
            order
        }
        SuppressionMode::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ (snapshot.layer as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let mut picked = sample(&mut rng, heads, count).into_vec();
            picked.sort_unstable();
            picked
        }
    };
    for &h in &chosen {
        snapshot.row_mut(h)[span.start..span.end].iter_mut().for_each(|a| *a = 0.0);
    }
    Ok(chosen)
}

/// Layer-level metrics of one stored record.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerMetrics {
    pub liae: f64,
    pub liaf: f64,
    /// Mean head image attention focus.
    pub mean_iaf: f64,
    /// Mean head image attention entropy.
    pub mean_iae: f64,
}

pub fn record_layer_metrics(record: &TraceRecord) -> Result<Vec<LayerMetrics>> {
    let span = stored_span(record);
    record
        .layer_snapshots()?
        .iter()
        .map(|snap| {
            let mam = compute_mam(snap, span)?;
            let heads = snap.heads() as f64;
            let mut sum_iaf = 0.0;
            let mut sum_iae = 0.0;
            for h in 0..snap.heads() {
                sum_iaf += iaf(snap, h, span)?;
                sum_iae += iae(snap, h, span)?;
            }
            Ok(LayerMetrics { liae: liae(&mam)?, liaf: liaf(&mam), mean_iaf: sum_iaf / heads, mean_iae: sum_iae / heads })
        })
        .collect()
}

/// Ranks every (layer, head) pair by mean image attention focus over the
/// hallucinated records, takes the `k` lowest and counts them per layer.
/// Equal scores keep (layer, head) order.
pub fn global_head_histogram(records: &[TraceRecord], k: usize) -> Result<Vec<usize>> {
    let hallucinated: Vec<&TraceRecord> = records.iter().filter(|r| r.label == Label::Hallucinated).collect();
    let first = hallucinated.first().ok_or_else(|| Error::DegenerateSample("no hallucinated records".into()))?;
    let layers = first.num_layers();
    let heads = first.attention.first().map_or(0, |l| l.len());
    let mut scores = vec![0.0; layers * heads];
    for rec in &hallucinated {
        let span = stored_span(rec);
        for l in 0..layers {
            let snap = rec.layer_snapshot(l)?;
            if snap.heads() != heads {
                return Err(Error::Shape("records disagree on head count".into()));
            }
            for h in 0..heads {
                scores[l * heads + h] += iaf(&snap, h, span)?;
            }
        }
    }
    let count = hallucinated.len() as f64;
    scores.iter_mut().for_each(|s| *s /= count);
    let k = k.min(scores.len());
    let mut counts = vec![0usize; layers];
    if k == 0 {
        return Ok(counts);
    }
    // ascending stable order: the k lowest are the head of the ranking
    let order = if k < scores.len() {
        let mut o = select_heads(&scores, k)?.corrected;
        o.truncate(k);
        o
    } else {
        (0..scores.len()).collect()
    };
    for idx in order {
        counts[idx / heads] += 1;
    }
    Ok(counts)
}

/// Per-layer means split by label, with real-minus-hallucinated differences.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabelSplitStats {
    pub real_attention: Vec<f64>,
    pub hallucinated_attention: Vec<f64>,
    pub real_entropy: Vec<f64>,
    pub hallucinated_entropy: Vec<f64>,
    pub attention_difference: Vec<f64>,
    pub entropy_difference: Vec<f64>,
    pub real_count: usize,
    pub hallucinated_count: usize,
}

pub fn label_split_layer_stats(records: &[TraceRecord]) -> Result<LabelSplitStats> {
    let mut acc = [(Vec::<f64>::new(), Vec::<f64>::new(), 0usize), (Vec::new(), Vec::new(), 0usize)];
    for rec in records {
        let slot = match rec.label {
            Label::Real => 0,
            Label::Hallucinated => 1,
            Label::Unlabeled => continue,
        };
        let metrics = record_layer_metrics(rec)?;
        let (att, ent, n) = &mut acc[slot];
        if att.is_empty() {
            att.resize(metrics.len(), 0.0);
            ent.resize(metrics.len(), 0.0);
        } else if att.len() != metrics.len() {
            return Err(Error::Shape("records disagree on layer count".into()));
        }
        for (l, m) in metrics.iter().enumerate() {
            att[l] += m.mean_iaf;
            ent[l] += m.mean_iae;
        }
        *n += 1;
    }
    let [(mut ra, mut re, rn), (mut ha, mut he, hn)] = acc;
    if rn == 0 || hn == 0 {
        return Err(Error::DegenerateSample("need both real and hallucinated records".into()));
    }
    if ra.len() != ha.len() {
        return Err(Error::Shape("records disagree on layer count".into()));
    }
    for v in ra.iter_mut().chain(re.iter_mut()) {
        *v /= rn as f64;
    }
    for v in ha.iter_mut().chain(he.iter_mut()) {
        *v /= hn as f64;
    }
    let attention_difference = ra.iter().zip(&ha).map(|(a, b)| a - b).collect();
    let entropy_difference = re.iter().zip(&he).map(|(a, b)| a - b).collect();
    Ok(LabelSplitStats {
        real_attention: ra,
        hallucinated_attention: ha,
        real_entropy: re,
        hallucinated_entropy: he,
        attention_difference,
        entropy_difference,
        real_count: rn,
        hallucinated_count: hn,
    })
}
