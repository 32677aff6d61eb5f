//! Synthetic attention traces with planted low-image-attention layers.
//!
//! Normal layers focus on the scene's object tokens with a sharpness that
//! grows with depth, so their LIAE decreases layer by layer. A
//! hallucination-prone step has one or more anomalous layers where every head
//! spreads its attention almost uniformly over the image and all heads but
//! one put little mass there. The oracle reads the mean image mass of the
//! heads D-LEAF is allowed to correct.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionSnapshot, ImageSpan};
use crate::engine::{apply_to_layers, select_heads, DleafConfig, LayerWindow, StepLog};
use crate::error::{Error, Result};
use crate::metrics::iaf;
use crate::model::TokenSequence;
use crate::trace::{Label, TraceRecord};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SyntheticScene {
    pub present_objects: Vec<u32>,
    /// Hallucination threshold on aggregate image mass.
    pub threshold: f64,
}

impl Default for SyntheticScene {
    fn default() -> Self {
        Self { present_objects: alloc::vec![3, 11, 19], threshold: 0.2 }
    }
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        if self.present_objects.is_empty() {
            return Err(Error::Config("scene needs at least one present object".into()));
        }
        if !self.threshold.is_finite() {
            return Err(Error::Config("scene threshold must be finite".into()));
        }
        Ok(())
    }

    /// Image positions (relative to the span start) owned by present objects.
    pub fn focus_positions(&self, num_image_tokens: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .present_objects
            .iter()
            .map(|&o| (o as usize).wrapping_mul(7) % num_image_tokens)
            .collect();
        set.into_iter().collect()
    }

    /// Token id for image position `n`, derived from the object covering it.
    pub fn image_token(&self, n: usize, vocab_size: usize) -> u32 {
        let obj = self.present_objects[n % self.present_objects.len()] as u64;
        let mixed = obj.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (n as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        (mixed % vocab_size as u64) as u32
    }

    /// Prompt for the toy model: one leading token, the image tokens, then `text` tokens.
    pub fn prompt(&self, span: ImageSpan, vocab_size: usize, text: &[u32]) -> TokenSequence {
        let mut token_ids = alloc::vec![0u32; span.start];
        token_ids.extend((0..span.len()).map(|n| self.image_token(n, vocab_size)));
        token_ids.extend_from_slice(text);
        TokenSequence { token_ids, image_span: span }
    }
}

/// Shape and mix of a generated trace set.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantedSpec {
    pub steps: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub num_image_tokens: usize,
    pub text_keys: usize,
    pub prone_fraction: f64,
    /// Layers eligible to receive an anomaly.
    pub first_anomalous_layer: usize,
    pub last_anomalous_layer: usize,
    pub max_anomalous_layers: usize,
}

impl Default for PlantedSpec {
    fn default() -> Self {
        Self {
            steps: 500,
            num_layers: 32,
            num_heads: 16,
            num_image_tokens: 24,
            text_keys: 8,
            prone_fraction: 0.4,
            first_anomalous_layer: 1,
            last_anomalous_layer: 25,
            max_anomalous_layers: 2,
        }
    }
}

impl PlantedSpec {
    pub fn span(&self) -> ImageSpan {
        ImageSpan::new(1, 1 + self.num_image_tokens)
    }

    pub fn keys(&self) -> usize {
        1 + self.num_image_tokens + self.text_keys
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads < 2 || self.num_layers == 0 || self.num_image_tokens < 2 || self.steps == 0 {
            return Err(Error::Config("planted spec needs ≥2 heads, ≥1 layer, ≥2 image tokens, ≥1 step".into()));
        }
        if self.first_anomalous_layer == 0
            || self.last_anomalous_layer >= self.num_layers
            || self.first_anomalous_layer > self.last_anomalous_layer
        {
            return Err(Error::Config("anomalous layer range must lie in [1, num_layers)".into()));
        }
        if !(0.0..=1.0).contains(&self.prone_fraction) {
            return Err(Error::Config("prone_fraction must lie in [0, 1]".into()));
        }
        if self.max_anomalous_layers == 0 {
            return Err(Error::Config("max_anomalous_layers must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedStep {
    pub snapshots: Vec<AttentionSnapshot>,
    pub anomalous_layers: Vec<usize>,
}

impl PlantedStep {
    pub fn is_prone(&self) -> bool {
        !self.anomalous_layers.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectionScore {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
}

impl DetectionScore {
    pub fn precision(&self) -> f64 {
        let flagged = self.true_positive + self.false_positive;
        if flagged == 0 {
            1.0
        } else {
            self.true_positive as f64 / flagged as f64
        }
    }

    pub fn recall(&self) -> f64 {
        let planted = self.true_positive + self.false_negative;
        if planted == 0 {
            1.0
        } else {
            self.true_positive as f64 / planted as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedOutcome {
    pub hallucinated_before: usize,
    pub hallucinated_after: usize,
    pub detection: DetectionScore,
    pub logs: Vec<StepLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTask {
    pub scene: SyntheticScene,
    pub spec: PlantedSpec,
    pub seed: u64,
    pub steps: Vec<PlantedStep>,
}

fn fill_row(
    rng: &mut ChaCha8Rng,
    row: &mut [f64],
    span: ImageSpan,
    image_mass: f64,
    image_weights: &[f64],
    jitter: f64,
) {
    let image_total: f64 = image_weights.iter().sum();
    let others: Vec<f64> = (0..row.len() - span.len()).map(|_| rng.random_range(0.5..1.5)).collect();
    let other_total: f64 = others.iter().sum();
    let mut o = others.iter();
    for (k, slot) in row.iter_mut().enumerate() {
        *slot = if span.contains(k) {
            let w = image_weights[k - span.start] * rng.random_range(1.0 - jitter..1.0 + jitter);
            image_mass * w / image_total
        } else {
            (1.0 - image_mass) * o.next().expect("non-span key") / other_total
        };
    }
    // Jitter moves the image total; rescale so the span carries exactly `image_mass`.
    let span_sum: f64 = row[span.start..span.end].iter().sum();
    for v in &mut row[span.start..span.end] {
        *v *= image_mass / span_sum;
    }
}

impl PlantedTask {
    pub fn generate(scene: SyntheticScene, spec: PlantedSpec, seed: u64) -> Result<Self> {
        scene.validate()?;
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let span = spec.span();
        let focus = scene.focus_positions(spec.num_image_tokens);
        let good_heads = (spec.num_heads / 4).max(1);
        let eligible = spec.last_anomalous_layer - spec.first_anomalous_layer + 1;

        let mut steps = Vec::with_capacity(spec.steps);
        for _ in 0..spec.steps {
            let prone = rng.random_bool(spec.prone_fraction);
            let mut anomalous = Vec::new();
            if prone {
                let count = rng.random_range(1..=spec.max_anomalous_layers.min(eligible));
                anomalous = sample(&mut rng, eligible, count)
                    .into_iter()
                    .map(|i| spec.first_anomalous_layer + i)
                    .collect();
                anomalous.sort_unstable();
            }

            let mut snapshots = Vec::with_capacity(spec.num_layers);
            for layer in 0..spec.num_layers {
                let mut snap = AttentionSnapshot::zeros(layer, spec.num_heads, spec.keys());
                if anomalous.contains(&layer) {
                    let donor = rng.random_range(0..spec.num_heads);
                    let flat = alloc::vec![1.0; spec.num_image_tokens];
                    for h in 0..spec.num_heads {
                        let mass = if h == donor { rng.random_range(0.6..0.9) } else { rng.random_range(0.04..0.14) };
                        fill_row(&mut rng, snap.row_mut(h), span, mass, &flat, 0.15);
                    }
                } else {
                    let sharpness = 1.0 + layer as f64;
                    let peaked: Vec<f64> = (0..spec.num_image_tokens)
                        .map(|n| if focus.contains(&n) { sharpness } else { 1.0 })
                        .collect();
                    let good: BTreeSet<usize> = sample(&mut rng, spec.num_heads, good_heads).into_iter().collect();
                    for h in 0..spec.num_heads {
                        let mass = if good.contains(&h) { rng.random_range(0.6..0.85) } else { rng.random_range(0.25..0.45) };
                        fill_row(&mut rng, snap.row_mut(h), span, mass, &peaked, 0.02);
                    }
                }
                snapshots.push(snap);
            }
            steps.push(PlantedStep { snapshots, anomalous_layers: anomalous });
        }
        Ok(Self { scene, spec, seed, steps })
    }

    /// Minimum over anomaly-eligible layers of the mean image mass of every
    /// head except the layer's highest-IAF head.
    pub fn aggregate_mass(&self, snapshots: &[AttentionSnapshot]) -> Result<f64> {
        let span = self.spec.span();
        let mut aggregate = f64::INFINITY;
        for snap in &snapshots[self.spec.first_anomalous_layer..=self.spec.last_anomalous_layer] {
            let masses: Vec<f64> = (0..snap.heads()).map(|h| iaf(snap, h, span)).collect::<Result<_>>()?;
            let best = select_heads(&masses, 0)?.best;
            let eligible: f64 = masses.iter().enumerate().filter(|&(h, _)| h != best).map(|(_, m)| m).sum();
            aggregate = aggregate.min(eligible / (masses.len() - 1) as f64);
        }
        Ok(aggregate)
    }

    /// The oracle: a step is hallucinated iff its aggregate mass is below τ.
    pub fn is_hallucinated(&self, snapshots: &[AttentionSnapshot]) -> Result<bool> {
        Ok(self.aggregate_mass(snapshots)? < self.scene.threshold)
    }

    pub fn oracle_labels(&self) -> Result<Vec<Label>> {
        self.steps
            .iter()
            .map(|s| {
                Ok(if self.is_hallucinated(&s.snapshots)? { Label::Hallucinated } else { Label::Real })
            })
            .collect()
    }

    /// Pre-intervention traces labeled by the oracle.
    pub fn trace_records(&self) -> Result<Vec<TraceRecord>> {
        let labels = self.oracle_labels()?;
        self.steps
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (step, label))| {
                let mut rec = TraceRecord::from_snapshots(i, 0, &step.snapshots, self.spec.span())?;
                rec.label = label;
                Ok(rec)
            })
            .collect()
    }

    /// Runs the oracle with and without the intervention and scores layer detection.
    pub fn evaluate(&self, config: &DleafConfig) -> Result<PlantedOutcome> {
        config.validate_for(self.spec.num_heads)?;
        let span = self.spec.span();
        let mut outcome = PlantedOutcome {
            hallucinated_before: 0,
            hallucinated_after: 0,
            detection: DetectionScore::default(),
            logs: Vec::with_capacity(self.steps.len()),
        };
        for (i, step) in self.steps.iter().enumerate() {
            if self.is_hallucinated(&step.snapshots)? {
                outcome.hallucinated_before += 1;
            }
            let mut corrected = step.snapshots.clone();
            let log = apply_to_layers(config, &mut corrected, span, i)?;
            if self.is_hallucinated(&corrected)? {
                outcome.hallucinated_after += 1;
            }
            let flagged = log.flagged_layers();
            let planted: Vec<usize> =
                step.anomalous_layers.iter().copied().filter(|&l| config.window.contains(l)).collect();
            let hits = flagged.iter().filter(|l| planted.contains(l)).count();
            outcome.detection.true_positive += hits;
            outcome.detection.false_positive += flagged.len() - hits;
            outcome.detection.false_negative += planted.len() - hits;
            outcome.logs.push(log);
        }
        Ok(outcome)
    }

    /// Post-intervention hallucination counts, one per γ.
    pub fn gamma_sweep(&self, base: &DleafConfig, gammas: &[f64]) -> Result<Vec<usize>> {
        gammas
            .iter()
            .map(|&gamma| {
                let config = DleafConfig { gamma, ..base.clone() };
                Ok(self.evaluate(&config)?.hallucinated_after)
            })
            .collect()
    }
}

impl LayerWindow {
    /// Window covering exactly the layers a planted spec may perturb.
    pub fn planted(spec: &PlantedSpec) -> Self {
        LayerWindow::Range { first: spec.first_anomalous_layer, last: spec.last_anomalous_layer }
    }
}
