//! The logistic output model, the DPO loss and its gradient at the reference
//! point, plus a small attention layer showing how head fusion moves a
//! post-FFN feature toward a target.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{AttentionSnapshot, ImageSpan};
use crate::engine::{fuse_heads, select_heads};
use crate::error::{Error, Result};
use crate::linalg::{dot, gelu, norm, softmax_in_place, Matrix};
use crate::metrics::iaf;

/// `π_W(y | x) ∝ exp(o_yᵀ W x)` with one output vector per vocabulary item.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogisticModel {
    /// `d × d`.
    pub weights: Matrix,
    /// `V × d`, row `y` is `o_y`.
    pub outputs: Matrix,
}

impl LogisticModel {
    pub fn new(weights: Matrix, outputs: Matrix) -> Result<Self> {
        if weights.rows != weights.cols || outputs.cols != weights.rows {
            return Err(Error::Shape(alloc::format!(
                "weights {}x{} incompatible with outputs {}x{}",
                weights.rows,
                weights.cols,
                outputs.rows,
                outputs.cols
            )));
        }
        if weights.data.iter().chain(&outputs.data).any(|v| !v.is_finite()) {
            return Err(Error::Numerics("logistic model has non-finite entries".into()));
        }
        Ok(Self { weights, outputs })
    }

    pub fn dim(&self) -> usize {
        self.weights.rows
    }

    pub fn vocab_size(&self) -> usize {
        self.outputs.rows
    }

    pub fn with_weights(&self, weights: Matrix) -> Self {
        Self { weights, outputs: self.outputs.clone() }
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        let wx = self.weights.right_mul(x);
        self.outputs.right_mul(&wx)
    }

    pub fn probabilities(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::Shape(alloc::format!("context has {} entries, model dim {}", x.len(), self.dim())));
        }
        let mut p = self.logits(x);
        softmax_in_place(&mut p);
        Ok(p)
    }

    pub fn log_prob(&self, x: &[f64], y: usize) -> Result<f64> {
        if y >= self.vocab_size() {
            return Err(Error::Shape(alloc::format!("token {y} outside vocabulary {}", self.vocab_size())));
        }
        if x.len() != self.dim() {
            return Err(Error::Shape(alloc::format!("context has {} entries, model dim {}", x.len(), self.dim())));
        }
        let logits = self.logits(x);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + libm::log(logits.iter().map(|l| libm::exp(l - max)).sum::<f64>());
        Ok(logits[y] - lse)
    }

    /// `E_{π(·|x)}[o]`.
    pub fn expected_output(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.probabilities(x)?;
        Ok(self.outputs.left_mul(&p))
    }
}

pub fn logistic_prob(model: &LogisticModel, x: &[f64], y: usize) -> Result<f64> {
    model.log_prob(x, y).map(libm::exp)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PreferencePair {
    pub context_preferred: Vec<f64>,
    pub context_dispreferred: Vec<f64>,
    pub preferred: usize,
    pub dispreferred: usize,
}

impl PreferencePair {
    pub fn shared(context: Vec<f64>, preferred: usize, dispreferred: usize) -> Self {
        Self { context_dispreferred: context.clone(), context_preferred: context, preferred, dispreferred }
    }

    pub fn validate(&self) -> Result<()> {
        if self.preferred == self.dispreferred {
            return Err(Error::Config("preferred and dispreferred tokens must differ".into()));
        }
        Ok(())
    }
}

fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -libm::log1p(libm::exp(-z))
    } else {
        z - libm::log1p(libm::exp(z))
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

fn check_pairs(pairs: &[PreferencePair], beta: f64) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::Config(alloc::format!("DPO temperature must be positive, got {beta}")));
    }
    pairs.iter().try_for_each(PreferencePair::validate)
}

fn margin(policy: &LogisticModel, reference: &LogisticModel, pair: &PreferencePair, beta: f64) -> Result<f64> {
    let dp = policy.log_prob(&pair.context_preferred, pair.preferred)?
        - policy.log_prob(&pair.context_dispreferred, pair.dispreferred)?;
    let dr = reference.log_prob(&pair.context_preferred, pair.preferred)?
        - reference.log_prob(&pair.context_dispreferred, pair.dispreferred)?;
    Ok(beta * (dp - dr))
}

/// `-mean log σ(β [Δ log π_θ - Δ log π_ref])` over pairs.
pub fn dpo_loss(policy: &LogisticModel, reference: &LogisticModel, pairs: &[PreferencePair], beta: f64) -> Result<f64> {
    check_pairs(pairs, beta)?;
    let mut total = 0.0;
    for pair in pairs {
        total -= log_sigmoid(margin(policy, reference, pair, beta)?);
    }
    Ok(total / pairs.len() as f64)
}

/// Gradient of [`dpo_loss`] with respect to the policy weights at any point.
pub fn dpo_grad(policy: &LogisticModel, reference: &LogisticModel, pairs: &[PreferencePair], beta: f64) -> Result<Matrix> {
    check_pairs(pairs, beta)?;
    let d = policy.dim();
    let mut grad = Matrix::zeros(d, d);
    let n = pairs.len() as f64;
    for pair in pairs {
        let weight = -beta * sigmoid(-margin(policy, reference, pair, beta)?) / n;
        let xp = &pair.context_preferred;
        let xn = &pair.context_dispreferred;
        let ep = policy.expected_output(xp)?;
        let en = policy.expected_output(xn)?;
        let op = policy.outputs.row(pair.preferred);
        let on = policy.outputs.row(pair.dispreferred);
        let dp: Vec<f64> = op.iter().zip(&ep).map(|(o, e)| o - e).collect();
        let dn: Vec<f64> = on.iter().zip(&en).map(|(o, e)| o - e).collect();
        grad.add_outer(weight, &dp, xp);
        grad.add_outer(-weight, &dn, xn);
    }
    Ok(grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum GradientMode {
    /// `-(β/N) Σ (o⁺ x⁺ᵀ - o⁻ x⁻ᵀ)`: no normalizer terms and no `σ'(0)` factor.
    Simplified,
    /// The true gradient at `W = W_ref`.
    Exact,
}

/// DPO gradient at the reference point.
pub fn analytic_grad_init(
    reference: &LogisticModel,
    pairs: &[PreferencePair],
    beta: f64,
    mode: GradientMode,
) -> Result<Matrix> {
    match mode {
        GradientMode::Exact => dpo_grad(reference, reference, pairs, beta),
        GradientMode::Simplified => {
            check_pairs(pairs, beta)?;
            let d = reference.dim();
            let mut grad = Matrix::zeros(d, d);
            let scale = -beta / pairs.len() as f64;
            for pair in pairs {
                grad.add_outer(scale, reference.outputs.row(pair.preferred), &pair.context_preferred);
                grad.add_outer(-scale, reference.outputs.row(pair.dispreferred), &pair.context_dispreferred);
            }
            Ok(grad)
        }
    }
}

/// Central-difference gradient of `loss` at `point`.
pub fn fd_grad<F>(loss: F, point: &Matrix, eps: f64) -> Result<Matrix>
where
    F: Fn(&Matrix) -> Result<f64>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(alloc::format!("finite-difference step must be positive, got {eps}")));
    }
    let mut grad = Matrix::zeros(point.rows, point.cols);
    let mut probe = point.clone();
    for i in 0..point.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + eps;
        let up = loss(&probe)?;
        probe.data[i] = orig - eps;
        let down = loss(&probe)?;
        probe.data[i] = orig;
        grad.data[i] = (up - down) / (2.0 * eps);
    }
    Ok(grad)
}

pub fn relative_frobenius_error(estimate: &Matrix, truth: &Matrix) -> f64 {
    let diff = estimate.sub(truth).frobenius();
    let scale = truth.frobenius();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// A seeded instance with Gaussian weights, outputs and contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct DpoInstance {
    pub reference: LogisticModel,
    pub pairs: Vec<PreferencePair>,
    pub beta: f64,
}

impl DpoInstance {
    pub fn random(seed: u64, dim: usize, vocab: usize, num_pairs: usize, shared_context: bool, beta: f64) -> Result<Self> {
        if vocab < 2 || dim == 0 || num_pairs == 0 {
            return Err(Error::Config("instance needs dim ≥ 1, vocab ≥ 2 and at least one pair".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = Matrix::gaussian(dim, dim, 1.0 / libm::sqrt(dim as f64), &mut rng);
        let outputs = Matrix::gaussian(vocab, dim, 1.0, &mut rng);
        let reference = LogisticModel::new(weights, outputs)?;
        let pairs = (0..num_pairs)
            .map(|_| {
                let xp = Matrix::gaussian(1, dim, 1.0, &mut rng).data;
                let xn = if shared_context { xp.clone() } else { Matrix::gaussian(1, dim, 1.0, &mut rng).data };
                let preferred = rng.random_range(0..vocab);
                let mut dispreferred = rng.random_range(0..vocab - 1);
                if dispreferred >= preferred {
                    dispreferred += 1;
                }
                PreferencePair { context_preferred: xp, context_dispreferred: xn, preferred, dispreferred }
            })
            .collect();
        Ok(Self { reference, pairs, beta })
    }

    pub fn loss_at(&self, weights: &Matrix) -> Result<f64> {
        dpo_loss(&self.reference.with_weights(weights.clone()), &self.reference, &self.pairs, self.beta)
    }
}

/// One attention layer followed by a residual GELU FFN, used to show that
/// fusing heads toward the best head moves the layer output toward the
/// output obtained when every head attends like the best head.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGapInstance {
    pub attention: AttentionSnapshot,
    pub span: ImageSpan,
    /// `keys × d` value vectors shared by all heads.
    pub values: Matrix,
    pub ffn_in: Matrix,
    pub ffn_out: Matrix,
    pub heads_to_correct: usize,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureGapSeries {
    pub gammas: Vec<f64>,
    pub gaps: Vec<f64>,
}

impl FeatureGapSeries {
    pub fn is_non_increasing(&self) -> bool {
        self.gaps.windows(2).all(|w| w[1] <= w[0])
    }
}

impl FeatureGapInstance {
    /// Four heads over one text key and six image keys. The last head holds
    /// most of the image mass on the first three image keys; the others are
    /// diffuse and text-heavy. All non-best heads are corrected.
    pub fn constructed(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (heads, image, dim) = (4usize, 6usize, 8usize);
        let keys = image + 1;
        let span = ImageSpan::new(1, keys);
        let mut rows = Vec::with_capacity(heads);
        for h in 0..heads {
            let mut row = vec![0.0; keys];
            if h == heads - 1 {
                row[0] = 0.1;
                for (k, slot) in row[1..].iter_mut().enumerate() {
                    *slot = if k < 3 { 0.28 } else { 0.02 };
                }
            } else {
                let mass = rng.random_range(0.2..0.4);
                row[0] = 1.0 - mass;
                let raw: Vec<f64> = (0..image).map(|_| rng.random_range(0.5..1.5)).collect();
                let total: f64 = raw.iter().sum();
                for (slot, r) in row[1..].iter_mut().zip(&raw) {
                    *slot = mass * r / total;
                }
            }
            rows.push(row);
        }
        let attention = AttentionSnapshot::from_rows(0, &rows)?;
        Ok(Self {
            attention,
            span,
            values: Matrix::gaussian(keys, dim, 1.0, &mut rng),
            ffn_in: Matrix::gaussian(2 * dim, dim, 0.1, &mut rng),
            ffn_out: Matrix::gaussian(dim, 2 * dim, 0.1, &mut rng),
            heads_to_correct: heads - 1,
        })
    }

    fn layer_output(&self, attention: &AttentionSnapshot) -> Vec<f64> {
        let heads = attention.heads();
        let mut mixed = vec![0.0; self.values.cols];
        for h in 0..heads {
            let head_out = self.values.left_mul(attention.row(h));
            for (m, v) in mixed.iter_mut().zip(head_out) {
                *m += v / heads as f64;
            }
        }
        let hidden: Vec<f64> = self.ffn_in.right_mul(&mixed).into_iter().map(gelu).collect();
        let delta = self.ffn_out.right_mul(&hidden);
        mixed.iter().zip(delta).map(|(m, d)| m + d).collect()
    }

    /// Post-FFN output after fusing with the given γ.
    pub fn output(&self, gamma: f64) -> Result<Vec<f64>> {
        let masses: Vec<f64> =
            (0..self.attention.heads()).map(|h| iaf(&self.attention, h, self.span)).collect::<Result<_>>()?;
        let selection = select_heads(&masses, self.heads_to_correct)?;
        let mut fused = self.attention.clone();
        fuse_heads(&mut fused, &selection.corrected, selection.best, gamma, self.span, false)?;
        Ok(self.layer_output(&fused))
    }

    /// The output when every corrected head is replaced by the best head.
    pub fn target(&self) -> Result<Vec<f64>> {
        self.output(1.0)
    }

    pub fn gap_series(&self, gammas: &[f64]) -> Result<FeatureGapSeries> {
        let target = self.target()?;
        let gaps = gammas
            .iter()
            .map(|&g| {
                let out = self.output(g)?;
                let diff: Vec<f64> = out.iter().zip(&target).map(|(a, b)| a - b).collect();
                Ok(norm(&diff))
            })
            .collect::<Result<_>>()?;
        Ok(FeatureGapSeries { gammas: gammas.to_vec(), gaps })
    }
}

/// `oᵀ W x` for a single output vector, handy for scalar cross-checks.
pub fn bilinear_score(weights: &Matrix, output: &[f64], x: &[f64]) -> f64 {
    dot(output, &weights.right_mul(x))
}
