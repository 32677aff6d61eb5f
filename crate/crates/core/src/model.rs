//! Seedable toy multimodal decoder.
//!
//! A pre-LayerNorm decoder-only transformer: each block adds causal multi-head
//! attention and a GELU feed-forward network to the residual stream, and the
//! output head is a final LayerNorm followed by the unembedding matrix. Image
//! tokens are ordinary vocabulary ids placed at a fixed span of the prompt.
//!
//! During a forward step only the newest query position is instrumented: its
//! per-layer attention rows are handed to an [`AttentionHook`] after softmax
//! and before they weight the value vectors.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::attention::{AttentionSnapshot, ImageSpan};
use crate::error::{Error, Result};
use crate::linalg::{dot, gelu, softmax_in_place, Matrix};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ModelConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    pub image_span: ImageSpan,
    pub max_new_tokens: usize,
    pub rng_seed: u64,
    pub init_scale: f64,
    /// Decoding stops after emitting this id, when set.
    pub end_token: Option<u32>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            num_heads: 8,
            model_dim: 64,
            ffn_dim: 128,
            vocab_size: 64,
            image_span: ImageSpan::new(1, 17),
            max_new_tokens: 16,
            rng_seed: 42,
            init_scale: 0.02,
            end_token: None,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.model_dim / self.num_heads
    }

    pub fn num_image_tokens(&self) -> usize {
        self.image_span.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.num_layers == 0 || self.num_heads == 0 || self.model_dim == 0 {
            return fail("num_layers, num_heads and model_dim must be positive");
        }
        if self.ffn_dim == 0 || self.vocab_size == 0 {
            return fail("ffn_dim and vocab_size must be positive");
        }
        if self.model_dim % self.num_heads != 0 {
            return fail("model_dim must be divisible by num_heads");
        }
        if self.image_span.is_empty() {
            return fail("image_span must satisfy start < end");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return fail("init_scale must be finite and non-negative");
        }
        if let Some(end) = self.end_token {
            if end as usize >= self.vocab_size {
                return fail("end_token outside vocabulary");
            }
        }
        Ok(())
    }
}

/// Token ids plus the location of the image tokens within them.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TokenSequence {
    pub token_ids: Vec<u32>,
    pub image_span: ImageSpan,
}

impl TokenSequence {
    pub fn new(token_ids: Vec<u32>, image_span: ImageSpan) -> Self {
        Self { token_ids, image_span }
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if let Some(&bad) = self.token_ids.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::Shape(alloc::format!("token id {bad} >= vocab size {vocab_size}")));
        }
        self.image_span.check(self.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerNormParams {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNormParams {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
        x.iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(v, (g, b))| (v - mean) * inv * g + b)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: LayerNormParams,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub ffn_norm: LayerNormParams,
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    pub w_out: Matrix,
    pub b_out: Vec<f64>,
}

/// Immutable model weights. Share freely across decode streams.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub token_embedding: Matrix,
    pub layers: Vec<LayerWeights>,
    pub final_norm: LayerNormParams,
    pub unembed: Matrix,
}

/// Residual stream of the newest position: the embedding and the output of every block.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub embedding: Vec<f64>,
    pub residuals: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    /// Query position the step was computed for.
    pub position: usize,
    pub logits: Vec<f64>,
    /// Attention rows as observed by the hook, before any intervention.
    pub snapshots: Vec<AttentionSnapshot>,
    pub hidden: HiddenState,
}

/// Receives each layer's attention rows for the current query position and
/// may rewrite them in place before they are applied to the values.
pub trait AttentionHook {
    fn begin_step(&mut self, _position: usize) {}

    fn on_attention(&mut self, snapshot: &mut AttentionSnapshot, span: ImageSpan) -> Result<()>;

    fn end_step(&mut self) {}
}

/// Hook that leaves attention untouched.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentityHook;

impl AttentionHook for IdentityHook {
    fn on_attention(&mut self, _: &mut AttentionSnapshot, _: ImageSpan) -> Result<()> {
        Ok(())
    }
}

/// Per-layer keys and values of every position processed so far.
#[derive(Debug, Clone, Default)]
pub struct KvCache {
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    tokens: Vec<u32>,
}

impl KvCache {
    pub fn new(num_layers: usize) -> Self {
        Self { keys: vec![Vec::new(); num_layers], values: vec![Vec::new(); num_layers], tokens: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn gaussian_vec(n: usize, normal: &Normal<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| normal.sample(rng)).collect()
}

fn layer_norm_params(d: usize, normal: &Normal<f64>, rng: &mut ChaCha8Rng) -> LayerNormParams {
    let gain = (0..d).map(|_| 1.0 + normal.sample(rng)).collect();
    let bias = gaussian_vec(d, normal, rng);
    LayerNormParams { gain, bias }
}

/// Sinusoidal position code added to the token embedding.
pub fn position_code(position: usize, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let pair = (i / 2) as f64;
            let angle = position as f64 / libm::pow(10_000.0, 2.0 * pair / dim as f64);
            if i % 2 == 0 {
                libm::sin(angle)
            } else {
                libm::cos(angle)
            }
        })
        .collect()
}

pub fn init_model(config: &ModelConfig) -> Result<Model> {
    config.validate()?;
    let d = config.model_dim;
    let f = config.ffn_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let normal = Normal::new(0.0, config.init_scale).map_err(|e| Error::Config(alloc::format!("{e}")))?;
    let s = config.init_scale;

    let token_embedding = Matrix::gaussian(config.vocab_size, d, s, &mut rng);
    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        let attn_norm = layer_norm_params(d, &normal, &mut rng);
        let w_q = Matrix::gaussian(d, d, s, &mut rng);
        let w_k = Matrix::gaussian(d, d, s, &mut rng);
        let w_v = Matrix::gaussian(d, d, s, &mut rng);
        let w_o = Matrix::gaussian(d, d, s, &mut rng);
        let ffn_norm = layer_norm_params(d, &normal, &mut rng);
        let w_in = Matrix::gaussian(d, f, s, &mut rng);
        let b_in = gaussian_vec(f, &normal, &mut rng);
        let w_out = Matrix::gaussian(f, d, s, &mut rng);
        let b_out = gaussian_vec(d, &normal, &mut rng);
        layers.push(LayerWeights { attn_norm, w_q, w_k, w_v, w_o, ffn_norm, w_in, b_in, w_out, b_out });
    }
    let final_norm = layer_norm_params(d, &normal, &mut rng);
    let unembed = Matrix::gaussian(d, config.vocab_size, s, &mut rng);
    Ok(Model { config: config.clone(), token_embedding, layers, final_norm, unembed })
}

impl Model {
    pub fn embed(&self, token: u32, position: usize) -> Vec<f64> {
        let pe = position_code(position, self.config.model_dim);
        self.token_embedding.row(token as usize).iter().zip(pe).map(|(e, p)| e + p).collect()
    }

    /// Final LayerNorm followed by the unembedding.
    pub fn output_logits(&self, residual: &[f64]) -> Vec<f64> {
        self.unembed.left_mul(&self.final_norm.apply(residual))
    }

    pub fn ffn(&self, layer: usize, x: &[f64]) -> Vec<f64> {
        let w = &self.layers[layer];
        let mut hidden = w.w_in.left_mul(&w.ffn_norm.apply(x));
        for (h, b) in hidden.iter_mut().zip(&w.b_in) {
            *h = gelu(*h + b);
        }
        let mut out = w.w_out.left_mul(&hidden);
        for (o, b) in out.iter_mut().zip(&w.b_out) {
            *o += b;
        }
        out
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerics(alloc::format!("{what} contains NaN or infinity")))
    }
}

/// Runs every position of `sequence` not yet in `cache` and returns the
/// logits of the last one. Earlier positions only extend the cache.
pub fn forward_step(
    model: &Model,
    sequence: &TokenSequence,
    cache: &mut KvCache,
    mut hook: Option<&mut dyn AttentionHook>,
) -> Result<StepResult> {
    let cfg = &model.config;
    if sequence.is_empty() {
        return Err(Error::Shape("empty token sequence".into()));
    }
    sequence.validate(cfg.vocab_size)?;
    if cache.keys.len() != cfg.num_layers {
        return Err(Error::Shape("cache built for a different layer count".into()));
    }
    if cache.len() >= sequence.len() || sequence.token_ids[..cache.len()] != cache.tokens[..] {
        return Err(Error::Shape("cache is not a strict prefix of the sequence".into()));
    }

    let d = cfg.model_dim;
    let heads = cfg.num_heads;
    let hd = cfg.head_dim();
    let scale = 1.0 / libm::sqrt(hd as f64);
    let last = sequence.len() - 1;
    let span = sequence.image_span;

    let mut result = None;
    for pos in cache.len()..sequence.len() {
        let token = sequence.token_ids[pos];
        let instrument = pos == last;
        if instrument {
            if let Some(h) = hook.as_deref_mut() {
                h.begin_step(pos);
            }
        }
        let mut x = model.embed(token, pos);
        let embedding = if instrument { x.clone() } else { Vec::new() };
        let mut residuals = Vec::new();
        let mut snapshots = Vec::new();
        let keys_visible = pos + 1;

        for (l, w) in model.layers.iter().enumerate() {
            let normed = w.attn_norm.apply(&x);
            let q = w.w_q.left_mul(&normed);
            cache.keys[l].extend(w.w_k.left_mul(&normed));
            cache.values[l].extend(w.w_v.left_mul(&normed));
            let keys = &cache.keys[l];
            let values = &cache.values[l];

            let mut snapshot = AttentionSnapshot::zeros(l, heads, keys_visible);
            for h in 0..heads {
                let qh = &q[h * hd..(h + 1) * hd];
                let row = snapshot.row_mut(h);
                for (k, score) in row.iter_mut().enumerate() {
                    *score = dot(qh, &keys[k * d + h * hd..k * d + (h + 1) * hd]) * scale;
                }
                softmax_in_place(row);
            }
            if instrument {
                snapshots.push(snapshot.clone());
                if let Some(h) = hook.as_deref_mut() {
                    h.on_attention(&mut snapshot, span)?;
                }
            }

            let mut mixed = vec![0.0; d];
            for h in 0..heads {
                let row = snapshot.row(h);
                let out = &mut mixed[h * hd..(h + 1) * hd];
                for (k, &a) in row.iter().enumerate() {
                    let v = &values[k * d + h * hd..k * d + (h + 1) * hd];
                    for (o, &vv) in out.iter_mut().zip(v) {
                        *o += a * vv;
                    }
                }
            }
            let attn_out = w.w_o.left_mul(&mixed);
            for (xi, a) in x.iter_mut().zip(&attn_out) {
                *xi += a;
            }
            let ffn_out = model.ffn(l, &x);
            for (xi, f) in x.iter_mut().zip(&ffn_out) {
                *xi += f;
            }
            check_finite(&x, "residual stream")?;
            if instrument {
                residuals.push(x.clone());
            }
        }
        cache.tokens.push(token);

        if instrument {
            if let Some(h) = hook.as_deref_mut() {
                h.end_step();
            }
            let logits = model.output_logits(&x);
            check_finite(&logits, "logits")?;
            result = Some(StepResult {
                position: pos,
                logits,
                snapshots,
                hidden: HiddenState { embedding, residuals },
            });
        }
    }
    Ok(result.expect("loop covers the last position"))
}

/// Index of the largest logit; ties go to the lowest token id.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decode {
    pub tokens: Vec<u32>,
    pub steps: Vec<StepResult>,
}

/// Greedy decoding for up to `max_new_tokens` tokens or until the end token.
pub fn greedy_decode(
    model: &Model,
    prompt: &TokenSequence,
    mut hook: Option<&mut dyn AttentionHook>,
) -> Result<Decode> {
    let cfg = &model.config;
    if prompt.len() < cfg.image_span.end || prompt.image_span != cfg.image_span {
        return Err(Error::Shape("prompt must contain the configured image span".into()));
    }
    let mut sequence = prompt.clone();
    let mut cache = KvCache::new(cfg.num_layers);
    let mut tokens = Vec::new();
    let mut steps = Vec::new();
    for _ in 0..cfg.max_new_tokens {
        let step_hook: Option<&mut dyn AttentionHook> = match hook.as_mut() {
            Some(h) => Some(&mut **h),
            None => None,
        };
        let step = forward_step(model, &sequence, &mut cache, step_hook)?;
        let next = argmax(&step.logits) as u32;
        steps.push(step);
        tokens.push(next);
        sequence.token_ids.push(next);
        if cfg.end_token == Some(next) {
            break;
        }
    }
    Ok(Decode { tokens, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ModelConfig {
        ModelConfig {
            num_layers: 2,
            num_heads: 2,
            model_dim: 8,
            ffn_dim: 16,
            vocab_size: 16,
            image_span: ImageSpan::new(0, 2),
            max_new_tokens: 5,
            rng_seed: 7,
            init_scale: 0.5,
            end_token: None,
        }
    }

    #[test]
    fn head_dim_is_model_dim_over_heads() {
        assert_eq!(small_config().head_dim(), 4);
    }

    #[test]
    fn rejects_indivisible_dims() {
        let cfg = ModelConfig { model_dim: 9, ..small_config() };
        assert!(matches!(init_model(&cfg), Err(Error::Config(_))));
        let cfg = ModelConfig { image_span: ImageSpan::new(3, 3), ..small_config() };
        assert!(matches!(init_model(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = init_model(&small_config()).unwrap();
        let b = init_model(&small_config()).unwrap();
        assert_eq!(a, b);
        let c = init_model(&ModelConfig { rng_seed: 8, ..small_config() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_scale_gives_uniform_attention() {
        let cfg = ModelConfig { init_scale: 0.0, ..small_config() };
        let model = init_model(&cfg).unwrap();
        let seq = TokenSequence::new(vec![1, 2, 3, 4], cfg.image_span);
        let mut cache = KvCache::new(cfg.num_layers);
        let step = forward_step(&model, &seq, &mut cache, None).unwrap();
        for snap in &step.snapshots {
            for h in 0..snap.heads() {
                assert!(snap.row(h).iter().all(|&a| (a - 0.25).abs() < 1e-15));
            }
        }
    }

    #[test]
    fn rows_are_probability_vectors() {
        let cfg = small_config();
        let model = init_model(&cfg).unwrap();
        let seq = TokenSequence::new(vec![3, 1, 4, 1, 5], cfg.image_span);
        let step = forward_step(&model, &seq, &mut KvCache::new(2), None).unwrap();
        assert_eq!(step.snapshots.len(), cfg.num_layers);
        for snap in &step.snapshots {
            assert_eq!(snap.keys(), 5);
            for h in 0..snap.heads() {
                assert!((snap.row_sum(h) - 1.0).abs() < 1e-12);
                assert!(snap.row(h).iter().all(|&a| a >= 0.0));
            }
        }
    }

    #[test]
    fn identity_hook_is_bit_identical() {
        let cfg = small_config();
        let model = init_model(&cfg).unwrap();
        let seq = TokenSequence::new(vec![3, 1, 4], cfg.image_span);
        let plain = forward_step(&model, &seq, &mut KvCache::new(2), None).unwrap();
        let mut hook = IdentityHook;
        let hooked = forward_step(&model, &seq, &mut KvCache::new(2), Some(&mut hook)).unwrap();
        assert_eq!(plain, hooked);
    }

    #[test]
    fn stale_cache_is_rejected() {
        let cfg = small_config();
        let model = init_model(&cfg).unwrap();
        let seq = TokenSequence::new(vec![3, 1, 4], cfg.image_span);
        let mut cache = KvCache::new(2);
        forward_step(&model, &seq, &mut cache, None).unwrap();
        assert!(forward_step(&model, &seq, &mut cache, None).is_err());
        let other = TokenSequence::new(vec![2, 1, 4, 5], cfg.image_span);
        assert!(forward_step(&model, &other, &mut cache, None).is_err());
    }

    #[test]
    fn out_of_vocab_token_is_a_shape_error() {
        let cfg = small_config();
        let model = init_model(&cfg).unwrap();
        let seq = TokenSequence::new(vec![3, 99, 4], cfg.image_span);
        assert!(matches!(forward_step(&model, &seq, &mut KvCache::new(2), None), Err(Error::Shape(_))));
    }

    #[test]
    fn decode_respects_budget_and_is_deterministic() {
        let cfg = small_config();
        let model = init_model(&cfg).unwrap();
        let prompt = TokenSequence::new(vec![3, 1, 4], cfg.image_span);
        let a = greedy_decode(&model, &prompt, None).unwrap();
        let b = greedy_decode(&model, &prompt, None).unwrap();
        assert_eq!(a.tokens.len(), 5);
        assert_eq!(a.steps.len(), 5);
        assert_eq!(a, b);

        let none = init_model(&ModelConfig { max_new_tokens: 0, ..cfg }).unwrap();
        assert!(greedy_decode(&none, &prompt, None).unwrap().tokens.is_empty());
    }

    #[test]
    fn decode_stops_at_end_token() {
        let cfg = small_config();
        let model = init_model(&cfg).unwrap();
        let prompt = TokenSequence::new(vec![3, 1, 4], cfg.image_span);
        let first = greedy_decode(&model, &prompt, None).unwrap().tokens[0];
        let stopping = init_model(&ModelConfig { end_token: Some(first), ..cfg }).unwrap();
        assert_eq!(greedy_decode(&stopping, &prompt, None).unwrap().tokens, vec![first]);
    }

    #[test]
    fn argmax_prefers_lowest_id_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
