use std::time::Instant;

use dleaf_core::engine::{DleafConfig, DleafHook};
use dleaf_core::eval::{summarize_throughput, SyntheticScene, ThroughputRun, ThroughputSummary};
use dleaf_core::model::{greedy_decode, init_model, AttentionHook, Model, ModelConfig, TokenSequence};
use serde::Serialize;

use super::run::PROMPT_TEXT;
use crate::error::LabResult;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThroughputParams {
    pub repetitions: usize,
    pub tokens: usize,
}

impl Default for ThroughputParams {
    fn default() -> Self {
        Self { repetitions: 5, tokens: 128 }
    }
}

/// Wall-clock measurements; these differ between runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurements {
    pub baseline: Vec<ThroughputRun>,
    pub hooked: Vec<ThroughputRun>,
    pub summary: ThroughputSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub params: ThroughputParams,
    pub dleaf: DleafConfig,
    pub generated_tokens: usize,
    pub measurements: Measurements,
}

fn timed_decode(model: &Model, prompt: &TokenSequence, config: Option<&DleafConfig>) -> LabResult<ThroughputRun> {
    let mut hook = config.map(|c| DleafHook::new(c.clone())).transpose()?;
    let start = Instant::now();
    let decode = greedy_decode(model, prompt, hook.as_mut().map(|h| h as &mut dyn AttentionHook))?;
    let seconds = start.elapsed().as_secs_f64();
    Ok(ThroughputRun { tokens: decode.tokens.len(), seconds })
}

/// Greedy decoding with and without the hook, interleaved, after one warmup
/// run of each. The end token is disabled so every run has the same length.
pub fn measure(model_config: &ModelConfig, dleaf: &DleafConfig, params: &ThroughputParams) -> LabResult<ThroughputReport> {
    let config = ModelConfig { max_new_tokens: params.tokens, end_token: None, ..model_config.clone() };
    config.validate()?;
    dleaf.validate_for(config.num_heads)?;
    let model = init_model(&config)?;
    let prompt = SyntheticScene::default().prompt(config.image_span, config.vocab_size, &PROMPT_TEXT.map(|t| t % config.vocab_size as u32));

    timed_decode(&model, &prompt, None)?;
    timed_decode(&model, &prompt, Some(dleaf))?;
    let mut baseline = Vec::with_capacity(params.repetitions);
    let mut hooked = Vec::with_capacity(params.repetitions);
    for _ in 0..params.repetitions {
        baseline.push(timed_decode(&model, &prompt, None)?);
        hooked.push(timed_decode(&model, &prompt, Some(dleaf))?);
    }
    let summary = summarize_throughput(&baseline, &hooked)?;
    Ok(ThroughputReport {
        params: *params,
        dleaf: dleaf.clone(),
        generated_tokens: params.tokens,
        measurements: Measurements { baseline, hooked, summary },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dleaf_core::Error;

    #[test]
    fn too_few_tokens_is_a_measurement_error() {
        let err = measure(&ModelConfig::default(), &DleafConfig::default(), &ThroughputParams { repetitions: 5, tokens: 20 })
            .unwrap_err();
        assert!(matches!(err, crate::error::LabError::Core(Error::Measurement(_))), "{err}");
    }
}
