use std::collections::BTreeSet;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{KvCache, Model, ModelError};
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub max_new_tokens: usize,
    /// 0 selects the argmax at every step.
    pub temperature: f32,
    pub stop_token_ids: BTreeSet<TokenId>,
    /// Seeds the sampler; unused at temperature 0.
    pub seed: u64,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            max_new_tokens: 256,
            temperature: 0.0,
            stop_token_ids: BTreeSet::new(),
            seed: 0,
        }
    }
}

impl GenParams {
    pub fn greedy(max_new_tokens: usize) -> Self {
        GenParams {
            max_new_tokens,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.max_new_tokens == 0 {
            return Err(ModelError::InvalidParams("max_new_tokens must be at least 1".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(ModelError::InvalidParams(format!("temperature {} must be finite and >= 0", self.temperature)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    /// A stop token was sampled. It is not part of the output.
    StopToken(TokenId),
    MaxTokens,
    /// The cache filled up before any other stop condition.
    ContextFull,
    /// The cancel flag was raised between steps.
    Cancelled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    pub stop: StopReason,
    pub prompt_tokens: usize,
}

impl Generation {
    pub fn truncated(&self) -> bool {
        self.stop == StopReason::ContextFull
    }
}

/// Greedy: lowest id among the maxima. Otherwise a categorical draw from
/// `softmax(logits / temperature)`.
pub fn sample(logits: &[f32], params: &GenParams, rng: &mut impl Rng) -> TokenId {
    if params.temperature == 0.0 {
        return argmax(logits);
    }
    let t = params.temperature as f64;
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let weights: Vec<f64> = logits.iter().map(|&l| ((l as f64 - max) / t).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i as TokenId;
        }
        u -= w;
    }
    // rounding left u past the end: take the last nonzero weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0) as TokenId
}

pub fn argmax(logits: &[f32]) -> TokenId {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best as TokenId
}

/// Generates with a fresh cache sized to the model's context window.
pub fn generate(
    model: &Model,
    prompt: &[TokenId],
    params: &GenParams,
    sink: &mut dyn FnMut(TokenId),
) -> Result<Generation, ModelError> {
    let mut cache = KvCache::new(&model.config);
    generate_with_cache(model, &mut cache, prompt, params, sink)
}

/// Clears `cache`, feeds the prompt and samples until a stop token,
/// `max_new_tokens` or a full cache. `sink` sees each kept token in order.
pub fn generate_with_cache(
    model: &Model,
    cache: &mut KvCache,
    prompt: &[TokenId],
    params: &GenParams,
    sink: &mut dyn FnMut(TokenId),
) -> Result<Generation, ModelError> {
    generate_cancellable(model, cache, prompt, params, &AtomicBool::new(false), sink)
}

/// [`generate_with_cache`] that also stops, with [`StopReason::Cancelled`],
/// once `cancel` is set. The flag is polled before every forward pass.
pub fn generate_cancellable(
    model: &Model,
    cache: &mut KvCache,
    prompt: &[TokenId],
    params: &GenParams,
    cancel: &AtomicBool,
    sink: &mut dyn FnMut(TokenId),
) -> Result<Generation, ModelError> {
    params.validate()?;
    if prompt.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    cache.clear();
    if prompt.len() >= cache.capacity() {
        return Err(ModelError::ContextOverflow {
            filled: 0,
            requested: prompt.len(),
            capacity: cache.capacity(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    if cancel.load(Ordering::Relaxed) {
        return Ok(Generation {
            tokens: Vec::new(),
            stop: StopReason::Cancelled,
            prompt_tokens: prompt.len(),
        });
    }
    let mut logits = model.forward(prompt, cache)?;
    let mut out = Vec::new();
    let stop = loop {
        let tok = sample(&logits, params, &mut rng);
        if params.stop_token_ids.contains(&tok) {
            break StopReason::StopToken(tok);
        }
        out.push(tok);
        sink(tok);
        if out.len() >= params.max_new_tokens {
            break StopReason::MaxTokens;
        }
        if cache.remaining() == 0 {
            break StopReason::ContextFull;
        }
        if cancel.load(Ordering::Relaxed) {
            break StopReason::Cancelled;
        }
        logits = model.forward(&[tok], cache)?;
    };
    Ok(Generation {
        tokens: out,
        stop,
        prompt_tokens: prompt.len(),
    })
}
