//! Source sentence to translation: normalize, render the chat prompt, encode,
//! generate with streaming, decode and clean up.

mod speech;
mod template;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::gguf::GgufFile;
use crate::model::{generate_cancellable, load_model, GenParams, KvCache, Model, ModelError, StopReason};
use crate::tokenizer::{TokenId, TokenizerError, Vocab};

pub use speech::{SpeechAdapter, SpeechCapabilities, SpeechError};
pub use template::{
    PromptConfig, PromptTemplate, RenderedPrompt, TemplateSource, DEFAULT_SYSTEM_EN_TO_VI, DEFAULT_SYSTEM_VI_TO_EN,
    TINYLLAMA_CHAT_TEMPLATE,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input is empty")]
    EmptyInput,
    #[error("prompt of {prompt_tokens} tokens does not fit the context window of {context_len}")]
    ContextOverflow { prompt_tokens: usize, context_len: usize },
    #[error("translation cancelled")]
    Cancelled,
    #[error("chat template: {0}")]
    Template(String),
    #[error("speech adapter: {0}")]
    Speech(#[from] SpeechError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "vi-en")]
    ViToEn,
    #[serde(rename = "en-vi")]
    EnToVi,
}

impl Direction {
    pub fn source_language(self) -> &'static str {
        match self {
            Direction::ViToEn => "Vietnamese",
            Direction::EnToVi => "English",
        }
    }

    pub fn target_language(self) -> &'static str {
        match self {
            Direction::ViToEn => "English",
            Direction::EnToVi => "Vietnamese",
        }
    }

    pub fn reversed(self) -> Self {
        match self {
            Direction::ViToEn => Direction::EnToVi,
            Direction::EnToVi => Direction::ViToEn,
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Direction::ViToEn => "vi-en",
            Direction::EnToVi => "en-vi",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "vi-en" | "vi2en" | "vitoen" => Ok(Direction::ViToEn),
            "en-vi" | "en2vi" | "entovi" => Ok(Direction::EnToVi),
            _ => Err(format!("unknown direction {s:?} (expected vi-en or en-vi)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TokenCounts {
    pub prompt: usize,
    pub generated: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub total_ms: f64,
    pub ms_per_generated_token: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslationTurn {
    pub direction: Direction,
    pub source_text: String,
    pub output_text: String,
    pub token_counts: TokenCounts,
    pub timing: Timing,
    pub truncated: bool,
}

/// One streamed token and the text it completed. The text can be empty while
/// a multi-byte character is still being assembled from byte tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamToken {
    pub id: TokenId,
    pub text: String,
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Cuts at the first stop string, removes role markers, collapses whitespace
/// and trims. Repeats until stable so removals cannot assemble new markers.
pub fn postprocess(raw: &str, template: &PromptTemplate) -> String {
    let mut text = raw.to_string();
    loop {
        let before = text.clone();
        if let Some(cut) = template
            .stop_strings
            .iter()
            .filter(|s| !s.is_empty())
            .filter_map(|s| text.find(s.as_str()))
            .min()
        {
            text.truncate(cut);
        }
        for m in template.role_markers.iter().filter(|m| !m.is_empty()) {
            text = text.replace(m.as_str(), "");
        }
        text = collapse_whitespace(&text);
        if text == before {
            return text;
        }
    }
}

/// Prompt text for `text` in `direction`. `text` must be non-blank.
pub fn build_prompt(template: &PromptTemplate, direction: Direction, text: &str) -> Result<String, PipelineError> {
    if text.trim().is_empty() {
        return Err(PipelineError::EmptyInput);
    }
    Ok(template.render(direction, text)?.text)
}

/// Serves waiters strictly in arrival order.
#[derive(Default)]
struct FifoGate {
    next_ticket: AtomicU64,
    serving: Mutex<u64>,
    turn: Condvar,
}

struct GateGuard<'a> {
    gate: &'a FifoGate,
}

impl FifoGate {
    fn enter(&self) -> GateGuard<'_> {
        let ticket = self.next_ticket.fetch_add(1, Ordering::SeqCst);
        let mut serving = self.serving.lock().unwrap_or_else(|e| e.into_inner());
        while *serving != ticket {
            serving = self.turn.wait(serving).unwrap_or_else(|e| e.into_inner());
        }
        GateGuard { gate: self }
    }
}

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        let mut serving = self.gate.serving.lock().unwrap_or_else(|e| e.into_inner());
        *serving += 1;
        self.gate.turn.notify_all();
    }
}

struct SessionState {
    cache: KvCache,
    direction: Direction,
    adapter: Option<Arc<dyn SpeechAdapter>>,
}

/// A translation session: shared model and tokenizer, its own cache.
/// Concurrent `translate` calls run one at a time in arrival order.
pub struct Session {
    model: Arc<Model>,
    vocab: Arc<Vocab>,
    template: PromptTemplate,
    params: GenParams,
    gate: FifoGate,
    cancel: Arc<AtomicBool>,
    state: Mutex<SessionState>,
}

/// Model, tokenizer and template loaded from one file, shareable across
/// sessions.
#[derive(Clone)]
pub struct Engine {
    pub model: Arc<Model>,
    pub vocab: Arc<Vocab>,
    pub template: PromptTemplate,
}

impl Engine {
    pub fn load(file: Arc<GgufFile>) -> Result<Self, PipelineError> {
        let vocab = Vocab::from_gguf(&file)?;
        let bos = vocab.piece(vocab.bos_id)?.to_string();
        let eos = vocab.piece(vocab.eos_id)?.to_string();
        let template = match file.get_str("tokenizer.chat_template") {
            Ok(jinja) => PromptTemplate::from_jinja(TemplateSource::ModelMetadata, jinja, &bos, &eos)?,
            Err(_) => PromptTemplate::builtin(&bos, &eos)?,
        };
        let model = load_model(file)?;
        Ok(Engine {
            model: Arc::new(model),
            vocab: Arc::new(vocab),
            template,
        })
    }

    pub fn open(path: impl AsRef<std::path::Path>) -> Result<Self, PipelineError> {
        let file = GgufFile::open(path).map_err(ModelError::from)?;
        Self::load(Arc::new(file))
    }

    /// Greedy defaults: temperature 0, 256 new tokens, stop on eos.
    pub fn default_params(&self) -> GenParams {
        GenParams {
            stop_token_ids: [self.vocab.eos_id].into(),
            ..GenParams::default()
        }
    }

    pub fn session(&self, direction: Direction) -> Session {
        Session::new(
            self.model.clone(),
            self.vocab.clone(),
            self.template.clone(),
            self.default_params(),
            direction,
        )
    }
}

impl Session {
    pub fn new(model: Arc<Model>, vocab: Arc<Vocab>, template: PromptTemplate, params: GenParams, direction: Direction) -> Self {
        let cache = KvCache::new(&model.config);
        Session {
            model,
            vocab,
            template,
            params,
            gate: FifoGate::default(),
            cancel: Arc::default(),
            state: Mutex::new(SessionState {
                cache,
                direction,
                adapter: None,
            }),
        }
    }

    fn state(&self) -> MutexGuard<'_, SessionState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Setting the returned flag stops the running translation with
    /// [`PipelineError::Cancelled`]. Each translation clears it on start.
    pub fn cancel_handle(&self) -> Arc<AtomicBool> {
        self.cancel.clone()
    }

    pub fn direction(&self) -> Direction {
        self.state().direction
    }

    pub fn set_direction(&self, direction: Direction) {
        self.state().direction = direction;
    }

    pub fn template(&self) -> &PromptTemplate {
        &self.template
    }

    pub fn params(&self) -> &GenParams {
        &self.params
    }

    pub fn set_params(&mut self, params: GenParams) {
        self.params = params;
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Only adapters attesting to on-device processing are accepted.
    pub fn register_speech_adapter(&self, adapter: Arc<dyn SpeechAdapter>) -> Result<(), PipelineError> {
        if !adapter.is_local() {
            return Err(SpeechError::NotLocal.into());
        }
        self.state().adapter = Some(adapter);
        Ok(())
    }

    /// Prompt token ids: BOS (when the vocab asks for it), then the rendered
    /// template with its special tokens, the user's text protected.
    pub fn encode_prompt(&self, direction: Direction, text: &str) -> Result<Vec<TokenId>, PipelineError> {
        if text.trim().is_empty() {
            return Err(PipelineError::EmptyInput);
        }
        let rendered = self.template.render(direction, text)?;
        Ok(self
            .vocab
            .encode_with_specials(&rendered.text, self.vocab.add_bos, &rendered.user_ranges))
    }

    /// Translates in the session's current direction.
    pub fn translate(&self, text: &str, on_token: &mut dyn FnMut(&StreamToken)) -> Result<TranslationTurn, PipelineError> {
        let direction = self.direction();
        self.translate_as(direction, text, on_token)
    }

    /// Translates in an explicit direction without changing the session's.
    pub fn translate_as(
        &self,
        direction: Direction,
        text: &str,
        on_token: &mut dyn FnMut(&StreamToken),
    ) -> Result<TranslationTurn, PipelineError> {
        let _turn = self.gate.enter();
        self.cancel.store(false, Ordering::Relaxed);
        let started = Instant::now();
        let source: String = text.nfc().collect();
        let prompt = self.encode_prompt(direction, &source)?;
        let mut state = self.state();
        if prompt.len() >= state.cache.capacity() {
            return Err(PipelineError::ContextOverflow {
                prompt_tokens: prompt.len(),
                context_len: state.cache.capacity(),
            });
        }

        let mut decoder = self.vocab.stream_decoder();
        let mut raw = String::new();
        let mut decode_err = None;
        let generation = generate_cancellable(&self.model, &mut state.cache, &prompt, &self.params, &self.cancel, &mut |id| {
            match decoder.push(id) {
                Ok(chunk) => {
                    raw.push_str(&chunk);
                    on_token(&StreamToken { id, text: chunk });
                }
                Err(e) => decode_err = Some(e),
            }
        })?;
        if let Some(e) = decode_err {
            return Err(e.into());
        }
        if generation.stop == StopReason::Cancelled {
            return Err(PipelineError::Cancelled);
        }
        // an incomplete trailing UTF-8 sequence is dropped, matching the stream
        let output_text = postprocess(&raw, &self.template);

        let total_ms = (started.elapsed().as_secs_f64() * 1e3).max(f64::MIN_POSITIVE);
        let generated = generation.tokens.len();
        let turn = TranslationTurn {
            direction,
            source_text: source,
            output_text,
            token_counts: TokenCounts {
                prompt: prompt.len(),
                generated,
            },
            timing: Timing {
                total_ms,
                ms_per_generated_token: total_ms / generated.max(1) as f64,
            },
            truncated: generation.truncated(),
        };
        if let Some(adapter) = state.adapter.clone() {
            if adapter.capabilities().text_to_speech {
                adapter.text_to_speech(&turn.output_text)?;
            }
        }
        Ok(turn)
    }

    /// Speech in, translation out: the registered adapter transcribes the
    /// audio, the text is translated and the output is spoken.
    pub fn translate_speech(&self, audio: &[u8], on_token: &mut dyn FnMut(&StreamToken)) -> Result<TranslationTurn, PipelineError> {
        let adapter = self.state().adapter.clone().ok_or(SpeechError::Unsupported("speech to text"))?;
        if !adapter.capabilities().speech_to_text {
            return Err(SpeechError::Unsupported("speech to text").into());
        }
        let text = adapter.speech_to_text(audio)?;
        self.translate(&text, on_token)
    }
}
