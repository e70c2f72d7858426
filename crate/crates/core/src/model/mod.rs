//! Llama decoder over GGUF weights: RMSNorm, rotary positions, grouped-query
//! attention and a SiLU-gated FFN. Activations are f32; weights stay in their
//! stored encoding and are read from the file on every use.

mod cache;
mod generate;
pub mod ops;

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::gguf::{dequantize_tensor, GgufError, GgufFile};
use crate::quant::{self, GgmlType, QuantError, QuantType};
use crate::tokenizer::TokenId;

pub use cache::KvCache;
pub use generate::{argmax, generate, generate_cancellable, generate_with_cache, sample, GenParams, Generation, StopReason};
pub use ops::{rms_norm, rope_apply, softmax_in_place};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unsupported architecture {0:?} (only \"llama\" is supported)")]
    UnsupportedArchitecture(String),
    #[error("missing metadata key {0:?}")]
    MissingMetadata(String),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("missing tensor {0:?}")]
    MissingTensor(String),
    #[error("tensor {name:?} has dims {found:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<u64>,
        found: Vec<u64>,
    },
    #[error("tensor {name:?} has unsupported type {ggml_type}")]
    UnsupportedQuantType { name: String, ggml_type: GgmlType },
    #[error("context overflow: {filled} cached + {requested} new tokens exceed capacity {capacity}")]
    ContextOverflow {
        filled: usize,
        requested: usize,
        capacity: usize,
    },
    #[error("non-finite activation after {stage}")]
    NonFiniteActivation { stage: String },
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("head dimension {0} is odd")]
    OddHeadDim(usize),
    #[error("token id {id} is outside the vocabulary of {vocab_size}")]
    InvalidToken { id: TokenId, vocab_size: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("invalid generation parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Gguf(#[from] GgufError),
    #[error(transparent)]
    Quant(#[from] QuantError),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub ffn_hidden_dim: usize,
    pub vocab_size: usize,
    pub context_len: usize,
    pub rope_theta: f32,
    pub rmsnorm_eps: f32,
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    /// Reads `{arch}.*` hyperparameters. Optional keys fall back to the
    /// usual Llama defaults and the fallback is logged.
    pub fn from_gguf(file: &GgufFile) -> Result<Self> {
        let arch = file
            .get_str("general.architecture")
            .map_err(|_| ModelError::MissingMetadata("general.architecture".into()))?;
        if arch != "llama" {
            return Err(ModelError::UnsupportedArchitecture(arch.into()));
        }
        let uint = |key: &str| -> Result<usize> {
            match file.get_uint(key) {
                Ok(v) => Ok(v as usize),
                Err(GgufError::NotFound(_)) => Err(ModelError::MissingMetadata(key.into())),
                Err(e) => Err(e.into()),
            }
        };
        let float = |key: &str, default: f32| -> Result<f32> {
            match file.get_float(key) {
                Ok(v) => Ok(v as f32),
                Err(GgufError::NotFound(_)) => {
                    tracing::info!(key, default, "metadata key absent, using default");
                    Ok(default)
                }
                Err(e) => Err(e.into()),
            }
        };
        let n_heads = uint("llama.attention.head_count")?;
        let n_kv_heads = match uint("llama.attention.head_count_kv") {
            Err(ModelError::MissingMetadata(_)) => n_heads,
            other => other?,
        };
        let vocab_size = match uint("llama.vocab_size") {
            Err(ModelError::MissingMetadata(_)) => file
                .get_array("tokenizer.ggml.tokens")
                .map(|a| a.len())
                .map_err(|_| ModelError::MissingMetadata("llama.vocab_size".into()))?,
            other => other?,
        };
        let config = ModelConfig {
            n_layers: uint("llama.block_count")?,
            embed_dim: uint("llama.embedding_length")?,
            n_heads,
            n_kv_heads,
            ffn_hidden_dim: uint("llama.feed_forward_length")?,
            vocab_size,
            context_len: uint("llama.context_length")?,
            rope_theta: float("llama.rope.freq_base", 10000.0)?,
            rmsnorm_eps: float("llama.attention.layer_norm_rms_epsilon", 1e-5)?,
        };
        config.check()?;
        if let Ok(rot) = uint("llama.rope.dimension_count") {
            if rot != config.head_dim() {
                return Err(ModelError::InvalidConfig(format!(
                    "partial rotary embeddings ({rot} of {} dims) are not supported",
                    config.head_dim()
                )));
            }
        }
        Ok(config)
    }

    pub fn check(&self) -> Result<()> {
        let extents = [
            ("n_layers", self.n_layers),
            ("embed_dim", self.embed_dim),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("ffn_hidden_dim", self.ffn_hidden_dim),
            ("vocab_size", self.vocab_size),
            ("context_len", self.context_len),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::InvalidConfig(format!("{name} must be positive")));
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) || !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(ModelError::InvalidConfig(format!(
                "embed_dim {} / n_heads {} / n_kv_heads {} do not divide evenly",
                self.embed_dim, self.n_heads, self.n_kv_heads
            )));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(ModelError::OddHeadDim(self.head_dim()));
        }
        if !(self.rope_theta.is_finite() && self.rope_theta > 0.0 && self.rmsnorm_eps.is_finite() && self.rmsnorm_eps >= 0.0) {
            return Err(ModelError::InvalidConfig("rope_theta and rmsnorm_eps must be finite and positive".into()));
        }
        Ok(())
    }
}

/// A 2-D weight located in the file: `rows` vectors of `cols` elements.
#[derive(Debug, Clone)]
pub struct Weight {
    pub name: String,
    pub qtype: QuantType,
    pub rows: usize,
    pub cols: usize,
    offset: u64,
    len: usize,
}

#[derive(Debug)]
struct Layer {
    attn_norm: Vec<f32>,
    wq: Weight,
    wk: Weight,
    wv: Weight,
    wo: Weight,
    ffn_norm: Vec<f32>,
    w_gate: Weight,
    w_up: Weight,
    w_down: Weight,
}

/// Loaded model. Immutable and shareable across threads; the per-session
/// state lives in [`KvCache`].
#[derive(Debug)]
pub struct Model {
    pub config: ModelConfig,
    file: Arc<GgufFile>,
    token_embd: Weight,
    layers: Vec<Layer>,
    output_norm: Vec<f32>,
    output: Weight,
}

/// Attention probabilities of one query row, reported by
/// [`Model::forward_probed`].
#[derive(Debug, Clone)]
pub struct AttentionProbe<'a> {
    pub layer: usize,
    pub head: usize,
    pub position: usize,
    pub weights: &'a [f32],
}

fn locate(file: &GgufFile, name: &str, cols: usize, rows: usize) -> Result<Weight> {
    let info = file
        .tensor_info(name)
        .map_err(|_| ModelError::MissingTensor(name.into()))?;
    let expected = vec![cols as u64, rows as u64];
    let found = info.dims.clone();
    let matches = found.len() == 2 && found == expected || found.len() == 1 && rows == 1 && found[0] == cols as u64;
    if !matches {
        return Err(ModelError::ShapeMismatch {
            name: name.into(),
            expected,
            found,
        });
    }
    let qtype = info.qtype().ok_or_else(|| ModelError::UnsupportedQuantType {
        name: name.into(),
        ggml_type: info.ggml_type,
    })?;
    let row_bytes = qtype.row_bytes(cols).map_err(|_| ModelError::ShapeMismatch {
        name: name.into(),
        expected: vec![cols.next_multiple_of(qtype.block_elems()) as u64, rows as u64],
        found: info.dims.clone(),
    })?;
    // resolves the payload inside the file without keeping a copy
    let view = file.tensor_view(name)?;
    Ok(Weight {
        name: name.into(),
        qtype,
        rows,
        cols,
        offset: view.file_offset,
        len: row_bytes * rows,
    })
}

fn load_vector(file: &GgufFile, name: &str, len: usize) -> Result<Vec<f32>> {
    locate(file, name, len, 1)?;
    Ok(dequantize_tensor(&file.tensor_view(name)?)?)
}

/// Locates and shape-checks every weight. Only the norm vectors are decoded
/// up front; matrices are read from the file when used.
pub fn load_model(file: Arc<GgufFile>) -> Result<Model> {
    let config = ModelConfig::from_gguf(&file)?;
    let (e, kv, f, v) = (config.embed_dim, config.kv_dim(), config.ffn_hidden_dim, config.vocab_size);
    let token_embd = locate(&file, "token_embd.weight", e, v)?;
    let mut layers = Vec::with_capacity(config.n_layers);
    for i in 0..config.n_layers {
        let n = |s: &str| format!("blk.{i}.{s}.weight");
        layers.push(Layer {
            attn_norm: load_vector(&file, &n("attn_norm"), e)?,
            wq: locate(&file, &n("attn_q"), e, e)?,
            wk: locate(&file, &n("attn_k"), e, kv)?,
            wv: locate(&file, &n("attn_v"), e, kv)?,
            wo: locate(&file, &n("attn_output"), e, e)?,
            ffn_norm: load_vector(&file, &n("ffn_norm"), e)?,
            w_gate: locate(&file, &n("ffn_gate"), e, f)?,
            w_up: locate(&file, &n("ffn_up"), e, f)?,
            w_down: locate(&file, &n("ffn_down"), f, e)?,
        });
    }
    let output_norm = load_vector(&file, "output_norm.weight", e)?;
    // tied embeddings when there is no separate output matrix
    let output = if file.has_tensor("output.weight") {
        locate(&file, "output.weight", e, v)?
    } else {
        token_embd.clone()
    };
    Ok(Model {
        config,
        file,
        token_embd,
        layers,
        output_norm,
        output,
    })
}

impl Model {
    pub fn file(&self) -> &Arc<GgufFile> {
        &self.file
    }

    /// Every matrix weight, in layer order.
    pub fn weights(&self) -> Vec<&Weight> {
        let mut out = vec![&self.token_embd];
        for l in &self.layers {
            out.extend([&l.wq, &l.wk, &l.wv, &l.wo, &l.w_gate, &l.w_up, &l.w_down]);
        }
        out.push(&self.output);
        out
    }

    fn bytes(&self, w: &Weight) -> Result<std::borrow::Cow<'_, [u8]>> {
        Ok(self.file.read_bytes(w.offset, w.len)?)
    }

    fn project(&self, w: &Weight, xs: &[f32], out: &mut Vec<f32>) -> Result<()> {
        let n = xs.len() / w.cols;
        out.resize(n * w.rows, 0.0);
        quant::matmul(w.qtype, &self.bytes(w)?, xs, w.cols, out)?;
        Ok(())
    }

    /// Dequantized embedding row of `token`.
    pub fn embedding(&self, token: TokenId) -> Result<Vec<f32>> {
        let w = &self.token_embd;
        if token as usize >= w.rows {
            return Err(ModelError::InvalidToken {
                id: token,
                vocab_size: w.rows,
            });
        }
        let row_bytes = w.len / w.rows;
        let start = w.offset + token as u64 * row_bytes as u64;
        let raw = self.file.read_bytes(start, row_bytes)?;
        Ok(quant::dequantize(w.qtype, &raw, w.cols)?)
    }

    /// Runs `tokens` through the decoder, appending their keys and values to
    /// `cache`, and returns the logits of the last token.
    pub fn forward(&self, tokens: &[TokenId], cache: &mut KvCache) -> Result<Vec<f32>> {
        self.forward_impl(tokens, cache, None)
    }

    /// Logits for every position of `tokens`, one vector per token.
    pub fn forward_all(&self, tokens: &[TokenId], cache: &mut KvCache) -> Result<Vec<Vec<f32>>> {
        let hidden = self.hidden(tokens, cache, None)?;
        let e = self.config.embed_dim;
        let mut normed = vec![0.0; hidden.len()];
        for (x, y) in hidden.chunks_exact(e).zip(normed.chunks_exact_mut(e)) {
            ops::rms_norm_into(x, &self.output_norm, self.config.rmsnorm_eps, y)?;
        }
        let mut logits = Vec::new();
        self.project(&self.output, &normed, &mut logits)?;
        check_finite(&logits, "output")?;
        Ok(logits.chunks_exact(self.config.vocab_size).map(<[f32]>::to_vec).collect())
    }

    /// As [`Model::forward`], reporting every attention row to `probe`.
    pub fn forward_probed(
        &self,
        tokens: &[TokenId],
        cache: &mut KvCache,
        probe: &mut dyn FnMut(AttentionProbe<'_>),
    ) -> Result<Vec<f32>> {
        self.forward_impl(tokens, cache, Some(probe))
    }

    fn forward_impl(
        &self,
        tokens: &[TokenId],
        cache: &mut KvCache,
        probe: Option<&mut dyn FnMut(AttentionProbe<'_>)>,
    ) -> Result<Vec<f32>> {
        let x = self.hidden(tokens, cache, probe)?;
        let e = self.config.embed_dim;
        let normed = ops::rms_norm(&x[x.len() - e..], &self.output_norm, self.config.rmsnorm_eps)?;
        let mut logits = Vec::new();
        self.project(&self.output, &normed, &mut logits)?;
        check_finite(&logits, "output")?;
        Ok(logits)
    }

    /// Final hidden states (before the output norm) of every token.
    fn hidden(
        &self,
        tokens: &[TokenId],
        cache: &mut KvCache,
        mut probe: Option<&mut dyn FnMut(AttentionProbe<'_>)>,
    ) -> Result<Vec<f32>> {
        let cfg = &self.config;
        if tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if tokens.len() > cache.remaining() {
            return Err(ModelError::ContextOverflow {
                filled: cache.filled_len(),
                requested: tokens.len(),
                capacity: cache.capacity(),
            });
        }
        let (e, hd) = (cfg.embed_dim, cfg.head_dim());
        let n = tokens.len();
        let start = cache.filled_len();
        let group = cfg.n_heads / cfg.n_kv_heads;
        let scale = 1.0 / (hd as f32).sqrt();

        let mut x = Vec::with_capacity(n * e);
        for &t in tokens {
            x.extend(self.embedding(t)?);
        }
        let mut h = vec![0.0; n * e];
        let (mut q, mut k, mut v) = (Vec::new(), Vec::new(), Vec::new());
        let mut attn = vec![0.0; n * e];
        let (mut proj, mut gate, mut up) = (Vec::new(), Vec::new(), Vec::new());

        for (li, layer) in self.layers.iter().enumerate() {
            for (xi, hi) in x.chunks_exact(e).zip(h.chunks_exact_mut(e)) {
                ops::rms_norm_into(xi, &layer.attn_norm, cfg.rmsnorm_eps, hi)?;
            }
            self.project(&layer.wq, &h, &mut q)?;
            self.project(&layer.wk, &h, &mut k)?;
            self.project(&layer.wv, &h, &mut v)?;
            for t in 0..n {
                let pos = start + t;
                for head in q[t * e..(t + 1) * e].chunks_exact_mut(hd) {
                    ops::rope_in_place(head, pos, cfg.rope_theta)?;
                }
                let kv = cfg.kv_dim();
                for kh in 0..cfg.n_kv_heads {
                    let src = t * kv + kh * hd;
                    let dst = cache.slot(kh, pos);
                    let key = &mut cache.keys[li][dst..dst + hd];
                    key.copy_from_slice(&k[src..src + hd]);
                    ops::rope_in_place(key, pos, cfg.rope_theta)?;
                    cache.values[li][dst..dst + hd].copy_from_slice(&v[src..src + hd]);
                }
            }

            let keys = &cache.keys[li];
            let values = &cache.values[li];
            let cache_ref = &*cache;
            for t in 0..n {
                let pos = start + t;
                let q_t = &q[t * e..(t + 1) * e];
                let out_t = &mut attn[t * e..(t + 1) * e];
                let attend = |head: usize, out: &mut [f32], probs: &mut Vec<f32>| {
                    let kh = head / group;
                    let qh = &q_t[head * hd..(head + 1) * hd];
                    probs.clear();
                    for p in 0..=pos {
                        let s = cache_ref.slot(kh, p);
                        let dot: f32 = qh.iter().zip(&keys[s..s + hd]).map(|(a, b)| a * b).sum();
                        probs.push(dot * scale);
                    }
                    ops::softmax_in_place(probs);
                    out.fill(0.0);
                    for (p, &w) in probs.iter().enumerate() {
                        let s = cache_ref.slot(kh, p);
                        for (o, &val) in out.iter_mut().zip(&values[s..s + hd]) {
                            *o += w * val;
                        }
                    }
                };
                match probe.as_deref_mut() {
                    None => out_t
                        .par_chunks_mut(hd)
                        .enumerate()
                        .for_each_init(Vec::new, |probs, (head, out)| attend(head, out, probs)),
                    Some(cb) => {
                        let mut probs = Vec::new();
                        for (head, out) in out_t.chunks_mut(hd).enumerate() {
                            attend(head, out, &mut probs);
                            cb(AttentionProbe {
                                layer: li,
                                head,
                                position: pos,
                                weights: &probs,
                            });
                        }
                    }
                }
            }

            self.project(&layer.wo, &attn, &mut proj)?;
            for (xi, pi) in x.iter_mut().zip(&proj) {
                *xi += pi;
            }
            for (xi, hi) in x.chunks_exact(e).zip(h.chunks_exact_mut(e)) {
                ops::rms_norm_into(xi, &layer.ffn_norm, cfg.rmsnorm_eps, hi)?;
            }
            self.project(&layer.w_gate, &h, &mut gate)?;
            self.project(&layer.w_up, &h, &mut up)?;
            for (g, u) in gate.iter_mut().zip(&up) {
                *g = ops::silu(*g) * u;
            }
            self.project(&layer.w_down, &gate, &mut proj)?;
            for (xi, pi) in x.iter_mut().zip(&proj) {
                *xi += pi;
            }
            check_finite(&x, &format!("layer {li}"))?;
        }
        cache.advance(n);
        Ok(x)
    }
}

fn check_finite(values: &[f32], stage: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NonFiniteActivation { stage: stage.into() })
    }
}
