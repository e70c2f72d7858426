//! Corpus cleaning, BLEU, latency benchmarking and quantization comparison.

mod bleu;
mod clean;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::gguf::{dequantize_tensor, GgufError, GgufFile, GgufSpec, MetaValue, TensorSpec};
use crate::model::ModelConfig;
use crate::pipeline::{Direction, Engine, PipelineError, Session};
use crate::quant::{self, QuantError, QuantType};

pub use bleu::{bleu, BleuOptions, BleuReport, Smoothing};
pub use clean::{clean_corpus, clean_tsv, parse_tsv, CleaningReport, CleaningRules, ParallelPair, Removed};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{hypotheses} hypotheses but {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("models differ: {0}")]
    ArchitectureMismatch(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Gguf(#[from] GgufError),
    #[error(transparent)]
    Quant(#[from] QuantError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

impl LatencyStats {
    pub fn from_samples(samples: &[f64]) -> Self {
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.is_empty() {
            return LatencyStats {
                mean: 0.0,
                p50: 0.0,
                p95: 0.0,
                min: 0.0,
                max: 0.0,
            };
        }
        LatencyStats {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            p50: percentile(&sorted, 50.0),
            p95: percentile(&sorted, 95.0),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchOptions {
    pub reps: usize,
    pub direction: Direction,
    /// Untimed passes over the whole prompt set before measuring.
    pub warmup_passes: usize,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            reps: 3,
            direction: Direction::EnToVi,
            warmup_passes: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    /// FNV-1a hash of the prompts, identifying the prompt set.
    pub prompt_set_id: String,
    pub sentences: usize,
    pub reps: usize,
    pub warmup_runs: usize,
    pub timed_runs: usize,
    pub prompt_tokens: u64,
    pub generated_tokens: u64,
    /// Generated tokens over the summed wall time of the timed runs,
    /// prompt processing included.
    pub tokens_per_sec: f64,
    pub ms_per_sentence: LatencyStats,
    pub sentence_ms: Vec<f64>,
    /// Peak resident set size of the process so far.
    pub peak_resident_memory_bytes: u64,
    /// Translations from the first timed pass, in prompt order.
    pub outputs: Vec<String>,
}

pub fn prompt_set_id(prompts: &[impl AsRef<str>]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for p in prompts {
        for b in p.as_ref().bytes().chain([0u8]) {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    format!("{h:016x}")
}

/// Peak resident memory of this process, in bytes.
pub fn peak_rss_bytes() -> u64 {
    // SAFETY: getrusage only writes into the zeroed struct we pass.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    if unsafe { libc::getrusage(libc::RUSAGE_SELF, &mut usage) } != 0 {
        return 0;
    }
    let max = usage.ru_maxrss.max(0) as u64;
    if cfg!(target_os = "macos") {
        max
    } else {
        max * 1024
    }
}

/// Greedy translation of every prompt, `warmup_passes` times untimed and then
/// `reps` times timed, one sentence at a time.
pub fn bench(session: &Session, prompts: &[impl AsRef<str>], opts: &BenchOptions) -> Result<BenchReport, EvalError> {
    if opts.reps == 0 {
        return Err(EvalError::InvalidOptions("reps must be at least 1".into()));
    }
    if prompts.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    for _ in 0..opts.warmup_passes {
        for p in prompts {
            session.translate_as(opts.direction, p.as_ref(), &mut |_| {})?;
        }
    }
    let mut sentence_ms = Vec::with_capacity(opts.reps * prompts.len());
    let mut outputs = Vec::with_capacity(prompts.len());
    let (mut prompt_tokens, mut generated_tokens) = (0u64, 0u64);
    for rep in 0..opts.reps {
        for p in prompts {
            let start = Instant::now();
            let turn = session.translate_as(opts.direction, p.as_ref(), &mut |_| {})?;
            sentence_ms.push(start.elapsed().as_secs_f64() * 1e3);
            prompt_tokens += turn.token_counts.prompt as u64;
            generated_tokens += turn.token_counts.generated as u64;
            if rep == 0 {
                outputs.push(turn.output_text);
            }
        }
    }
    let total_s = sentence_ms.iter().sum::<f64>() / 1e3;
    Ok(BenchReport {
        prompt_set_id: prompt_set_id(prompts),
        sentences: prompts.len(),
        reps: opts.reps,
        warmup_runs: opts.warmup_passes * prompts.len(),
        timed_runs: sentence_ms.len(),
        prompt_tokens,
        generated_tokens,
        tokens_per_sec: if total_s > 0.0 { generated_tokens as f64 / total_s } else { 0.0 },
        ms_per_sentence: LatencyStats::from_samples(&sentence_ms),
        sentence_ms,
        peak_resident_memory_bytes: peak_rss_bytes(),
        outputs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub path_a: PathBuf,
    pub path_b: PathBuf,
    pub size_a: u64,
    pub size_b: u64,
    /// `(size_a - size_b) / size_a * 100`.
    pub size_reduction_pct: f64,
    /// `(mean_ms_a - mean_ms_b) / mean_ms_a * 100`, from the bench means.
    pub speedup_pct: f64,
    pub bleu_a: BleuReport,
    pub bleu_b: BleuReport,
    /// `bleu_a - bleu_b` on the 0..=1 scale.
    pub bleu_delta: f64,
    /// The same delta on the 0..=100 scale.
    pub bleu_delta_100: f64,
    pub bench_a: BenchReport,
    pub bench_b: BenchReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareOptions {
    pub bench: BenchOptions,
    pub bleu: BleuOptions,
    pub max_new_tokens: Option<usize>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            bench: BenchOptions {
                reps: 1,
                ..BenchOptions::default()
            },
            bleu: BleuOptions::default(),
            max_new_tokens: None,
        }
    }
}

fn same_shape(a: &ModelConfig, b: &ModelConfig) -> bool {
    (a.n_layers, a.embed_dim, a.n_heads, a.n_kv_heads, a.ffn_hidden_dim, a.vocab_size)
        == (b.n_layers, b.embed_dim, b.n_heads, b.n_kv_heads, b.ffn_hidden_dim, b.vocab_size)
}

/// Size, speed and BLEU of two encodings of the same model on one test set.
/// Sizes are file byte sizes; speed and BLEU come from greedy translation of
/// the test set's sources, scored against its targets.
pub fn compare_quants(a: &Path, b: &Path, testset: &[ParallelPair], opts: &CompareOptions) -> Result<ComparisonReport, EvalError> {
    if testset.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    let file_a = Arc::new(GgufFile::open(a)?);
    let file_b = Arc::new(GgufFile::open(b)?);
    let (size_a, size_b) = (file_a.file_size(), file_b.file_size());
    let tokens = |f: &GgufFile| f.get_array("tokenizer.ggml.tokens").map(<[MetaValue]>::to_vec).ok();
    if tokens(&file_a) != tokens(&file_b) {
        return Err(EvalError::ArchitectureMismatch("vocabularies differ".into()));
    }
    let engine_a = Engine::load(file_a)?;
    let engine_b = Engine::load(file_b)?;
    if !same_shape(&engine_a.model.config, &engine_b.model.config) {
        return Err(EvalError::ArchitectureMismatch(format!(
            "{:?} vs {:?}",
            engine_a.model.config, engine_b.model.config
        )));
    }
    let sources: Vec<&str> = testset.iter().map(|p| p.source.as_str()).collect();
    let refs: Vec<&str> = testset.iter().map(|p| p.target.as_str()).collect();
    let run = |engine: &Engine| -> Result<(BenchReport, BleuReport), EvalError> {
        let mut session = engine.session(opts.bench.direction);
        if let Some(n) = opts.max_new_tokens {
            let mut params = session.params().clone();
            params.max_new_tokens = n;
            session.set_params(params);
        }
        let report = bench(&session, &sources, &opts.bench)?;
        let score = bleu(&report.outputs, &refs, &opts.bleu)?;
        Ok((report, score))
    };
    let (bench_a, bleu_a) = run(&engine_a)?;
    let (bench_b, bleu_b) = run(&engine_b)?;
    let mean_a = bench_a.ms_per_sentence.mean;
    let mean_b = bench_b.ms_per_sentence.mean;
    let bleu_delta = bleu_a.score - bleu_b.score;
    Ok(ComparisonReport {
        path_a: a.to_path_buf(),
        path_b: b.to_path_buf(),
        size_a,
        size_b,
        size_reduction_pct: (size_a as f64 - size_b as f64) / size_a as f64 * 100.0,
        speedup_pct: if mean_a > 0.0 { (mean_a - mean_b) / mean_a * 100.0 } else { 0.0 },
        bleu_delta,
        bleu_delta_100: bleu_a.score_100 - bleu_b.score_100,
        bleu_a,
        bleu_b,
        bench_a,
        bench_b,
    })
}

/// `general.file_type` value for a file stored uniformly in `qtype`.
fn file_type_id(qtype: QuantType) -> u32 {
    match qtype {
        QuantType::F32 => 0,
        QuantType::F16 => 1,
        QuantType::Q8_0 => 7,
        QuantType::Q2K => 10,
        QuantType::Q3K => 11,
        QuantType::Q4K => 14,
        QuantType::Q5K => 16,
        QuantType::Q6K => 18,
    }
}

/// Re-encodes every 2-D weight matrix whose rows fit `target`'s block size.
/// Vectors (norms) and matrices with incompatible rows keep their encoding.
pub fn requantize(file: &GgufFile, target: QuantType) -> Result<GgufSpec, EvalError> {
    let mut spec = GgufSpec::with_alignment(file.alignment);
    spec.metadata = file.metadata.clone();
    spec.metadata
        .insert("general.file_type".into(), MetaValue::U32(file_type_id(target)));
    for t in &file.tensors {
        let view = file.tensor_view(&t.name)?;
        let convert = t.dims.len() == 2 && (t.dims[0] as usize).is_multiple_of(target.block_elems()) && t.qtype() != Some(target);
        let (ggml_type, data) = if convert {
            let values = dequantize_tensor(&view)?;
            (target.ggml_type(), quant::quantize(target, &values)?)
        } else {
            (t.ggml_type, view.data.into_owned())
        };
        spec.tensors.push(TensorSpec {
            name: t.name.clone(),
            dims: t.dims.clone(),
            ggml_type,
            data,
        });
    }
    Ok(spec)
}
