use std::fs;
use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use vien_core::eval::{
    bench, bleu, clean_tsv, compare_quants, parse_tsv, requantize, BenchOptions, BenchReport, BleuOptions, BleuReport,
    CleaningRules, CompareOptions, ComparisonReport, ParallelPair, Smoothing,
};
use vien_core::fixture::TinyModel;
use vien_core::gguf::{self, GgufError, GgufFile};
use vien_core::pipeline::{Direction, Engine, PipelineError, Session, TranslationTurn};
use vien_core::quant::QuantType;

use crate::service::{self, ApiTranslateResponse, AppState, ServiceConfig};

/// Peak resident memory reported for TinyLlama-1.1B Q4_K_M inference, shown
/// next to measured peaks for orientation.
pub const REFERENCE_PEAK_BYTES: f64 = 3.17e9;

pub const PROMPTS_EN: &[&str] = &[
    "Hello, how are you today?",
    "Where is the nearest train station?",
    "I would like a cup of coffee, please.",
    "How much does this cost?",
    "Thank you very much for your help.",
    "The weather is beautiful this morning.",
    "Can you speak more slowly?",
    "I am looking for a good restaurant.",
    "What time does the museum open?",
    "My phone battery is almost empty.",
];

pub const PROMPTS_VI: &[&str] = &[
    "Xin chào, hôm nay bạn thế nào?",
    "Ga tàu gần nhất ở đâu?",
    "Cho tôi một ly cà phê.",
    "Cái này giá bao nhiêu?",
    "Cảm ơn bạn rất nhiều.",
    "Sáng nay thời tiết rất đẹp.",
    "Bạn có thể nói chậm hơn không?",
    "Tôi đang tìm một nhà hàng ngon.",
    "Bảo tàng mở cửa lúc mấy giờ?",
    "Điện thoại của tôi sắp hết pin.",
];

pub const TOY_TESTSET: &[(&str, &str)] = &[
    ("Hello", "Xin chào"),
    ("Thank you", "Cảm ơn"),
    ("Where is the station?", "Nhà ga ở đâu?"),
    ("I want coffee", "Tôi muốn cà phê"),
    ("How much is this?", "Cái này bao nhiêu tiền?"),
];

#[derive(Debug, Parser)]
#[command(name = "vien", version, about = "Offline Vietnamese-English translation with quantized Llama models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a GGUF file's header, metadata, tensor types and validation result
    Inspect(InspectArgs),
    /// Translate text given as an argument or one line at a time from stdin
    Translate(TranslateArgs),
    /// Interactive translation session
    Chat(ChatArgs),
    /// Measure per-sentence latency and tokens/sec
    Bench(BenchArgs),
    /// Score translations with corpus BLEU
    Eval(EvalArgs),
    /// Clean a TSV parallel corpus
    Clean(CleanArgs),
    /// Compare two encodings of the same model on size, speed and BLEU
    Compare(CompareArgs),
    /// Run the loopback HTTP/WebSocket service
    Serve(ServeArgs),
    /// Write a small randomly initialised chat model for testing
    Synth(SynthArgs),
    /// Re-encode a model's weight matrices in another quantization type
    Quantize(QuantizeArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model file (GGUF)
    #[arg(short, long, env = "VIEN_MODEL")]
    pub model: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Upper bound on generated tokens per translation
    #[arg(long, default_value_t = 256)]
    pub max_tokens: usize,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(short, long, default_value = "vi-en")]
    pub dir: Direction,
    #[arg(long, conflicts_with = "stdin", required_unless_present = "stdin")]
    pub text: Option<String>,
    /// Translate each stdin line, printing one output line per input line
    #[arg(long)]
    pub stdin: bool,
    #[command(flatten)]
    pub gen: GenArgs,
    /// Print API-shaped JSON instead of plain text
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(short, long, default_value = "vi-en")]
    pub dir: Direction,
    #[command(flatten)]
    pub gen: GenArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// One prompt per line; defaults to ten built-in sentences
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[arg(long, default_value_t = 1)]
    pub warmup: usize,
    #[arg(short, long, default_value = "en-vi")]
    pub dir: Direction,
    #[command(flatten)]
    pub gen: GenArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Print the report as JSON instead of a table
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report to this file
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SmoothingArg {
    None,
    AddOne,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Hypotheses, one per line (TSV lines use their second column)
    #[arg(long, requires = "reference", conflicts_with_all = ["testset", "model"])]
    pub hyp: Option<PathBuf>,
    /// References, one per line (TSV lines use their second column)
    #[arg(long = "ref")]
    pub reference: Option<PathBuf>,
    /// TSV test set whose sources are translated with --model
    #[arg(long, requires = "model", required_unless_present = "hyp")]
    pub testset: Option<PathBuf>,
    #[arg(short, long, env = "VIEN_MODEL")]
    pub model: Option<PathBuf>,
    #[arg(short, long, default_value = "en-vi")]
    pub dir: Direction,
    #[arg(long, value_enum, default_value = "none")]
    pub smoothing: SmoothingArg,
    #[arg(long, default_value_t = 4)]
    pub max_n: usize,
    #[command(flatten)]
    pub gen: GenArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CleanArgs {
    pub input: PathBuf,
    /// Where to write the cleaned TSV
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub min_ratio: f64,
    #[arg(long, default_value_t = 3.0)]
    pub max_ratio: f64,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub model_a: PathBuf,
    pub model_b: PathBuf,
    /// TSV test set; defaults to a five-pair toy set
    #[arg(long)]
    pub testset: Option<PathBuf>,
    #[arg(short, long, default_value = "en-vi")]
    pub dir: Direction,
    #[arg(long, default_value_t = 1)]
    pub reps: usize,
    #[arg(long, value_enum, default_value = "none")]
    pub smoothing: SmoothingArg,
    #[command(flatten)]
    pub gen: GenArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, default_value = "127.0.0.1:8787")]
    pub addr: SocketAddr,
    /// Accept connections from non-loopback peers
    #[arg(long)]
    pub allow_nonlocal: bool,
    #[arg(long, default_value_t = 8)]
    pub queue_depth: usize,
    #[arg(long, default_value_t = 30_000)]
    pub busy_timeout_ms: u64,
    #[command(flatten)]
    pub gen: GenArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub output: PathBuf,
    #[arg(long, default_value = "Q8_0")]
    pub qtype: QuantType,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct QuantizeArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    #[arg(long)]
    pub qtype: QuantType,
}

/// An error and the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = match error.downcast_ref::<PipelineError>() {
            Some(PipelineError::EmptyInput) => 2,
            Some(PipelineError::ContextOverflow { .. }) => 3,
            _ => 1,
        };
        Failure { code, error }
    }
}

pub fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Inspect(a) => inspect(a),
        Command::Translate(a) => translate(a),
        Command::Chat(a) => chat(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Clean(a) => clean_cmd(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Quantize(a) => quantize(a),
    }
}

/// Short name of a parse error, printed ahead of its message.
fn gguf_error_kind(e: &GgufError) -> &'static str {
    match e {
        GgufError::UnsupportedMagic(_) => "UnsupportedMagic",
        GgufError::UnsupportedVersion(_) => "UnsupportedVersion",
        GgufError::TruncatedFile { .. } => "Truncated",
        GgufError::MalformedMetadata(_) => "MalformedMetadata",
        GgufError::DuplicateTensorName(_) => "DuplicateTensorName",
        GgufError::NotFound(_) => "NotFound",
        GgufError::TypeMismatch { .. } => "TypeMismatch",
        GgufError::GeometryMismatch { .. } => "GeometryMismatch",
        GgufError::UnsupportedQuantType { .. } => "UnsupportedQuantType",
        GgufError::Quant(_) => "Quant",
        GgufError::Io(_) => "Io",
    }
}

fn open_gguf(path: &Path) -> Result<GgufFile, Failure> {
    GgufFile::open(path).map_err(|e| Failure {
        code: 1,
        error: anyhow!("{}: {}: {e}", path.display(), gguf_error_kind(&e)),
    })
}

fn load_engine(path: &Path) -> Result<Engine, Failure> {
    let file = open_gguf(path)?;
    let engine = Engine::load(Arc::new(file)).map_err(|e| Failure {
        code: 1,
        error: anyhow!("{}: {e}", path.display()),
    })?;
    tracing::info!(path = %path.display(), config = ?engine.model.config, "model loaded");
    Ok(engine)
}

fn make_session(engine: &Engine, dir: Direction, gen: &GenArgs) -> Session {
    let mut session = engine.session(dir);
    let mut params = session.params().clone();
    params.max_new_tokens = gen.max_tokens;
    session.set_params(params);
    session
}

/// `general.name`, falling back to the file stem.
pub fn model_name(file: &GgufFile, path: &Path) -> String {
    file.get_str("general.name").map(str::to_string).unwrap_or_else(|_| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "model".into())
    })
}

fn human_bytes(n: f64) -> String {
    const UNITS: [&str; 5] = ["B", "KiB", "MiB", "GiB", "TiB"];
    let mut v = n;
    let mut i = 0;
    while v >= 1024.0 && i < UNITS.len() - 1 {
        v /= 1024.0;
        i += 1;
    }
    if i == 0 {
        format!("{n} B")
    } else {
        format!("{v:.2} {}", UNITS[i])
    }
}

fn emit_json(value: &impl Serialize, out: &OutputArgs) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if out.json {
        println!("{text}");
    }
    if let Some(path) = &out.out {
        fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct InspectReport<'a> {
    path: &'a Path,
    version: u32,
    alignment: u64,
    file_size: u64,
    quant_type: String,
    metadata: Vec<(&'a str, String)>,
    histogram: Vec<HistogramRow>,
    tensors: Vec<TensorRow<'a>>,
    validation: gguf::ValidationReport,
}

#[derive(Serialize)]
struct HistogramRow {
    ggml_type: String,
    count: usize,
    bytes: u64,
}

#[derive(Serialize)]
struct TensorRow<'a> {
    name: &'a str,
    dims: &'a [u64],
    ggml_type: String,
    bytes: Option<u64>,
}

fn inspect(a: InspectArgs) -> Result<(), Failure> {
    let file = open_gguf(&a.path)?;
    let report = InspectReport {
        path: &a.path,
        version: file.version,
        alignment: file.alignment,
        file_size: file.file_size(),
        quant_type: file.quant_label(),
        metadata: file.metadata.iter().map(|(k, v)| (k.as_str(), v.summary())).collect(),
        histogram: file
            .type_histogram()
            .into_iter()
            .map(|(t, count, bytes)| HistogramRow {
                ggml_type: t.to_string(),
                count,
                bytes,
            })
            .collect(),
        tensors: file
            .tensors
            .iter()
            .map(|t| TensorRow {
                name: &t.name,
                dims: &t.dims,
                ggml_type: t.ggml_type.to_string(),
                bytes: t.byte_len(),
            })
            .collect(),
        validation: file.validate(),
    };
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?);
    } else {
        println!("{}", a.path.display());
        println!(
            "GGUF v{}  alignment {}  {} ({} bytes)  {}",
            report.version,
            report.alignment,
            human_bytes(report.file_size as f64),
            report.file_size,
            report.quant_type
        );
        println!("\nmetadata ({} keys)", report.metadata.len());
        for (k, v) in &report.metadata {
            println!("  {k:<40} {v}");
        }
        println!("\ntensor types");
        println!("  {:<10} {:>7} {:>16}", "type", "count", "bytes");
        for row in &report.histogram {
            println!("  {:<10} {:>7} {:>16}", row.ggml_type, row.count, row.bytes);
        }
        println!("\ntensors ({})", report.tensors.len());
        for t in &report.tensors {
            let bytes = t.bytes.map_or("?".to_string(), |b| b.to_string());
            println!("  {:<40} {:<8} {:>14}  {:?}", t.name, t.ggml_type, bytes, t.dims);
        }
        println!();
        if report.validation.is_clean() {
            println!("validation: OK");
        } else {
            println!("validation: FAILED ({} problems)", report.validation.violations.len());
            for v in &report.validation.violations {
                println!("  {}  {}: {}", v.code, v.subject, v.message);
            }
        }
    }
    if report.validation.is_clean() {
        Ok(())
    } else {
        let mut codes: Vec<String> = report.validation.violations.iter().map(|v| v.code.to_string()).collect();
        codes.dedup();
        Err(Failure {
            code: 1,
            error: anyhow!("validation failed: {}", codes.join(", ")),
        })
    }
}

fn timing_line(turn: &TranslationTurn) -> String {
    format!(
        "{} · {} prompt + {} generated tokens · {:.1} ms ({:.1} ms/token){}",
        turn.direction,
        turn.token_counts.prompt,
        turn.token_counts.generated,
        turn.timing.total_ms,
        turn.timing.ms_per_generated_token,
        if turn.truncated { " · truncated" } else { "" }
    )
}

fn translate(a: TranslateArgs) -> Result<(), Failure> {
    if a.text.as_deref().is_some_and(|t| t.trim().is_empty()) {
        return Err(PipelineError::EmptyInput.into());
    }
    let engine = load_engine(&a.model.model)?;
    let session = make_session(&engine, a.dir, &a.gen);
    let print = |turn: TranslationTurn| -> Result<(), Failure> {
        eprintln!("{}", timing_line(&turn));
        if a.json {
            let resp = ApiTranslateResponse::from(turn);
            println!("{}", serde_json::to_string(&resp).map_err(anyhow::Error::from)?);
        } else {
            println!("{}", turn.output_text);
        }
        Ok(())
    };
    match &a.text {
        Some(text) => print(session.translate(text, &mut |_| {})?)?,
        None => {
            for line in io::stdin().lock().lines() {
                let line = line.map_err(anyhow::Error::from)?;
                if line.trim().is_empty() {
                    println!();
                    continue;
                }
                print(session.translate(&line, &mut |_| {})?)?;
                io::stdout().flush().ok();
            }
        }
    }
    Ok(())
}

fn chat(a: ChatArgs) -> Result<(), Failure> {
    let engine = load_engine(&a.model.model)?;
    let session = make_session(&engine, a.dir, &a.gen);
    let generating = Arc::new(AtomicBool::new(false));
    {
        let cancel = session.cancel_handle();
        let generating = generating.clone();
        // Ctrl-C cancels a running turn; at the prompt it exits
        let _ = ctrlc::set_handler(move || {
            if generating.load(Ordering::SeqCst) {
                cancel.store(true, Ordering::SeqCst);
            } else {
                std::process::exit(130);
            }
        });
    }
    let mut out = io::stdout();
    let _ = writeln!(
        out,
        "vien chat ({}). /swap toggles direction, /dir vi-en|en-vi sets it, /quit exits.",
        session.direction()
    );
    let stdin = io::stdin();
    let mut lines = stdin.lock().lines();
    loop {
        let _ = write!(out, "{}> ", session.direction());
        let _ = out.flush();
        let Some(line) = lines.next() else { break };
        let line = line.map_err(anyhow::Error::from)?;
        let input = line.trim();
        match input {
            "" => continue,
            "/quit" | "/exit" | "/q" => break,
            "/swap" | "/toggle" => {
                session.set_direction(session.direction().reversed());
                let _ = writeln!(out, "direction: {}", session.direction());
                continue;
            }
            _ => {}
        }
        if let Some(arg) = input.strip_prefix("/dir") {
            match arg.trim().parse::<Direction>() {
                Ok(d) => {
                    session.set_direction(d);
                    let _ = writeln!(out, "direction: {d}");
                }
                Err(e) => {
                    let _ = writeln!(out, "{e}");
                }
            }
            continue;
        }
        generating.store(true, Ordering::SeqCst);
        let mut raw = String::new();
        let result = session.translate(input, &mut |t| {
            raw.push_str(&t.text);
            let _ = write!(io::stdout(), "{}", t.text);
            let _ = io::stdout().flush();
        });
        generating.store(false, Ordering::SeqCst);
        let _ = writeln!(out);
        match result {
            Ok(turn) => {
                if turn.output_text != raw.trim() {
                    let _ = writeln!(out, "= {}", turn.output_text);
                }
                let _ = writeln!(out, "  [{}]", timing_line(&turn));
            }
            Err(PipelineError::Cancelled) => {
                let _ = writeln!(out, "  [cancelled]");
            }
            Err(e) => {
                let _ = writeln!(out, "  [error: {e}]");
            }
        }
    }
    Ok(())
}

fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn print_bench(r: &BenchReport) {
    let s = &r.ms_per_sentence;
    println!(
        "prompt set   {} ({} sentences × {} reps, {} warm-up runs excluded)",
        r.prompt_set_id, r.sentences, r.reps, r.warmup_runs
    );
    println!("timed runs   {}", r.timed_runs);
    println!("tokens/sec   {:.2}", r.tokens_per_sec);
    println!(
        "ms/sentence  mean {:.2}  p50 {:.2}  p95 {:.2}  min {:.2}  max {:.2}",
        s.mean, s.p50, s.p95, s.min, s.max
    );
    println!("tokens       {} generated, {} prompt", r.generated_tokens, r.prompt_tokens);
    let peak = r.peak_resident_memory_bytes as f64;
    println!(
        "peak memory  {} ({:+.1}% vs 3.17 GB reference)",
        human_bytes(peak),
        (peak - REFERENCE_PEAK_BYTES) / REFERENCE_PEAK_BYTES * 100.0
    );
}

fn bench_cmd(a: BenchArgs) -> Result<(), Failure> {
    let prompts: Vec<String> = match &a.prompts {
        Some(path) => read_lines(path)?,
        None => match a.dir {
            Direction::EnToVi => PROMPTS_EN,
            Direction::ViToEn => PROMPTS_VI,
        }
        .iter()
        .map(|s| s.to_string())
        .collect(),
    };
    let engine = load_engine(&a.model.model)?;
    let session = make_session(&engine, a.dir, &a.gen);
    let opts = BenchOptions {
        reps: a.reps,
        direction: a.dir,
        warmup_passes: a.warmup,
    };
    let report = bench(&session, &prompts, &opts).map_err(unwrap_eval)?;
    if !a.out.json {
        print_bench(&report);
    }
    emit_json(&report, &a.out)?;
    Ok(())
}

/// Pipeline errors keep their exit codes when wrapped by the eval layer.
fn unwrap_eval(e: vien_core::eval::EvalError) -> Failure {
    match e {
        vien_core::eval::EvalError::Pipeline(p) => p.into(),
        other => other.into(),
    }
}

fn smoothing(s: SmoothingArg) -> Smoothing {
    match s {
        SmoothingArg::None => Smoothing::None,
        SmoothingArg::AddOne => Smoothing::AddOne,
    }
}

/// Plain lines, or the second column of `source<TAB>target` lines.
fn side_column(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .map(|l| l.split_once('\t').map_or(l, |(_, t)| t).to_string())
        .collect())
}

fn load_testset(path: &Path) -> anyhow::Result<Vec<ParallelPair>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (pairs, malformed) = parse_tsv(&text, &path.to_string_lossy());
    if malformed > 0 {
        tracing::warn!("{}: skipped {malformed} malformed lines", path.display());
    }
    Ok(pairs)
}

fn print_bleu(r: &BleuReport) {
    println!("BLEU         {:.4} ({:.2})", r.score, r.score_100);
    let ps: Vec<String> = r
        .precisions
        .iter()
        .enumerate()
        .map(|(i, p)| match p {
            Some(p) => format!("p{} {:.4} ({}/{})", i + 1, p, r.matches[i], r.totals[i]),
            None => format!("p{} n/a", i + 1),
        })
        .collect();
    println!("precisions   {}", ps.join("  "));
    println!("brevity      {:.4} (hyp {} / ref {} tokens)", r.brevity_penalty, r.hyp_len, r.ref_len);
    println!("smoothing    {:?}", r.smoothing);
}

fn eval_cmd(a: EvalArgs) -> Result<(), Failure> {
    let opts = BleuOptions {
        max_n: a.max_n,
        smoothing: smoothing(a.smoothing),
    };
    let (hyps, refs) = match (&a.hyp, &a.reference, &a.testset, &a.model) {
        (Some(h), Some(r), _, _) => (side_column(h)?, side_column(r)?),
        (None, _, Some(testset), Some(model)) => {
            let pairs = load_testset(testset)?;
            let engine = load_engine(model)?;
            let session = make_session(&engine, a.dir, &a.gen);
            let mut hyps = Vec::with_capacity(pairs.len());
            for p in &pairs {
                hyps.push(session.translate(&p.source, &mut |_| {})?.output_text);
            }
            (hyps, pairs.into_iter().map(|p| p.target).collect())
        }
        _ => return Err(anyhow!("give --hyp and --ref, or --testset with --model").into()),
    };
    let report = bleu(&hyps, &refs, &opts).map_err(unwrap_eval)?;
    if !a.out.json {
        print_bleu(&report);
    }
    emit_json(&report, &a.out)?;
    Ok(())
}

fn clean_cmd(a: CleanArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let rules = CleaningRules {
        min_ratio: a.min_ratio,
        max_ratio: a.max_ratio,
    };
    let (kept, report) = clean_tsv(&text, &a.input.to_string_lossy(), &rules);
    if let Some(path) = &a.output {
        let body: String = kept.iter().map(|p| format!("{}\t{}\n", p.source, p.target)).collect();
        fs::write(path, body).with_context(|| format!("writing {}", path.display()))?;
    }
    if !a.out.json {
        let r = &report.removed;
        println!("input        {}", report.input_count);
        println!("kept         {}", report.kept_count);
        println!(
            "removed      {} (duplicates {}, empties {}, ratio outliers {}, malformed {})",
            r.total(),
            r.duplicates,
            r.empties,
            r.ratio_outliers,
            r.malformed
        );
        println!("NFC repairs  {}", r.encoding_fixes);
    }
    emit_json(&report, &a.out)?;
    Ok(())
}

fn print_compare(r: &ComparisonReport) {
    println!("{:<14} {:>16} {:>16}", "", "A", "B");
    println!("{:<14} {:>16} {:>16}", "file", file_label(&r.path_a), file_label(&r.path_b));
    println!("{:<14} {:>16} {:>16}", "bytes", r.size_a, r.size_b);
    println!(
        "{:<14} {:>16.2} {:>16.2}",
        "ms/sentence", r.bench_a.ms_per_sentence.mean, r.bench_b.ms_per_sentence.mean
    );
    println!("{:<14} {:>16.2} {:>16.2}", "tokens/sec", r.bench_a.tokens_per_sec, r.bench_b.tokens_per_sec);
    println!("{:<14} {:>16.4} {:>16.4}", "BLEU", r.bleu_a.score, r.bleu_b.score);
    println!();
    println!("size reduction {:.2}%", r.size_reduction_pct);
    println!("speedup        {:.2}%", r.speedup_pct);
    println!("BLEU delta     {:+.4} ({:+.2} on 0-100)", r.bleu_delta, r.bleu_delta_100);
}

fn file_label(p: &Path) -> String {
    p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn compare_cmd(a: CompareArgs) -> Result<(), Failure> {
    let testset = match &a.testset {
        Some(path) => load_testset(path)?,
        None => TOY_TESTSET
            .iter()
            .map(|(en, vi)| match a.dir {
                Direction::EnToVi => ParallelPair::new(*en, *vi, "toy"),
                Direction::ViToEn => ParallelPair::new(*vi, *en, "toy"),
            })
            .collect(),
    };
    let opts = CompareOptions {
        bench: BenchOptions {
            reps: a.reps,
            direction: a.dir,
            warmup_passes: 1,
        },
        bleu: BleuOptions {
            smoothing: smoothing(a.smoothing),
            ..BleuOptions::default()
        },
        max_new_tokens: Some(a.gen.max_tokens),
    };
    let report = compare_quants(&a.model_a, &a.model_b, &testset, &opts).map_err(unwrap_eval)?;
    if !a.out.json {
        print_compare(&report);
    }
    emit_json(&report, &a.out)?;
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<(), Failure> {
    let engine = load_engine(&a.model.model)?;
    let file = engine.model.file().clone();
    let name = model_name(&file, &a.model.model);
    let config = ServiceConfig {
        addr: a.addr,
        allow_nonlocal: a.allow_nonlocal,
        queue_depth: a.queue_depth,
        busy_timeout: Duration::from_millis(a.busy_timeout_ms),
    };
    let state = Arc::new(AppState::new(
        make_session(&engine, Direction::ViToEn, &a.gen),
        name,
        file.quant_label(),
        &config,
    ));
    let rt = tokio::runtime::Runtime::new().map_err(anyhow::Error::from)?;
    rt.block_on(async move {
        let listener = service::bind(&config).await?;
        let addr = listener.local_addr()?;
        eprintln!("listening on http://{addr}");
        tokio::select! {
            r = service::serve_listener(listener, service::router(state), config.allow_nonlocal) => r?,
            _ = tokio::signal::ctrl_c() => eprintln!("shutting down"),
        }
        Ok::<_, anyhow::Error>(())
    })?;
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Failure> {
    let mut model = TinyModel::chat(a.qtype);
    model.seed = a.seed;
    let bytes = model.bytes()?;
    fs::write(&a.output, &bytes).with_context(|| format!("writing {}", a.output.display()))?;
    eprintln!("wrote {} ({} bytes)", a.output.display(), bytes.len());
    Ok(())
}

fn quantize(a: QuantizeArgs) -> Result<(), Failure> {
    let file = open_gguf(&a.input)?;
    let spec = requantize(&file, a.qtype)?;
    let mut out = io::BufWriter::new(fs::File::create(&a.output).with_context(|| format!("creating {}", a.output.display()))?);
    let n = gguf::write_to(&spec, &mut out)?;
    out.flush().map_err(anyhow::Error::from)?;
    eprintln!("wrote {} ({n} bytes)", a.output.display());
    Ok(())
}
