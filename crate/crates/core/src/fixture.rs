//! Synthetic inputs for tests, benches and demos: random GGUF specs and tiny
//! Llama models with a small byte-level vocabulary.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gguf::{GgufSpec, MetaTag, MetaValue};
use crate::quant::{GgmlType, QuantType};

fn random_scalar(rng: &mut ChaCha8Rng, tag: MetaTag) -> MetaValue {
    match tag {
        MetaTag::U8 => MetaValue::U8(rng.gen()),
        MetaTag::I8 => MetaValue::I8(rng.gen()),
        MetaTag::U16 => MetaValue::U16(rng.gen()),
        MetaTag::I16 => MetaValue::I16(rng.gen()),
        MetaTag::U32 => MetaValue::U32(rng.gen()),
        MetaTag::I32 => MetaValue::I32(rng.gen()),
        MetaTag::U64 => MetaValue::U64(rng.gen()),
        MetaTag::I64 => MetaValue::I64(rng.gen()),
        MetaTag::F32 => MetaValue::F32(rng.gen_range(-1e6f32..1e6)),
        MetaTag::F64 => MetaValue::F64(rng.gen_range(-1e12f64..1e12)),
        MetaTag::Bool => MetaValue::Bool(rng.gen()),
        MetaTag::String => MetaValue::String(random_text(rng)),
        MetaTag::Array => unreachable!("arrays are built by random_value"),
    }
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &["llama", "▁", "Tiếng Việt", "ờ", "🙂", "{{ x }}", "\n", "", "a b", "\u{0}"];
    (0..rng.gen_range(0..5)).map(|_| *PIECES.choose(rng).unwrap()).collect()
}

const SCALAR_TAGS: [MetaTag; 12] = [
    MetaTag::U8,
    MetaTag::I8,
    MetaTag::U16,
    MetaTag::I16,
    MetaTag::U32,
    MetaTag::I32,
    MetaTag::F32,
    MetaTag::Bool,
    MetaTag::String,
    MetaTag::U64,
    MetaTag::I64,
    MetaTag::F64,
];

fn random_value(rng: &mut ChaCha8Rng, depth: usize) -> MetaValue {
    if depth < 2 && rng.gen_bool(0.3) {
        // homogeneous: pick the element shape once
        let nested = depth < 1 && rng.gen_bool(0.2);
        let elem = if nested { MetaTag::Array } else { *SCALAR_TAGS.choose(rng).unwrap() };
        let n = rng.gen_range(0..6);
        let mut items = Vec::with_capacity(n);
        for _ in 0..n {
            if nested {
                let t = *SCALAR_TAGS.choose(rng).unwrap();
                let inner = (0..rng.gen_range(0..3)).map(|_| random_scalar(rng, t)).collect();
                items.push(MetaValue::Array(t, inner));
            } else {
                items.push(random_scalar(rng, elem));
            }
        }
        MetaValue::Array(elem, items)
    } else {
        let t = *SCALAR_TAGS.choose(rng).unwrap();
        random_scalar(rng, t)
    }
}

/// Random well-formed spec: mixed metadata shapes, alignments and tensor
/// types (including one known type this crate cannot compute with).
pub fn random_gguf_spec(seed: u64) -> GgufSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let alignment = *[8u64, 16, 32, 32, 64, 128].choose(&mut rng).unwrap();
    let mut spec = GgufSpec::with_alignment(alignment);
    spec.metadata.insert("general.architecture".into(), "llama".into());
    for i in 0..rng.gen_range(0..10) {
        let value = random_value(&mut rng, 0);
        spec.metadata.insert(format!("fixture.key{i}.{}", value.tag()), value);
    }
    let mut types: Vec<GgmlType> = QuantType::ALL.iter().map(|q| q.ggml_type()).collect();
    types.push(GgmlType(2)); // Q4_0
    for i in 0..rng.gen_range(0..6) {
        let ty = *types.choose(&mut rng).unwrap();
        let (be, bb) = ty.geometry().unwrap();
        let ne0 = be as u64 * rng.gen_range(1..4);
        let mut dims = vec![ne0];
        for _ in 0..rng.gen_range(0..3) {
            dims.push(rng.gen_range(1..4));
        }
        let n: u64 = dims.iter().product();
        let data: Vec<u8> = (0..n as usize / be * bb).map(|_| rng.gen()).collect();
        spec.push_tensor(&format!("blk.{i}.weight"), dims, ty, data);
    }
    spec
}

/// Vocabulary written into a generated model.
#[derive(Debug, Clone)]
pub enum FixtureVocab {
    /// Only `llama.vocab_size`; no tokenizer metadata.
    Bare(usize),
    /// [`synthetic_vocab`]: byte fallback plus English and Vietnamese words.
    Synthetic,
    /// Explicit `(pieces, scores, token types)`.
    Pieces(Vec<String>, Vec<f32>, Vec<i32>),
}

impl FixtureVocab {
    /// Copies the token arrays of an existing file.
    pub fn from_gguf(file: &crate::gguf::GgufFile) -> Result<Self, crate::gguf::GgufError> {
        let strings = file.get_array("tokenizer.ggml.tokens")?;
        let scores = file.get_array("tokenizer.ggml.scores")?;
        let types = file.get_array("tokenizer.ggml.token_type")?;
        Ok(FixtureVocab::Pieces(
            strings.iter().map(|v| v.as_str().unwrap_or_default().to_string()).collect(),
            scores.iter().map(|v| v.as_f64().unwrap_or(0.0) as f32).collect(),
            types.iter().map(|v| v.as_i64().unwrap_or(1) as i32).collect(),
        ))
    }
}

/// Shape and contents of a generated Llama model.
#[derive(Debug, Clone)]
pub struct TinyModel {
    pub n_layers: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub ffn_hidden_dim: usize,
    pub context_len: usize,
    pub vocab: FixtureVocab,
    /// Storage type of the matrices; norms are always F32.
    pub weight_type: QuantType,
    pub rope_theta: Option<f32>,
    pub rmsnorm_eps: Option<f32>,
    pub chat_template: Option<String>,
    /// Write a separate `output.weight` instead of tying it to the embedding.
    pub untied_output: bool,
    pub seed: u64,
}

impl TinyModel {
    /// 2 layers, embed 8, 2 heads, 1 KV head, vocab 16, F32.
    pub fn oracle() -> Self {
        TinyModel {
            n_layers: 2,
            embed_dim: 8,
            n_heads: 2,
            n_kv_heads: 1,
            ffn_hidden_dim: 16,
            context_len: 64,
            vocab: FixtureVocab::Bare(16),
            weight_type: QuantType::F32,
            rope_theta: Some(10000.0),
            rmsnorm_eps: Some(1e-5),
            chat_template: None,
            untied_output: true,
            seed: 42,
        }
    }

    /// Small model over [`synthetic_vocab`], wide enough for K-quant rows.
    pub fn chat(weight_type: QuantType) -> Self {
        TinyModel {
            n_layers: 2,
            embed_dim: 256,
            n_heads: 4,
            n_kv_heads: 2,
            ffn_hidden_dim: 512,
            context_len: 512,
            vocab: FixtureVocab::Synthetic,
            weight_type,
            rope_theta: None,
            rmsnorm_eps: None,
            chat_template: None,
            untied_output: true,
            seed: 7,
        }
    }

    fn vocab_parts(&self) -> (Vec<String>, Vec<f32>, Vec<i32>) {
        match &self.vocab {
            FixtureVocab::Bare(_) => (Vec::new(), Vec::new(), Vec::new()),
            FixtureVocab::Synthetic => synthetic_vocab(),
            FixtureVocab::Pieces(p, s, t) => (p.clone(), s.clone(), t.clone()),
        }
    }

    /// Builds the file contents. Fails when a matrix row length is not a
    /// multiple of the weight type's block size.
    pub fn spec(&self) -> Result<GgufSpec, crate::quant::QuantError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = rand_distr::StandardNormal;
        let (pieces, scores, types) = self.vocab_parts();
        let vocab_size = match self.vocab {
            FixtureVocab::Bare(n) => n,
            _ => pieces.len(),
        };
        let mut spec = GgufSpec::new();
        let m = &mut spec.metadata;
        m.insert("general.architecture".into(), "llama".into());
        m.insert("general.name".into(), "vien fixture".into());
        m.insert("llama.block_count".into(), MetaValue::U32(self.n_layers as u32));
        m.insert("llama.embedding_length".into(), MetaValue::U32(self.embed_dim as u32));
        m.insert("llama.attention.head_count".into(), MetaValue::U32(self.n_heads as u32));
        m.insert("llama.attention.head_count_kv".into(), MetaValue::U32(self.n_kv_heads as u32));
        m.insert("llama.feed_forward_length".into(), MetaValue::U32(self.ffn_hidden_dim as u32));
        m.insert("llama.context_length".into(), MetaValue::U32(self.context_len as u32));
        m.insert("llama.vocab_size".into(), MetaValue::U32(vocab_size as u32));
        if let Some(t) = self.rope_theta {
            m.insert("llama.rope.freq_base".into(), MetaValue::F32(t));
        }
        if let Some(e) = self.rmsnorm_eps {
            m.insert("llama.attention.layer_norm_rms_epsilon".into(), MetaValue::F32(e));
        }
        if !pieces.is_empty() {
            m.insert("tokenizer.ggml.model".into(), "llama".into());
            m.insert(
                "tokenizer.ggml.tokens".into(),
                MetaValue::Array(MetaTag::String, pieces.into_iter().map(MetaValue::String).collect()),
            );
            m.insert(
                "tokenizer.ggml.scores".into(),
                MetaValue::Array(MetaTag::F32, scores.into_iter().map(MetaValue::F32).collect()),
            );
            m.insert(
                "tokenizer.ggml.token_type".into(),
                MetaValue::Array(MetaTag::I32, types.into_iter().map(MetaValue::I32).collect()),
            );
            m.insert("tokenizer.ggml.bos_token_id".into(), MetaValue::U32(1));
            m.insert("tokenizer.ggml.eos_token_id".into(), MetaValue::U32(2));
            m.insert("tokenizer.ggml.unknown_token_id".into(), MetaValue::U32(0));
        }
        if let Some(t) = &self.chat_template {
            m.insert("tokenizer.chat_template".into(), t.as_str().into());
        }

        let (e, f) = (self.embed_dim, self.ffn_hidden_dim);
        let kv = self.n_kv_heads * (e / self.n_heads);
        let mut matrix = |spec: &mut GgufSpec, name: &str, cols: usize, rows: usize| {
            let std = 1.0 / (cols as f32).sqrt();
            let data: Vec<f32> = (0..cols * rows)
                .map(|_| rng.sample::<f32, _>(normal) * std)
                .collect();
            let bytes = crate::quant::quantize(self.weight_type, &data)?;
            spec.push_tensor(name, vec![cols as u64, rows as u64], self.weight_type.ggml_type(), bytes);
            Ok::<_, crate::quant::QuantError>(())
        };
        let mut norms = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        let mut norm = |spec: &mut GgufSpec, name: &str| {
            let w: Vec<f32> = (0..e).map(|_| 1.0 + norms.gen_range(-0.1f32..0.1)).collect();
            spec.push_tensor(name, vec![e as u64], GgmlType(0), w.iter().flat_map(|v| v.to_le_bytes()).collect());
        };

        matrix(&mut spec, "token_embd.weight", e, vocab_size)?;
        for i in 0..self.n_layers {
            norm(&mut spec, &format!("blk.{i}.attn_norm.weight"));
            matrix(&mut spec, &format!("blk.{i}.attn_q.weight"), e, e)?;
            matrix(&mut spec, &format!("blk.{i}.attn_k.weight"), e, kv)?;
            matrix(&mut spec, &format!("blk.{i}.attn_v.weight"), e, kv)?;
            matrix(&mut spec, &format!("blk.{i}.attn_output.weight"), e, e)?;
            norm(&mut spec, &format!("blk.{i}.ffn_norm.weight"));
            matrix(&mut spec, &format!("blk.{i}.ffn_gate.weight"), e, f)?;
            matrix(&mut spec, &format!("blk.{i}.ffn_up.weight"), e, f)?;
            matrix(&mut spec, &format!("blk.{i}.ffn_down.weight"), f, e)?;
        }
        norm(&mut spec, "output_norm.weight");
        if self.untied_output {
            matrix(&mut spec, "output.weight", e, vocab_size)?;
        }
        Ok(spec)
    }

    /// Serialized file bytes.
    pub fn bytes(&self) -> Result<Vec<u8>, crate::gguf::GgufError> {
        crate::gguf::write(&self.spec()?)
    }

    /// Parsed, in-memory model file.
    pub fn file(&self) -> Result<crate::gguf::GgufFile, crate::gguf::GgufError> {
        crate::gguf::GgufFile::from_bytes(self.bytes()?)
    }
}

/// Common English and Vietnamese words, used for the synthetic vocabulary
/// and for generated corpora.
pub const EN_WORDS: &[&str] = &[
    "the", "a", "is", "are", "I", "you", "we", "they", "it", "this", "that", "to", "of", "and",
    "in", "on", "for", "with", "please", "thank", "hello", "goodbye", "where", "what", "how",
    "when", "why", "who", "want", "need", "like", "have", "go", "come", "eat", "drink", "see",
    "know", "speak", "understand", "help", "today", "tomorrow", "yesterday", "morning", "night",
    "weather", "nice", "good", "bad", "big", "small", "hot", "cold", "water", "coffee", "tea",
    "rice", "noodle", "soup", "market", "station", "train", "bus", "hotel", "room", "hospital",
    "doctor", "friend", "family", "city", "street", "money", "price", "cheap", "expensive",
    "how much", "very", "much", "many", "one", "two", "three", "Vietnamese", "English",
    "translate", "sentence", "language", "Hanoi", "Saigon", "book", "ticket", "airport",
];

pub const VI_WORDS: &[&str] = &[
    "tôi", "bạn", "chúng", "họ", "nó", "này", "đó", "và", "của", "trong", "trên", "cho", "với",
    "xin", "chào", "cảm", "ơn", "tạm", "biệt", "ở", "đâu", "gì", "thế", "nào", "khi", "tại", "sao",
    "ai", "muốn", "cần", "thích", "có", "đi", "đến", "ăn", "uống", "thấy", "biết", "nói", "hiểu",
    "giúp", "hôm", "nay", "mai", "qua", "sáng", "tối", "thời", "tiết", "đẹp", "tốt", "xấu", "lớn",
    "nhỏ", "nóng", "lạnh", "nước", "cà", "phê", "trà", "cơm", "phở", "canh", "chợ", "ga", "tàu",
    "xe", "buýt", "khách", "sạn", "phòng", "bệnh", "viện", "bác", "sĩ", "bạn bè", "gia", "đình",
    "thành", "phố", "đường", "tiền", "giá", "rẻ", "đắt", "bao", "nhiêu", "rất", "nhiều", "một",
    "hai", "ba", "tiếng", "Việt", "Anh", "dịch", "câu", "ngôn", "ngữ", "Hà", "Nội", "sách", "vé",
    "sân", "bay", "không", "được", "là", "người",
];

/// Toy SentencePiece vocabulary: `<unk>`, `<s>`, `</s>`, the 256 byte
/// tokens, single characters and every `▁`-prefixed prefix of the words in
/// [`EN_WORDS`] and [`VI_WORDS`], so whole words merge in one chain.
pub fn synthetic_vocab() -> (Vec<String>, Vec<f32>, Vec<i32>) {
    let mut pieces: Vec<String> = vec!["<unk>".into(), "<s>".into(), "</s>".into()];
    let mut types = vec![2, 3, 3];
    for b in 0..=255u8 {
        pieces.push(format!("<0x{b:02X}>"));
        types.push(6);
    }
    let mut seen: std::collections::HashSet<String> = pieces.iter().cloned().collect();
    let mut normal = Vec::new();
    let mut add = |p: String, normal: &mut Vec<String>| {
        if seen.insert(p.clone()) {
            normal.push(p);
        }
    };
    add("▁".into(), &mut normal);
    let words = EN_WORDS.iter().chain(VI_WORDS).chain(&["<|system|>", "<|user|>", "<|assistant|>"]);
    for w in words.clone() {
        for part in w.split(' ') {
            for c in part.chars().chain("\n.,!?:".chars()) {
                add(c.to_string(), &mut normal);
            }
        }
    }
    for w in words {
        for part in w.split(' ') {
            let marked = format!("▁{part}");
            let ends: Vec<usize> = marked.char_indices().map(|(i, _)| i).skip(2).chain([marked.len()]).collect();
            for end in ends {
                add(marked[..end].to_string(), &mut normal);
            }
            // unmarked copies for words glued to a preceding marker or newline
            let ends: Vec<usize> = part.char_indices().map(|(i, _)| i).skip(2).chain([part.len()]).collect();
            for end in ends {
                add(part[..end].to_string(), &mut normal);
            }
        }
    }
    let mut scores = vec![0.0; pieces.len()];
    for p in normal {
        // longer pieces win merges
        scores.push(p.chars().count() as f32 - pieces.len() as f32 * 1e-4);
        pieces.push(p);
        types.push(1);
    }
    (pieces, scores, types)
}
