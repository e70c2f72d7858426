//! Llama-2 SentencePiece tokenizer driven entirely by GGUF metadata.
//!
//! Encoding follows the reference SPM merge loop: the text is split into
//! UTF-8 characters and the highest-scoring adjacent pair that forms a vocab
//! piece is merged until none remain. Characters without a piece fall back to
//! `<0xXX>` byte tokens.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::ops::Range;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::gguf::{GgufError, GgufFile, MetaValue};

pub type TokenId = u32;

const SPACE_MARKER: char = '\u{2581}';

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("missing tokenizer metadata {0:?}")]
    MissingTokenizerMetadata(String),
    #[error("unsupported tokenizer model {0:?} (only \"llama\" is supported)")]
    UnsupportedTokenizer(String),
    #[error("vocab size mismatch: {0}")]
    VocabSizeMismatch(String),
    #[error("special token {name} id {id} is out of range")]
    InvalidSpecialToken { name: &'static str, id: u64 },
    #[error("byte fallback is enabled but token {0:?} is missing")]
    MissingByteToken(String),
    #[error("invalid token id {0}")]
    InvalidTokenId(TokenId),
    #[error(transparent)]
    Gguf(#[from] GgufError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenType {
    Normal,
    Unknown,
    Control,
    UserDefined,
    Unused,
    Byte,
}

impl TokenType {
    fn from_id(id: i64) -> Self {
        match id {
            2 => TokenType::Unknown,
            3 => TokenType::Control,
            4 => TokenType::UserDefined,
            5 => TokenType::Unused,
            6 => TokenType::Byte,
            _ => TokenType::Normal,
        }
    }

    pub fn id(self) -> i32 {
        match self {
            TokenType::Normal => 1,
            TokenType::Unknown => 2,
            TokenType::Control => 3,
            TokenType::UserDefined => 4,
            TokenType::Unused => 5,
            TokenType::Byte => 6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Vocab {
    pieces: Vec<String>,
    scores: Vec<f32>,
    types: Vec<TokenType>,
    piece_to_id: HashMap<String, TokenId>,
    byte_tokens: Option<[TokenId; 256]>,
    /// Tokens matched verbatim before merging, longest text first.
    specials: Vec<TokenId>,
    pub bos_id: TokenId,
    pub eos_id: TokenId,
    pub unk_id: TokenId,
    pub pad_id: Option<TokenId>,
    pub add_bos: bool,
    pub add_space_prefix: bool,
}

fn meta_array<'a>(file: &'a GgufFile, key: &str) -> Result<&'a [MetaValue], TokenizerError> {
    match file.get_array(key) {
        Ok(a) => Ok(a),
        Err(GgufError::NotFound(_)) => Err(TokenizerError::MissingTokenizerMetadata(key.into())),
        Err(e) => Err(e.into()),
    }
}

fn optional_uint(file: &GgufFile, key: &str) -> Result<Option<u64>, TokenizerError> {
    match file.get_uint(key) {
        Ok(v) => Ok(Some(v)),
        Err(GgufError::NotFound(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn optional_bool(file: &GgufFile, key: &str) -> Option<bool> {
    file.metadata.get(key).and_then(MetaValue::as_bool)
}

impl Vocab {
    /// Reads `tokenizer.ggml.*` metadata.
    pub fn from_gguf(file: &GgufFile) -> Result<Self, TokenizerError> {
        let model = file
            .get_str("tokenizer.ggml.model")
            .map_err(|_| TokenizerError::MissingTokenizerMetadata("tokenizer.ggml.model".into()))?;
        if model != "llama" {
            return Err(TokenizerError::UnsupportedTokenizer(model.into()));
        }
        let tokens = meta_array(file, "tokenizer.ggml.tokens")?;
        let scores = meta_array(file, "tokenizer.ggml.scores")?;
        let types = meta_array(file, "tokenizer.ggml.token_type")?;
        let n = tokens.len();
        if scores.len() != n || types.len() != n {
            return Err(TokenizerError::VocabSizeMismatch(format!(
                "{n} tokens, {} scores, {} token types",
                scores.len(),
                types.len()
            )));
        }
        if let Some(declared) = optional_uint(file, "llama.vocab_size")? {
            if declared != n as u64 {
                return Err(TokenizerError::VocabSizeMismatch(format!(
                    "metadata declares {declared}, token list has {n}"
                )));
            }
        }
        let bad = |what: &str| TokenizerError::Gguf(GgufError::MalformedMetadata(format!("non-{what} entry in tokenizer array")));
        let pieces = tokens
            .iter()
            .map(|v| v.as_str().map(str::to_string).ok_or_else(|| bad("string")))
            .collect::<Result<Vec<_>, _>>()?;
        let scores = scores
            .iter()
            .map(|v| v.as_f64().map(|f| f as f32).ok_or_else(|| bad("float")))
            .collect::<Result<Vec<_>, _>>()?;
        let types = types
            .iter()
            .map(|v| v.as_i64().map(TokenType::from_id).ok_or_else(|| bad("integer")))
            .collect::<Result<Vec<_>, _>>()?;

        let special = |key: &str, name: &'static str, default: u64| -> Result<TokenId, TokenizerError> {
            let id = optional_uint(file, key)?.unwrap_or(default);
            if id >= n as u64 {
                return Err(TokenizerError::InvalidSpecialToken { name, id });
            }
            Ok(id as TokenId)
        };
        let bos_id = special("tokenizer.ggml.bos_token_id", "bos", 1)?;
        let eos_id = special("tokenizer.ggml.eos_token_id", "eos", 2)?;
        let unk_id = special("tokenizer.ggml.unknown_token_id", "unk", 0)?;
        let pad_id = match optional_uint(file, "tokenizer.ggml.padding_token_id")? {
            Some(id) if id < n as u64 => Some(id as TokenId),
            Some(id) => return Err(TokenizerError::InvalidSpecialToken { name: "pad", id }),
            None => None,
        };

        Self::build(
            pieces,
            scores,
            types,
            bos_id,
            eos_id,
            unk_id,
            pad_id,
            optional_bool(file, "tokenizer.ggml.add_bos_token").unwrap_or(true),
            optional_bool(file, "tokenizer.ggml.add_space_prefix").unwrap_or(true),
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        pieces: Vec<String>,
        scores: Vec<f32>,
        types: Vec<TokenType>,
        bos_id: TokenId,
        eos_id: TokenId,
        unk_id: TokenId,
        pad_id: Option<TokenId>,
        add_bos: bool,
        add_space_prefix: bool,
    ) -> Result<Self, TokenizerError> {
        let mut piece_to_id = HashMap::with_capacity(pieces.len());
        for (id, p) in pieces.iter().enumerate() {
            // first occurrence wins, as in the reference loader's map insert
            piece_to_id.entry(p.clone()).or_insert(id as TokenId);
        }
        let byte_tokens = if types.contains(&TokenType::Byte) {
            let mut table = [0; 256];
            for (b, slot) in table.iter_mut().enumerate() {
                let piece = format!("<0x{b:02X}>");
                *slot = *piece_to_id
                    .get(&piece)
                    .ok_or(TokenizerError::MissingByteToken(piece))?;
            }
            Some(table)
        } else {
            None
        };
        let mut specials: Vec<TokenId> = (0..pieces.len() as TokenId)
            .filter(|&id| {
                matches!(
                    types[id as usize],
                    TokenType::Control | TokenType::UserDefined | TokenType::Unknown
                ) && !pieces[id as usize].is_empty()
            })
            .collect();
        specials.sort_by(|&a, &b| pieces[b as usize].len().cmp(&pieces[a as usize].len()).then(a.cmp(&b)));
        Ok(Vocab {
            pieces,
            scores,
            types,
            piece_to_id,
            byte_tokens,
            specials,
            bos_id,
            eos_id,
            unk_id,
            pad_id,
            add_bos,
            add_space_prefix,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn piece(&self, id: TokenId) -> Result<&str, TokenizerError> {
        self.pieces
            .get(id as usize)
            .map(String::as_str)
            .ok_or(TokenizerError::InvalidTokenId(id))
    }

    pub fn score(&self, id: TokenId) -> Option<f32> {
        self.scores.get(id as usize).copied()
    }

    pub fn token_type(&self, id: TokenId) -> Option<TokenType> {
        self.types.get(id as usize).copied()
    }

    pub fn token_id(&self, piece: &str) -> Option<TokenId> {
        self.piece_to_id.get(piece).copied()
    }

    pub fn has_byte_fallback(&self) -> bool {
        self.byte_tokens.is_some()
    }

    /// NFC-normalizes `text` and encodes it. Special-token text is treated as
    /// ordinary characters, so user input can never produce control tokens.
    pub fn encode(&self, text: &str, add_bos: bool) -> Vec<TokenId> {
        let text: String = text.nfc().collect();
        let mut out = Vec::new();
        if add_bos {
            out.push(self.bos_id);
        }
        if !text.is_empty() {
            self.encode_fragment(&text, true, &mut out);
        }
        out
    }

    /// Encodes `text` as is (no normalization), matching control and
    /// user-defined token texts verbatim. Matches that intersect any range in
    /// `protected` are ignored, so a caller can splice untrusted text into a template.
    pub fn encode_with_specials(&self, text: &str, add_bos: bool, protected: &[Range<usize>]) -> Vec<TokenId> {
        let mut out = Vec::new();
        if add_bos {
            out.push(self.bos_id);
        }
        let mut prev_special = true;
        for frag in self.partition(text, protected) {
            match frag {
                Fragment::Text(r) => {
                    self.encode_fragment(&text[r], prev_special, &mut out);
                    prev_special = false;
                }
                Fragment::Token(id) => {
                    out.push(id);
                    prev_special = true;
                }
            }
        }
        out
    }

    fn partition(&self, text: &str, protected: &[Range<usize>]) -> Vec<Fragment> {
        let mut frags = vec![Fragment::Text(0..text.len())];
        if text.is_empty() {
            return Vec::new();
        }
        for &id in &self.specials {
            let needle = self.pieces[id as usize].as_str();
            let mut next = Vec::with_capacity(frags.len());
            for frag in frags {
                let Fragment::Text(range) = frag else {
                    next.push(frag);
                    continue;
                };
                let mut start = range.start;
                let mut search = range.start;
                while let Some(pos) = text[search..range.end].find(needle) {
                    let m = search + pos;
                    let end = m + needle.len();
                    if protected.iter().any(|p| m < p.end && p.start < end) {
                        search = m + text[m..].chars().next().map_or(1, char::len_utf8);
                        continue;
                    }
                    if m > start {
                        next.push(Fragment::Text(start..m));
                    }
                    next.push(Fragment::Token(id));
                    start = end;
                    search = end;
                }
                if start < range.end {
                    next.push(Fragment::Text(start..range.end));
                }
            }
            frags = next;
        }
        frags
    }

    fn encode_fragment(&self, text: &str, prefix_space: bool, out: &mut Vec<TokenId>) {
        let mut escaped = String::with_capacity(text.len() + 3);
        if self.add_space_prefix && prefix_space {
            escaped.push(SPACE_MARKER);
        }
        escaped.extend(text.chars().map(|c| if c == ' ' { SPACE_MARKER } else { c }));
        self.spm_merge(&escaped, out);
    }

    fn spm_merge(&self, text: &str, out: &mut Vec<TokenId>) {
        // symbols are byte spans linked into a list; merged-away ones have len 0
        let mut syms: Vec<Symbol> = Vec::new();
        for (i, (start, c)) in text.char_indices().enumerate() {
            syms.push(Symbol {
                start,
                len: c.len_utf8(),
                prev: i.checked_sub(1),
                next: Some(i + 1),
            });
        }
        if let Some(last) = syms.last_mut() {
            last.next = None;
        }

        let mut queue = BinaryHeap::new();
        for i in 1..syms.len() {
            self.push_bigram(text, &syms, i - 1, i, &mut queue);
        }
        while let Some(bg) = queue.pop() {
            let (l, r) = (bg.left, bg.right);
            // stale: one side already merged elsewhere
            if syms[l].len == 0 || syms[r].len == 0 || syms[l].len + syms[r].len != bg.len {
                continue;
            }
            syms[l].len += syms[r].len;
            syms[r].len = 0;
            syms[l].next = syms[r].next;
            if let Some(n) = syms[r].next {
                syms[n].prev = Some(l);
            }
            if let Some(p) = syms[l].prev {
                self.push_bigram(text, &syms, p, l, &mut queue);
            }
            if let Some(n) = syms[l].next {
                self.push_bigram(text, &syms, l, n, &mut queue);
            }
        }

        let mut cur = if syms.is_empty() { None } else { Some(0) };
        while let Some(i) = cur {
            let s = &syms[i];
            let piece = &text[s.start..s.start + s.len];
            match self.piece_to_id.get(piece) {
                Some(&id) => out.push(id),
                None => match &self.byte_tokens {
                    Some(table) => out.extend(piece.bytes().map(|b| table[b as usize])),
                    None => out.push(self.unk_id),
                },
            }
            cur = s.next;
        }
    }

    fn push_bigram(&self, text: &str, syms: &[Symbol], left: usize, right: usize, queue: &mut BinaryHeap<Bigram>) {
        let (a, b) = (&syms[left], &syms[right]);
        let piece = &text[a.start..b.start + b.len];
        if let Some(&id) = self.piece_to_id.get(piece) {
            queue.push(Bigram {
                score: self.scores[id as usize],
                len: piece.len(),
                id,
                left,
                right,
            });
        }
    }

    fn piece_bytes(&self, id: TokenId, out: &mut Vec<u8>) {
        let piece = &self.pieces[id as usize];
        match self.types[id as usize] {
            TokenType::Control | TokenType::Unknown | TokenType::Unused => {}
            TokenType::UserDefined => out.extend(piece.as_bytes()),
            TokenType::Byte => out.push(parse_byte_piece(piece).unwrap_or(0)),
            TokenType::Normal => {
                for c in piece.chars() {
                    let c = if c == SPACE_MARKER { ' ' } else { c };
                    let mut buf = [0; 4];
                    out.extend(c.encode_utf8(&mut buf).as_bytes());
                }
            }
        }
    }

    /// Space markers become spaces, byte tokens are reassembled into UTF-8
    /// (invalid sequences become U+FFFD) and control tokens render empty. The
    /// space added by the prefix convention is removed from the first piece
    /// that produces text.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        let mut strip = self.add_space_prefix;
        for &id in ids {
            if id as usize >= self.len() {
                return Err(TokenizerError::InvalidTokenId(id));
            }
            let before = bytes.len();
            self.piece_bytes(id, &mut bytes);
            if strip && bytes.len() > before {
                if bytes[before] == b' ' {
                    bytes.remove(before);
                }
                strip = false;
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Display form of one token. Normal pieces keep the space marker when
    /// `show_space_marker` is set, otherwise it is rendered as a space. Byte
    /// tokens render as their `<0xXX>` piece and control tokens as their text.
    pub fn token_to_piece(&self, id: TokenId, show_space_marker: bool) -> Result<String, TokenizerError> {
        let piece = self.piece(id)?;
        Ok(match self.types[id as usize] {
            TokenType::Normal if !show_space_marker => piece.replace(SPACE_MARKER, " "),
            _ => piece.to_string(),
        })
    }

    /// Incremental decoder for streaming output.
    pub fn stream_decoder(&self) -> StreamDecoder<'_> {
        StreamDecoder {
            vocab: self,
            pending: Vec::new(),
            strip: self.add_space_prefix,
        }
    }
}

fn parse_byte_piece(piece: &str) -> Option<u8> {
    let hex = piece.strip_prefix("<0x")?.strip_suffix('>')?;
    u8::from_str_radix(hex, 16).ok()
}

/// Feeds tokens one at a time and yields the newly completed text. Bytes of
/// an unfinished UTF-8 sequence are held back until the sequence completes,
/// so the concatenation of all chunks plus `finish()` equals `decode(ids)`.
pub struct StreamDecoder<'v> {
    vocab: &'v Vocab,
    pending: Vec<u8>,
    strip: bool,
}

impl StreamDecoder<'_> {
    pub fn push(&mut self, id: TokenId) -> Result<String, TokenizerError> {
        if id as usize >= self.vocab.len() {
            return Err(TokenizerError::InvalidTokenId(id));
        }
        let before = self.pending.len();
        self.vocab.piece_bytes(id, &mut self.pending);
        if self.strip && self.pending.len() > before {
            if self.pending[before] == b' ' {
                self.pending.remove(before);
            }
            self.strip = false;
        }
        Ok(self.drain_complete())
    }

    fn drain_complete(&mut self) -> String {
        let mut out = String::new();
        loop {
            match std::str::from_utf8(&self.pending) {
                Ok(s) => {
                    out.push_str(s);
                    self.pending.clear();
                    return out;
                }
                Err(e) => {
                    let valid = e.valid_up_to();
                    out.push_str(std::str::from_utf8(&self.pending[..valid]).expect("validated"));
                    match e.error_len() {
                        // invalid bytes: emit a replacement like decode does
                        Some(bad) => {
                            out.push(char::REPLACEMENT_CHARACTER);
                            self.pending.drain(..valid + bad);
                        }
                        // incomplete tail: wait for more bytes
                        None => {
                            self.pending.drain(..valid);
                            return out;
                        }
                    }
                }
            }
        }
    }

    /// Flushes any incomplete trailing sequence.
    pub fn finish(&mut self) -> String {
        let out = String::from_utf8_lossy(&self.pending).into_owned();
        self.pending.clear();
        out
    }
}

enum Fragment {
    Text(Range<usize>),
    Token(TokenId),
}

#[derive(Debug, Clone, Copy)]
struct Symbol {
    start: usize,
    len: usize,
    prev: Option<usize>,
    next: Option<usize>,
}

/// Merge candidate. Max-heap order: higher score, then longer piece, then
/// lower id, then the leftmost position.
#[derive(Debug)]
struct Bigram {
    score: f32,
    len: usize,
    id: TokenId,
    left: usize,
    right: usize,
}

impl Ord for Bigram {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then(self.len.cmp(&other.len))
            .then(other.id.cmp(&self.id))
            .then(other.left.cmp(&self.left))
    }
}

impl PartialOrd for Bigram {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Bigram {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Bigram {}
