//! GGUF container: parsing, typed metadata access, tensor views, writing and
//! structural validation.

mod reader;
mod source;
mod validate;
mod value;
mod writer;

use std::borrow::Cow;
use std::collections::HashMap;
use std::io;
use std::path::Path;
use std::sync::Arc;

use indexmap::IndexMap;
use thiserror::Error;

use crate::quant::{GgmlType, QuantError, QuantType};

pub use reader::parse;
pub use source::{map_file, ByteSource};
pub use validate::{ValidationReport, ValidationStats, Violation, ViolationCode};
pub use value::{MetaTag, MetaValue};
pub use writer::{write, write_to, GgufSpec, TensorSpec};

pub const GGUF_MAGIC: [u8; 4] = *b"GGUF";
pub const GGUF_VERSION: u32 = 3;
pub const DEFAULT_ALIGNMENT: u64 = 32;
pub const ALIGNMENT_KEY: &str = "general.alignment";

#[derive(Debug, Error)]
pub enum GgufError {
    #[error("not a GGUF file (magic {0:?})")]
    UnsupportedMagic([u8; 4]),
    #[error("unsupported GGUF version {0} (only 3 is supported)")]
    UnsupportedVersion(u32),
    #[error("file truncated: needed {needed} bytes at offset {offset}")]
    TruncatedFile { offset: u64, needed: u64 },
    #[error("malformed metadata: {0}")]
    MalformedMetadata(String),
    #[error("duplicate tensor name {0:?}")]
    DuplicateTensorName(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("metadata key {key:?} has type {found}, expected {expected}")]
    TypeMismatch {
        key: String,
        expected: MetaTag,
        found: MetaTag,
    },
    #[error("tensor {name:?}: {reason}")]
    GeometryMismatch { name: String, reason: String },
    #[error("tensor {name:?}: unsupported quantization type {ggml_type}")]
    UnsupportedQuantType { name: String, ggml_type: GgmlType },
    #[error(transparent)]
    Quant(#[from] QuantError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = GgufError> = std::result::Result<T, E>;

/// One tensor directory entry. `dims[0]` is the innermost (contiguous)
/// extent, as stored.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub dims: Vec<u64>,
    pub ggml_type: GgmlType,
    /// Relative to the start of the data region.
    pub offset: u64,
}

impl TensorInfo {
    pub fn n_elems(&self) -> Option<u64> {
        self.dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(d))
    }

    /// Supported encoding, or `None` for opaque tensors.
    pub fn qtype(&self) -> Option<QuantType> {
        self.ggml_type.quant_type()
    }

    /// Exact payload size implied by dims and block geometry. `None` when the
    /// type is unknown or the innermost extent does not fill whole blocks.
    pub fn byte_len(&self) -> Option<u64> {
        let (be, bb) = self.ggml_type.geometry()?;
        let ne0 = *self.dims.first().unwrap_or(&1);
        if !ne0.is_multiple_of(be as u64) {
            return None;
        }
        self.n_elems()?.checked_div(be as u64)?.checked_mul(bb as u64)
    }
}

/// Parsed container. Metadata and the directory are materialized; tensor
/// payloads stay in the backing source until viewed.
pub struct GgufFile {
    pub version: u32,
    pub alignment: u64,
    pub metadata: IndexMap<String, MetaValue>,
    pub tensors: Vec<TensorInfo>,
    pub data_offset: u64,
    pub total_size: u64,
    index: HashMap<String, usize>,
    source: Arc<dyn ByteSource>,
}

impl std::fmt::Debug for GgufFile {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GgufFile")
            .field("version", &self.version)
            .field("alignment", &self.alignment)
            .field("metadata_count", &self.metadata.len())
            .field("tensor_count", &self.tensors.len())
            .field("data_offset", &self.data_offset)
            .field("total_size", &self.total_size)
            .finish()
    }
}

/// Borrowed view of one tensor's payload.
#[derive(Debug, Clone)]
pub struct TensorView<'a> {
    pub name: &'a str,
    pub dims: &'a [u64],
    pub ggml_type: GgmlType,
    /// Absolute file offset of the first byte.
    pub file_offset: u64,
    pub data: Cow<'a, [u8]>,
}

impl TensorView<'_> {
    pub fn qtype(&self) -> Result<QuantType> {
        self.ggml_type.quant_type().ok_or_else(|| GgufError::UnsupportedQuantType {
            name: self.name.to_string(),
            ggml_type: self.ggml_type,
        })
    }

    pub fn n_elems(&self) -> u64 {
        self.dims.iter().product()
    }

    /// Innermost extent.
    pub fn row_len(&self) -> usize {
        self.dims.first().copied().unwrap_or(1) as usize
    }

    pub fn n_rows(&self) -> usize {
        self.dims.iter().skip(1).product::<u64>() as usize
    }
}

impl GgufFile {
    /// Maps `path` and parses it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let map = map_file(path)?;
        parse(Arc::new(map))
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        parse(Arc::new(bytes))
    }

    pub fn metadata_get(&self, key: &str, expected: MetaTag) -> Result<&MetaValue> {
        let value = self.metadata_value(key)?;
        if value.tag() != expected {
            return Err(GgufError::TypeMismatch {
                key: key.to_string(),
                expected,
                found: value.tag(),
            });
        }
        Ok(value)
    }

    pub fn metadata_value(&self, key: &str) -> Result<&MetaValue> {
        self.metadata
            .get(key)
            .ok_or_else(|| GgufError::NotFound(format!("metadata key {key:?}")))
    }

    pub fn get_str(&self, key: &str) -> Result<&str> {
        Ok(self.metadata_get(key, MetaTag::String)?.as_str().unwrap_or_default())
    }

    /// Unsigned integer of any width; files are inconsistent about which
    /// integer tag they use for sizes.
    pub fn get_uint(&self, key: &str) -> Result<u64> {
        let value = self.metadata_value(key)?;
        value.as_u64().ok_or_else(|| GgufError::TypeMismatch {
            key: key.to_string(),
            expected: MetaTag::U32,
            found: value.tag(),
        })
    }

    pub fn get_float(&self, key: &str) -> Result<f64> {
        let value = self.metadata_value(key)?;
        value.as_f64().ok_or_else(|| GgufError::TypeMismatch {
            key: key.to_string(),
            expected: MetaTag::F32,
            found: value.tag(),
        })
    }

    pub fn get_array(&self, key: &str) -> Result<&[MetaValue]> {
        Ok(self.metadata_get(key, MetaTag::Array)?.as_array().unwrap_or_default())
    }

    pub fn tensor_info(&self, name: &str) -> Result<&TensorInfo> {
        self.index
            .get(name)
            .map(|&i| &self.tensors[i])
            .ok_or_else(|| GgufError::NotFound(format!("tensor {name:?}")))
    }

    pub fn has_tensor(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Payload span of `name`. For opaque types with unknown geometry the
    /// span runs to the next tensor (or the end of the file).
    pub fn tensor_view(&self, name: &str) -> Result<TensorView<'_>> {
        let info = self.tensor_info(name)?;
        let start = self.data_offset + info.offset;
        let len = match info.byte_len() {
            Some(n) => n,
            None if info.ggml_type.geometry().is_some() => {
                return Err(GgufError::GeometryMismatch {
                    name: info.name.clone(),
                    reason: format!("dims {:?} do not fill whole {} blocks", info.dims, info.ggml_type),
                })
            }
            None => self.opaque_extent(info),
        };
        let data = self
            .source
            .read_at(start, len as usize)
            .map_err(|_| GgufError::TruncatedFile { offset: start, needed: len })?;
        Ok(TensorView {
            name: &info.name,
            dims: &info.dims,
            ggml_type: info.ggml_type,
            file_offset: start,
            data,
        })
    }

    fn opaque_extent(&self, info: &TensorInfo) -> u64 {
        let next = self
            .tensors
            .iter()
            .map(|t| t.offset)
            .filter(|&o| o > info.offset)
            .min()
            .map(|o| self.data_offset + o)
            .unwrap_or(self.total_size);
        next.saturating_sub(self.data_offset + info.offset)
    }

    /// Raw bytes at an absolute file offset.
    pub fn read_bytes(&self, offset: u64, len: usize) -> Result<Cow<'_, [u8]>> {
        self.source
            .read_at(offset, len)
            .map_err(|_| GgufError::TruncatedFile { offset, needed: len as u64 })
    }

    /// Size of the file (or byte source) the directory was read from.
    pub fn file_size(&self) -> u64 {
        self.total_size
    }

    pub fn validate(&self) -> ValidationReport {
        validate::validate(self)
    }

    /// Reconstructs a writable spec, copying every payload.
    pub fn to_spec(&self) -> Result<GgufSpec> {
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            let view = self.tensor_view(&t.name)?;
            tensors.push(TensorSpec {
                name: t.name.clone(),
                dims: t.dims.clone(),
                ggml_type: t.ggml_type,
                data: view.data.into_owned(),
            });
        }
        Ok(GgufSpec {
            alignment: self.alignment,
            metadata: self.metadata.clone(),
            tensors,
        })
    }

    /// Quantization label such as `Q4_K_M`, from `general.file_type` when
    /// present, otherwise the type holding the most matrix bytes.
    pub fn quant_label(&self) -> String {
        if let Some(name) = self
            .get_uint("general.file_type")
            .ok()
            .and_then(|id| FILE_TYPES.iter().find(|f| f.0 as u64 == id))
            .map(|f| f.1)
        {
            return name.to_string();
        }
        let mut bytes: IndexMap<GgmlType, u64> = IndexMap::new();
        for t in self.tensors.iter().filter(|t| t.dims.len() >= 2) {
            *bytes.entry(t.ggml_type).or_default() += t.byte_len().unwrap_or(0);
        }
        bytes
            .into_iter()
            .max_by_key(|&(t, b)| (b, std::cmp::Reverse(t.0)))
            .map(|(t, _)| t.to_string())
            .unwrap_or_else(|| "none".into())
    }

    /// Count and total bytes per ggml type, ordered by descending count.
    pub fn type_histogram(&self) -> Vec<(GgmlType, usize, u64)> {
        let mut acc: IndexMap<GgmlType, (usize, u64)> = IndexMap::new();
        for t in &self.tensors {
            let e = acc.entry(t.ggml_type).or_default();
            e.0 += 1;
            e.1 += t.byte_len().unwrap_or(0);
        }
        let mut out: Vec<_> = acc.into_iter().map(|(k, (n, b))| (k, n, b)).collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0 .0.cmp(&b.0 .0)));
        out
    }
}

/// `general.file_type` ids as assigned by llama.cpp.
pub const FILE_TYPES: &[(u32, &str)] = &[
    (0, "F32"),
    (1, "F16"),
    (2, "Q4_0"),
    (3, "Q4_1"),
    (7, "Q8_0"),
    (8, "Q5_0"),
    (9, "Q5_1"),
    (10, "Q2_K"),
    (11, "Q3_K_S"),
    (12, "Q3_K_M"),
    (13, "Q3_K_L"),
    (14, "Q4_K_S"),
    (15, "Q4_K_M"),
    (16, "Q5_K_S"),
    (17, "Q5_K_M"),
    (18, "Q6_K"),
    (32, "BF16"),
];

pub(crate) fn align_up(offset: u64, alignment: u64) -> u64 {
    offset.div_ceil(alignment) * alignment
}

/// Dequantizes a whole tensor, row-major with `dims[0]` innermost.
pub fn dequantize_tensor(view: &TensorView<'_>) -> Result<Vec<f32>> {
    let qtype = view.qtype()?;
    if !view.row_len().is_multiple_of(qtype.block_elems()) {
        return Err(QuantError::GeometryMismatch {
            qtype,
            elems: view.row_len(),
            block_elems: qtype.block_elems(),
        }
        .into());
    }
    Ok(crate::quant::dequantize(qtype, &view.data, view.n_elems() as usize)?)
}
