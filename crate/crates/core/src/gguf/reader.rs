use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::Arc;

use indexmap::IndexMap;

use super::{
    align_up, ByteSource, GgufError, GgufFile, MetaTag, MetaValue, Result, TensorInfo,
    ALIGNMENT_KEY, DEFAULT_ALIGNMENT, GGUF_MAGIC, GGUF_VERSION,
};
use crate::quant::GgmlType;

const MAX_DIMS: u32 = 4;
const MAX_NESTING: usize = 8;

struct Cursor<'a> {
    src: &'a dyn ByteSource,
    pos: u64,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> u64 {
        self.src.len().saturating_sub(self.pos)
    }

    fn bytes(&mut self, n: u64) -> Result<Cow<'a, [u8]>> {
        let truncated = GgufError::TruncatedFile {
            offset: self.pos,
            needed: n,
        };
        if n > self.remaining() {
            return Err(truncated);
        }
        let out = self.src.read_at(self.pos, n as usize).map_err(|_| truncated)?;
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        let b = self.bytes(N as u64)?;
        Ok(b[..].try_into().expect("exact length"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.array::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u64()?;
        let at = self.pos;
        let raw = self.bytes(len)?;
        String::from_utf8(raw.into_owned())
            .map_err(|_| GgufError::MalformedMetadata(format!("invalid UTF-8 string at offset {at}")))
    }

    fn tag(&mut self) -> Result<MetaTag> {
        let at = self.pos;
        let id = self.u32()?;
        MetaTag::from_id(id)
            .ok_or_else(|| GgufError::MalformedMetadata(format!("unknown value type {id} at offset {at}")))
    }

    fn value(&mut self, tag: MetaTag, depth: usize) -> Result<MetaValue> {
        Ok(match tag {
            MetaTag::U8 => MetaValue::U8(self.u8()?),
            MetaTag::I8 => MetaValue::I8(self.u8()? as i8),
            MetaTag::U16 => MetaValue::U16(self.u16()?),
            MetaTag::I16 => MetaValue::I16(self.u16()? as i16),
            MetaTag::U32 => MetaValue::U32(self.u32()?),
            MetaTag::I32 => MetaValue::I32(self.u32()? as i32),
            MetaTag::F32 => MetaValue::F32(f32::from_bits(self.u32()?)),
            MetaTag::U64 => MetaValue::U64(self.u64()?),
            MetaTag::I64 => MetaValue::I64(self.u64()? as i64),
            MetaTag::F64 => MetaValue::F64(f64::from_bits(self.u64()?)),
            MetaTag::Bool => match self.u8()? {
                0 => MetaValue::Bool(false),
                1 => MetaValue::Bool(true),
                b => return Err(GgufError::MalformedMetadata(format!("bool byte {b}"))),
            },
            MetaTag::String => MetaValue::String(self.string()?),
            MetaTag::Array => {
                if depth >= MAX_NESTING {
                    return Err(GgufError::MalformedMetadata("arrays nested too deeply".into()));
                }
                let elem = self.tag()?;
                let count = self.u64()?;
                // every element takes at least one byte (strings and arrays
                // carry an 8-byte length), so this bounds the allocation
                let min = elem.fixed_size().unwrap_or(8) as u64;
                if count.saturating_mul(min) > self.remaining() {
                    return Err(GgufError::TruncatedFile {
                        offset: self.pos,
                        needed: count.saturating_mul(min),
                    });
                }
                let mut items = Vec::with_capacity(count as usize);
                for _ in 0..count {
                    items.push(self.value(elem, depth + 1)?);
                }
                MetaValue::Array(elem, items)
            }
        })
    }
}

/// Parses the header, metadata and tensor directory. Tensor payloads are not
/// touched; only the directory bytes are read from `source`.
pub fn parse(source: Arc<dyn ByteSource>) -> Result<GgufFile> {
    let mut c = Cursor {
        src: source.as_ref(),
        pos: 0,
    };
    let magic = c.array::<4>()?;
    if magic != GGUF_MAGIC {
        return Err(GgufError::UnsupportedMagic(magic));
    }
    let version = c.u32()?;
    if version != GGUF_VERSION {
        return Err(GgufError::UnsupportedVersion(version));
    }
    let n_tensors = c.u64()?;
    let n_kv = c.u64()?;
    // smallest possible entries: kv = key len + tag (12), tensor = 24 + 4
    if n_kv.saturating_mul(12) > c.remaining() || n_tensors.saturating_mul(28) > c.remaining() {
        return Err(GgufError::TruncatedFile {
            offset: c.pos,
            needed: n_kv.saturating_mul(12).saturating_add(n_tensors.saturating_mul(28)),
        });
    }

    let mut metadata = IndexMap::with_capacity(n_kv as usize);
    for _ in 0..n_kv {
        let key = c.string()?;
        let tag = c.tag()?;
        let value = c.value(tag, 0)?;
        if metadata.insert(key.clone(), value).is_some() {
            return Err(GgufError::MalformedMetadata(format!("duplicate key {key:?}")));
        }
    }

    let alignment = match metadata.get(ALIGNMENT_KEY) {
        None => DEFAULT_ALIGNMENT,
        Some(MetaValue::U32(a)) if a.is_power_of_two() => *a as u64,
        Some(other) => {
            return Err(GgufError::MalformedMetadata(format!(
                "{ALIGNMENT_KEY} must be a power-of-two u32, got {}",
                other.summary()
            )))
        }
    };

    let mut tensors = Vec::with_capacity(n_tensors as usize);
    let mut index = HashMap::with_capacity(n_tensors as usize);
    for i in 0..n_tensors as usize {
        let name = c.string()?;
        let n_dims = c.u32()?;
        if n_dims > MAX_DIMS {
            return Err(GgufError::MalformedMetadata(format!(
                "tensor {name:?} has {n_dims} dimensions"
            )));
        }
        let dims = (0..n_dims).map(|_| c.u64()).collect::<Result<Vec<_>>>()?;
        let ggml_type = GgmlType(c.u32()?);
        let offset = c.u64()?;
        if index.insert(name.clone(), i).is_some() {
            return Err(GgufError::DuplicateTensorName(name));
        }
        tensors.push(TensorInfo {
            name,
            dims,
            ggml_type,
            offset,
        });
    }

    let data_offset = align_up(c.pos, alignment);
    let total_size = source.len();
    Ok(GgufFile {
        version,
        alignment,
        metadata,
        tensors,
        data_offset,
        total_size,
        index,
        source,
    })
}
