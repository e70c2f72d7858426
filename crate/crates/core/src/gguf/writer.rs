use std::io::{self, Write};

use indexmap::IndexMap;

use super::{
    align_up, GgufError, MetaValue, Result, TensorInfo, ALIGNMENT_KEY, DEFAULT_ALIGNMENT,
    GGUF_MAGIC, GGUF_VERSION,
};
use crate::quant::GgmlType;

/// Everything needed to write a file. Offsets are assigned by the writer.
#[derive(Debug, Clone, PartialEq)]
pub struct GgufSpec {
    pub alignment: u64,
    pub metadata: IndexMap<String, MetaValue>,
    pub tensors: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorSpec {
    pub name: String,
    pub dims: Vec<u64>,
    pub ggml_type: GgmlType,
    pub data: Vec<u8>,
}

impl Default for GgufSpec {
    fn default() -> Self {
        Self::new()
    }
}

impl GgufSpec {
    pub fn new() -> Self {
        GgufSpec {
            alignment: DEFAULT_ALIGNMENT,
            metadata: IndexMap::new(),
            tensors: Vec::new(),
        }
    }

    /// Non-default alignment is recorded under the standard key, which is
    /// where readers look for it.
    pub fn with_alignment(alignment: u64) -> Self {
        let mut spec = Self::new();
        spec.alignment = alignment;
        if alignment != DEFAULT_ALIGNMENT {
            spec.metadata
                .insert(ALIGNMENT_KEY.into(), MetaValue::U32(alignment as u32));
        }
        spec
    }

    pub fn push_tensor(&mut self, name: &str, dims: Vec<u64>, ggml_type: GgmlType, data: Vec<u8>) {
        self.tensors.push(TensorSpec {
            name: name.to_string(),
            dims,
            ggml_type,
            data,
        });
    }

    fn check(&self) -> Result<Vec<TensorInfo>> {
        let declared = match self.metadata.get(ALIGNMENT_KEY) {
            None => DEFAULT_ALIGNMENT,
            Some(MetaValue::U32(a)) => *a as u64,
            Some(v) => {
                return Err(GgufError::MalformedMetadata(format!(
                    "{ALIGNMENT_KEY} must be u32, got {}",
                    v.tag()
                )))
            }
        };
        if declared != self.alignment || !self.alignment.is_power_of_two() {
            return Err(GgufError::MalformedMetadata(format!(
                "alignment {} disagrees with {ALIGNMENT_KEY} {declared} or is not a power of two",
                self.alignment
            )));
        }
        for (key, value) in &self.metadata {
            check_homogeneous(key, value)?;
        }

        let mut infos = Vec::with_capacity(self.tensors.len());
        let mut offset = 0u64;
        let mut seen = std::collections::HashSet::new();
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(GgufError::DuplicateTensorName(t.name.clone()));
            }
            let info = TensorInfo {
                name: t.name.clone(),
                dims: t.dims.clone(),
                ggml_type: t.ggml_type,
                offset,
            };
            if t.ggml_type.geometry().is_none() {
                return Err(GgufError::UnsupportedQuantType {
                    name: t.name.clone(),
                    ggml_type: t.ggml_type,
                });
            }
            match info.byte_len() {
                Some(n) if n == t.data.len() as u64 => {}
                expected => {
                    return Err(GgufError::GeometryMismatch {
                        name: t.name.clone(),
                        reason: match expected {
                            Some(n) => format!("payload is {} bytes, dims imply {n}", t.data.len()),
                            None => format!("dims {:?} do not fill whole {} blocks", t.dims, t.ggml_type),
                        },
                    })
                }
            }
            offset = align_up(offset + t.data.len() as u64, self.alignment);
            infos.push(info);
        }
        Ok(infos)
    }
}

fn check_homogeneous(key: &str, value: &MetaValue) -> Result<()> {
    if let MetaValue::Array(tag, items) = value {
        for item in items {
            if item.tag() != *tag {
                return Err(GgufError::MalformedMetadata(format!(
                    "array {key:?} declares {tag} but holds {}",
                    item.tag()
                )));
            }
            check_homogeneous(key, item)?;
        }
    }
    Ok(())
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend((s.len() as u64).to_le_bytes());
    out.extend(s.as_bytes());
}

fn put_value(out: &mut Vec<u8>, value: &MetaValue) {
    match value {
        MetaValue::U8(v) => out.push(*v),
        MetaValue::I8(v) => out.push(*v as u8),
        MetaValue::U16(v) => out.extend(v.to_le_bytes()),
        MetaValue::I16(v) => out.extend(v.to_le_bytes()),
        MetaValue::U32(v) => out.extend(v.to_le_bytes()),
        MetaValue::I32(v) => out.extend(v.to_le_bytes()),
        MetaValue::F32(v) => out.extend(v.to_le_bytes()),
        MetaValue::Bool(v) => out.push(*v as u8),
        MetaValue::String(s) => put_str(out, s),
        MetaValue::Array(tag, items) => {
            out.extend(tag.id().to_le_bytes());
            out.extend((items.len() as u64).to_le_bytes());
            for item in items {
                put_value(out, item);
            }
        }
        MetaValue::U64(v) => out.extend(v.to_le_bytes()),
        MetaValue::I64(v) => out.extend(v.to_le_bytes()),
        MetaValue::F64(v) => out.extend(v.to_le_bytes()),
    }
}

fn header_bytes(spec: &GgufSpec, infos: &[TensorInfo]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(GGUF_MAGIC);
    out.extend(GGUF_VERSION.to_le_bytes());
    out.extend((infos.len() as u64).to_le_bytes());
    out.extend((spec.metadata.len() as u64).to_le_bytes());
    for (key, value) in &spec.metadata {
        put_str(&mut out, key);
        out.extend(value.tag().id().to_le_bytes());
        put_value(&mut out, value);
    }
    for t in infos {
        put_str(&mut out, &t.name);
        out.extend((t.dims.len() as u32).to_le_bytes());
        for d in &t.dims {
            out.extend(d.to_le_bytes());
        }
        out.extend(t.ggml_type.0.to_le_bytes());
        out.extend(t.offset.to_le_bytes());
    }
    let padded = align_up(out.len() as u64, spec.alignment) as usize;
    out.resize(padded, 0);
    out
}

/// Streams a file to `w`. Tensors are laid out in spec order, each padded to
/// the alignment, and the file ends on an aligned boundary.
pub fn write_to(spec: &GgufSpec, w: &mut impl Write) -> Result<u64> {
    let infos = spec.check()?;
    let header = header_bytes(spec, &infos);
    w.write_all(&header)?;
    let mut written = header.len() as u64;
    let zeros = vec![0u8; spec.alignment as usize];
    for t in &spec.tensors {
        w.write_all(&t.data)?;
        let pad = align_up(t.data.len() as u64, spec.alignment) - t.data.len() as u64;
        w.write_all(&zeros[..pad as usize])?;
        written += t.data.len() as u64 + pad;
    }
    w.flush().map_err(GgufError::from)?;
    Ok(written)
}

pub fn write(spec: &GgufSpec) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_to(spec, &mut out)?;
    Ok(out)
}

impl From<GgufError> for io::Error {
    fn from(e: GgufError) -> Self {
        match e {
            GgufError::Io(e) => e,
            other => io::Error::new(io::ErrorKind::InvalidData, other),
        }
    }
}
