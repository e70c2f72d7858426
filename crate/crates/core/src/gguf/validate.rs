use std::fmt;

use serde::Serialize;

use super::GgufFile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ViolationCode {
    /// Byte extents of two tensors intersect.
    Overlap,
    /// A tensor's extent runs past the end of the file.
    Truncated,
    /// A tensor offset is not a multiple of the alignment.
    Misaligned,
    /// The innermost extent is not a multiple of the type's block size.
    BlockSize,
    /// Type id without known geometry, so its extent cannot be checked.
    UnknownType,
    /// Element count overflows.
    BadShape,
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub code: ViolationCode,
    /// Tensor name or metadata key the problem concerns.
    pub subject: String,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidationStats {
    pub tensor_count: usize,
    pub metadata_count: usize,
    pub file_bytes: u64,
    /// End of the furthest tensor extent (or of the directory when empty).
    pub declared_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub stats: ValidationStats,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: ViolationCode) -> bool {
        self.violations.iter().any(|v| v.code == code)
    }
}

pub(super) fn validate(file: &GgufFile) -> ValidationReport {
    let mut violations = Vec::new();
    let mut push = |code, subject: &str, message: String| {
        violations.push(Violation {
            code,
            subject: subject.to_string(),
            message,
        })
    };

    let mut extents: Vec<(u64, u64, &str)> = Vec::new();
    let mut declared = file.data_offset;
    for t in &file.tensors {
        if t.offset % file.alignment != 0 {
            push(
                ViolationCode::Misaligned,
                &t.name,
                format!("offset {} is not a multiple of {}", t.offset, file.alignment),
            );
        }
        let Some((block_elems, _)) = t.ggml_type.geometry() else {
            push(
                ViolationCode::UnknownType,
                &t.name,
                format!("type id {} has no known block geometry", t.ggml_type.0),
            );
            continue;
        };
        if t.n_elems().is_none() {
            push(ViolationCode::BadShape, &t.name, format!("dims {:?} overflow", t.dims));
            continue;
        }
        let ne0 = t.dims.first().copied().unwrap_or(1);
        if ne0 % block_elems as u64 != 0 {
            push(
                ViolationCode::BlockSize,
                &t.name,
                format!("innermost extent {ne0} is not a multiple of {block_elems} ({})", t.ggml_type),
            );
            continue;
        }
        let len = t.byte_len().expect("geometry checked");
        let start = file.data_offset.saturating_add(t.offset);
        let end = start.saturating_add(len);
        declared = declared.max(end);
        if end > file.total_size {
            push(
                ViolationCode::Truncated,
                &t.name,
                format!("extent {start}..{end} exceeds file size {}", file.total_size),
            );
        }
        if len > 0 {
            extents.push((start, end, &t.name));
        }
    }

    // sweep by start, comparing against the extent reaching furthest so far
    extents.sort();
    let mut reach: Option<(u64, u64, &str)> = None;
    for b in extents {
        if let Some(a) = reach {
            if b.0 < a.1 {
                push(
                    ViolationCode::Overlap,
                    b.2,
                    format!("extent {}..{} overlaps {:?} ({}..{})", b.0, b.1, a.2, a.0, a.1),
                );
            }
        }
        if reach.is_none_or(|a| b.1 > a.1) {
            reach = Some(b);
        }
    }

    ValidationReport {
        violations,
        stats: ValidationStats {
            tensor_count: file.tensors.len(),
            metadata_count: file.metadata.len(),
            file_bytes: file.total_size,
            declared_bytes: declared,
        },
    }
}
