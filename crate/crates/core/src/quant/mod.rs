//! Block quantization formats, their kernels and fused dot products.

mod dot;
pub mod f16;
pub mod kquants;
pub mod q8_0;
mod stats;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

pub use f16::{f16_to_f32, f32_to_f16};
pub use stats::{quant_error_report, QuantErrorStats};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuantError {
    #[error("unsupported quantization type {0}")]
    UnsupportedQuantType(String),
    #[error("non-finite input value at index {index}")]
    NonFiniteInput { index: usize },
    #[error("{qtype}: {elems} elements is not a multiple of the block size {block_elems}")]
    GeometryMismatch {
        qtype: QuantType,
        elems: usize,
        block_elems: usize,
    },
    #[error("buffer length mismatch: expected {expected} bytes/elements, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// Tensor encodings this crate can read, write and compute with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum QuantType {
    F32,
    F16,
    Q8_0,
    Q2K,
    Q3K,
    Q4K,
    Q5K,
    Q6K,
}

impl QuantType {
    pub const ALL: [QuantType; 8] = [
        QuantType::F32,
        QuantType::F16,
        QuantType::Q8_0,
        QuantType::Q2K,
        QuantType::Q3K,
        QuantType::Q4K,
        QuantType::Q5K,
        QuantType::Q6K,
    ];

    /// Block-quantized formats from coarsest to finest.
    pub const LADDER: [QuantType; 6] = [
        QuantType::Q2K,
        QuantType::Q3K,
        QuantType::Q4K,
        QuantType::Q5K,
        QuantType::Q6K,
        QuantType::Q8_0,
    ];

    pub fn block_elems(self) -> usize {
        match self {
            QuantType::F32 | QuantType::F16 => 1,
            QuantType::Q8_0 => q8_0::QK8_0,
            _ => kquants::QK_K,
        }
    }

    pub fn block_bytes(self) -> usize {
        match self {
            QuantType::F32 => 4,
            QuantType::F16 => 2,
            QuantType::Q8_0 => q8_0::Q8_0_BYTES,
            QuantType::Q2K => kquants::Q2K_BYTES,
            QuantType::Q3K => kquants::Q3K_BYTES,
            QuantType::Q4K => kquants::Q4K_BYTES,
            QuantType::Q5K => kquants::Q5K_BYTES,
            QuantType::Q6K => kquants::Q6K_BYTES,
        }
    }

    pub fn ggml_type(self) -> GgmlType {
        GgmlType(match self {
            QuantType::F32 => 0,
            QuantType::F16 => 1,
            QuantType::Q8_0 => 8,
            QuantType::Q2K => 10,
            QuantType::Q3K => 11,
            QuantType::Q4K => 12,
            QuantType::Q5K => 13,
            QuantType::Q6K => 14,
        })
    }

    pub fn from_ggml_type(t: GgmlType) -> Option<Self> {
        QuantType::ALL.into_iter().find(|q| q.ggml_type() == t)
    }

    pub fn name(self) -> &'static str {
        match self {
            QuantType::F32 => "F32",
            QuantType::F16 => "F16",
            QuantType::Q8_0 => "Q8_0",
            QuantType::Q2K => "Q2_K",
            QuantType::Q3K => "Q3_K",
            QuantType::Q4K => "Q4_K",
            QuantType::Q5K => "Q5_K",
            QuantType::Q6K => "Q6_K",
        }
    }

    pub fn bits_per_weight(self) -> f64 {
        self.block_bytes() as f64 * 8.0 / self.block_elems() as f64
    }

    /// Encoded size of `elems` values, which must fill whole blocks.
    pub fn row_bytes(self, elems: usize) -> Result<usize, QuantError> {
        let be = self.block_elems();
        if !elems.is_multiple_of(be) {
            return Err(QuantError::GeometryMismatch {
                qtype: self,
                elems,
                block_elems: be,
            });
        }
        Ok(elems / be * self.block_bytes())
    }
}

impl fmt::Display for QuantType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuantType {
    type Err = QuantError;

    /// Accepts `Q4_K`, `q4k`, `q4_k` and friends.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| *c != '_')
            .map(|c| c.to_ascii_uppercase())
            .collect();
        QuantType::ALL
            .into_iter()
            .find(|q| q.name().replace('_', "") == norm)
            .ok_or_else(|| QuantError::UnsupportedQuantType(s.to_string()))
    }
}

/// Raw ggml type id as stored in a GGUF tensor directory. Ids this crate does
/// not compute with still have known geometry so files containing them can be
/// parsed and validated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GgmlType(pub u32);

impl GgmlType {
    // (id, name, block elems, block bytes)
    const TABLE: &'static [(u32, &'static str, usize, usize)] = &[
        (0, "F32", 1, 4),
        (1, "F16", 1, 2),
        (2, "Q4_0", 32, 18),
        (3, "Q4_1", 32, 20),
        (6, "Q5_0", 32, 22),
        (7, "Q5_1", 32, 24),
        (8, "Q8_0", 32, 34),
        (9, "Q8_1", 32, 36),
        (10, "Q2_K", 256, 84),
        (11, "Q3_K", 256, 110),
        (12, "Q4_K", 256, 144),
        (13, "Q5_K", 256, 176),
        (14, "Q6_K", 256, 210),
        (15, "Q8_K", 256, 292),
        (16, "IQ2_XXS", 256, 66),
        (17, "IQ2_XS", 256, 74),
        (18, "IQ3_XXS", 256, 98),
        (19, "IQ1_S", 256, 50),
        (20, "IQ4_NL", 32, 18),
        (21, "IQ3_S", 256, 110),
        (22, "IQ2_S", 256, 82),
        (23, "IQ4_XS", 256, 136),
        (24, "I8", 1, 1),
        (25, "I16", 1, 2),
        (26, "I32", 1, 4),
        (27, "I64", 1, 8),
        (28, "F64", 1, 8),
        (29, "IQ1_M", 256, 56),
        (30, "BF16", 1, 2),
        (34, "TQ1_0", 256, 54),
        (35, "TQ2_0", 256, 66),
    ];

    fn entry(self) -> Option<&'static (u32, &'static str, usize, usize)> {
        Self::TABLE.iter().find(|e| e.0 == self.0)
    }

    /// `(block_elems, block_bytes)` if the id is known.
    pub fn geometry(self) -> Option<(usize, usize)> {
        self.entry().map(|e| (e.2, e.3))
    }

    pub fn quant_type(self) -> Option<QuantType> {
        QuantType::from_ggml_type(self)
    }
}

impl fmt::Display for GgmlType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.entry() {
            Some(e) => f.write_str(e.1),
            None => write!(f, "type#{}", self.0),
        }
    }
}

fn check_finite(x: &[f32]) -> Result<(), QuantError> {
    match x.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(QuantError::NonFiniteInput { index }),
        None => Ok(()),
    }
}

fn check_len(expected: usize, actual: usize) -> Result<(), QuantError> {
    if expected != actual {
        return Err(QuantError::LengthMismatch { expected, actual });
    }
    Ok(())
}

/// Encodes exactly one block. Rejects NaN and infinities.
pub fn quantize_block(qtype: QuantType, x: &[f32], out: &mut [u8]) -> Result<(), QuantError> {
    check_len(qtype.block_elems(), x.len())?;
    check_len(qtype.block_bytes(), out.len())?;
    check_finite(x)?;
    encode_block(qtype, x, out);
    Ok(())
}

fn encode_block(qtype: QuantType, x: &[f32], out: &mut [u8]) {
    match qtype {
        QuantType::F32 => out.copy_from_slice(&x[0].to_le_bytes()),
        QuantType::F16 => out.copy_from_slice(&f32_to_f16(x[0]).to_le_bytes()),
        QuantType::Q8_0 => q8_0::quantize_q8_0(x, out),
        QuantType::Q2K => kquants::quantize_q2k(x, out),
        QuantType::Q3K => kquants::quantize_q3k(x, out),
        QuantType::Q4K => kquants::quantize_q4k(x, out),
        QuantType::Q5K => kquants::quantize_q5k(x, out),
        QuantType::Q6K => kquants::quantize_q6k(x, out),
    }
}

/// Decodes exactly one block.
pub fn dequantize_block(qtype: QuantType, raw: &[u8], out: &mut [f32]) -> Result<(), QuantError> {
    check_len(qtype.block_bytes(), raw.len())?;
    check_len(qtype.block_elems(), out.len())?;
    decode_block(qtype, raw, out);
    Ok(())
}

fn decode_block(qtype: QuantType, raw: &[u8], out: &mut [f32]) {
    match qtype {
        QuantType::F32 => out[0] = f32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]),
        QuantType::F16 => out[0] = f16_to_f32(u16::from_le_bytes([raw[0], raw[1]])),
        QuantType::Q8_0 => q8_0::dequantize_q8_0(raw, out),
        QuantType::Q2K => kquants::dequantize_q2k(raw, out),
        QuantType::Q3K => kquants::dequantize_q3k(raw, out),
        QuantType::Q4K => kquants::dequantize_q4k(raw, out),
        QuantType::Q5K => kquants::dequantize_q5k(raw, out),
        QuantType::Q6K => kquants::dequantize_q6k(raw, out),
    }
}

/// Encodes any whole number of blocks.
pub fn quantize(qtype: QuantType, x: &[f32]) -> Result<Vec<u8>, QuantError> {
    let bytes = qtype.row_bytes(x.len())?;
    check_finite(x)?;
    let mut out = vec![0u8; bytes];
    match qtype {
        QuantType::F32 => {
            for (dst, v) in out.chunks_exact_mut(4).zip(x) {
                dst.copy_from_slice(&v.to_le_bytes());
            }
        }
        _ => {
            out.par_chunks_mut(qtype.block_bytes())
                .zip(x.par_chunks(qtype.block_elems()))
                .for_each(|(dst, src)| encode_block(qtype, src, dst));
        }
    }
    Ok(out)
}

/// Decodes `raw` into `out`; `out.len()` selects the element count.
pub fn dequantize_into(qtype: QuantType, raw: &[u8], out: &mut [f32]) -> Result<(), QuantError> {
    check_len(qtype.row_bytes(out.len())?, raw.len())?;
    for (src, dst) in raw
        .chunks_exact(qtype.block_bytes())
        .zip(out.chunks_exact_mut(qtype.block_elems()))
    {
        decode_block(qtype, src, dst);
    }
    Ok(())
}

pub fn dequantize(qtype: QuantType, raw: &[u8], elems: usize) -> Result<Vec<f32>, QuantError> {
    let mut out = vec![0.0f32; elems];
    dequantize_into(qtype, raw, &mut out)?;
    Ok(out)
}

/// Dot product of an encoded row with `x`, without expanding the row.
pub fn dot_q(qtype: QuantType, row: &[u8], x: &[f32]) -> Result<f32, QuantError> {
    check_len(qtype.row_bytes(x.len())?, row.len())?;
    Ok(dot::dot_row(qtype, row, x))
}

/// `out[r] = dot(weights[r], x)` for a row-major matrix of `out.len()` rows.
/// Rows are computed in parallel; each row's arithmetic is sequential, so the
/// result does not depend on the thread count.
pub fn matvec(qtype: QuantType, weights: &[u8], x: &[f32], out: &mut [f32]) -> Result<(), QuantError> {
    let row_bytes = qtype.row_bytes(x.len())?;
    check_len(row_bytes * out.len(), weights.len())?;
    const ROWS_PER_TASK: usize = 16;
    out.par_chunks_mut(ROWS_PER_TASK)
        .zip(weights.par_chunks(row_bytes * ROWS_PER_TASK))
        .for_each(|(dst, rows)| {
            for (y, row) in dst.iter_mut().zip(rows.chunks_exact(row_bytes)) {
                *y = dot::dot_row(qtype, row, x);
            }
        });
    Ok(())
}

/// Batched form of [`matvec`]: `xs` holds `n` input vectors of length
/// `cols` back to back, and `out[t * rows + r] = dot(weights[r], xs[t])`.
/// Each weight row is decoded once per call and reused for every input, and
/// every output is the same `dot_q` value `matvec` would produce.
pub fn matmul(qtype: QuantType, weights: &[u8], xs: &[f32], cols: usize, out: &mut [f32]) -> Result<(), QuantError> {
    if cols == 0 || !xs.len().is_multiple_of(cols) {
        return Err(QuantError::LengthMismatch {
            expected: cols,
            actual: xs.len(),
        });
    }
    let n = xs.len() / cols;
    if n == 1 {
        return matvec(qtype, weights, xs, out);
    }
    let row_bytes = qtype.row_bytes(cols)?;
    let rows = weights.len() / row_bytes.max(1);
    check_len(row_bytes * rows, weights.len())?;
    check_len(rows * n, out.len())?;
    const ROWS_PER_TASK: usize = 16;
    // row-major by weight row first, transposed at the end
    let mut by_row = vec![0f32; rows * n];
    by_row
        .par_chunks_mut(ROWS_PER_TASK * n)
        .zip(weights.par_chunks(row_bytes * ROWS_PER_TASK))
        .for_each(|(dst, rows)| {
            for (ys, row) in dst.chunks_exact_mut(n).zip(rows.chunks_exact(row_bytes)) {
                for (y, x) in ys.iter_mut().zip(xs.chunks_exact(cols)) {
                    *y = dot::dot_row(qtype, row, x);
                }
            }
        });
    for r in 0..rows {
        for t in 0..n {
            out[t * rows + r] = by_row[r * n + t];
        }
    }
    Ok(())
}
