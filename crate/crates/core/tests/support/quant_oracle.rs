//! Oracles shared by test targets: an element-indexed K-quant dequantizer
//! written from the block layout tables, fixture loaders for blocks dumped
//! from the reference C implementation, and a dequantize-then-dot reference.
#![allow(dead_code)]

use std::path::PathBuf;

use vien_core::quant::{self, QuantType};

/// `core/tests/data`, from either crate.
pub fn data_dir() -> PathBuf {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let own = root.join("tests/data/quant_ref");
    if own.exists() {
        root.join("tests/data")
    } else {
        root.join("../core/tests/data")
    }
}

pub struct Case {
    pub input: Vec<f32>,
    pub bytes: Vec<u8>,
    pub deq: Vec<f32>,
}

pub fn load(name: &str) -> Vec<Case> {
    let path = data_dir().join(format!("quant_ref/{name}.bin"));
    let data = std::fs::read(path).unwrap();
    let u32_at = |o: usize| u32::from_le_bytes(data[o..o + 4].try_into().unwrap()) as usize;
    let f32s = |o: usize, n: usize| -> Vec<f32> {
        data[o..o + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect()
    };
    let nblocks = u32_at(0);
    let n = u32_at(4);
    let mut off = 8;
    let mut cases = Vec::new();
    for _ in 0..nblocks {
        let qlen = u32_at(off);
        off += 4;
        let input = f32s(off, n);
        off += 4 * n;
        let bytes = data[off..off + qlen].to_vec();
        off += qlen;
        let deq = f32s(off, n);
        off += 4 * n;
        cases.push(Case { input, bytes, deq });
    }
    assert_eq!(off, data.len());
    cases
}

pub const KQUANTS: [(QuantType, &str); 5] = [
    (QuantType::Q2K, "q2_k"),
    (QuantType::Q3K, "q3_k"),
    (QuantType::Q4K, "q4_k"),
    (QuantType::Q5K, "q5_k"),
    (QuantType::Q6K, "q6_k"),
];

fn h(raw: &[u8], at: usize) -> f32 {
    half::f16::from_le_bytes([raw[at], raw[at + 1]]).to_f32()
}

/// 6-bit (scale, min) pair `j` of the 12-byte packed table used by Q4_K/Q5_K.
fn sm6(s: &[u8], j: usize) -> (f32, f32) {
    if j < 4 {
        ((s[j] & 63) as f32, (s[j + 4] & 63) as f32)
    } else {
        let sc = (s[j + 4] & 0x0f) | ((s[j - 4] >> 6) << 4);
        let m = (s[j + 4] >> 4) | ((s[j] >> 6) << 4);
        (sc as f32, m as f32)
    }
}

pub fn oracle_element(q: QuantType, b: &[u8], i: usize) -> f32 {
    match q {
        QuantType::Q8_0 => h(b, 0) * (b[2 + i] as i8) as f32,
        QuantType::Q4K => {
            // 4 chunks of 64: low nibbles for the first 32, high for the next
            let (chunk, r) = (i / 64, i % 64);
            let byte = b[16 + 32 * chunk + r % 32];
            let lv = if r < 32 { byte & 15 } else { byte >> 4 };
            let (sc, m) = sm6(&b[4..16], i / 32);
            h(b, 0) * sc * lv as f32 - h(b, 2) * m
        }
        QuantType::Q5K => {
            let (chunk, r) = (i / 64, i % 64);
            let byte = b[48 + 32 * chunk + r % 32];
            let low = if r < 32 { byte & 15 } else { byte >> 4 };
            let hbit = (b[16 + r % 32] >> (i / 32)) & 1;
            let (sc, m) = sm6(&b[4..16], i / 32);
            h(b, 0) * sc * (low + 16 * hbit) as f32 - h(b, 2) * m
        }
        QuantType::Q6K => {
            let (half_, r) = (i / 128, i % 128);
            let (row, l) = (r / 32, r % 32);
            let ql = b[64 * half_ + l + 32 * (row % 2)];
            let low = if row < 2 { ql & 15 } else { ql >> 4 };
            let high = (b[128 + 32 * half_ + l] >> (2 * row)) & 3;
            let sc = b[192 + i / 16] as i8 as f32;
            h(b, 208) * sc * ((low | (high << 4)) as i32 - 32) as f32
        }
        QuantType::Q2K => {
            let (half_, r) = (i / 128, i % 128);
            let (shift, l) = (2 * (r / 32), r % 32);
            let lv = (b[16 + 32 * half_ + l] >> shift) & 3;
            let sc = b[i / 16];
            h(b, 80) * (sc & 15) as f32 * lv as f32 - h(b, 82) * (sc >> 4) as f32
        }
        QuantType::Q3K => {
            let (half_, r) = (i / 128, i % 128);
            let (shift, l) = (2 * (r / 32), r % 32);
            let low = ((b[32 + 32 * half_ + l] >> shift) & 3) as i32;
            let hbit = (b[l] >> (4 * half_ + r / 32)) & 1;
            let j = i / 16;
            let s = &b[96..108];
            let lo4 = if j < 8 { s[j] & 15 } else { s[j - 8] >> 4 };
            let hi2 = (s[8 + j % 4] >> (2 * (j / 4))) & 3;
            let sc = (lo4 | (hi2 << 4)) as i32 - 32;
            h(b, 108) * sc as f32 * (low - if hbit == 1 { 0 } else { 4 }) as f32
        }
        _ => unreachable!(),
    }
}

/// `(dot, scale)` of the dequantize-then-dot path in f64. `scale` is
/// `Σ|w·x| / √n`, the typical size of a dot of this length; it stands in for
/// `|dot|` when cancellation drives the exact result towards zero.
pub fn reference_dot(q: QuantType, row: &[u8], x: &[f32]) -> (f64, f64) {
    let w = quant::dequantize(q, row, x.len()).unwrap();
    let mut dot = 0.0f64;
    let mut mag = 0.0f64;
    for (&a, &b) in w.iter().zip(x) {
        dot += a as f64 * b as f64;
        mag += (a as f64 * b as f64).abs();
    }
    (dot, mag / (x.len() as f64).sqrt())
}

