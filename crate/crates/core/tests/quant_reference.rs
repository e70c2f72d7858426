//! Block kernels checked against fixtures dumped from the reference C
//! implementation, plus an element-indexed dequantizer written from the block
//! layout tables that shares no code with the crate.

#[path = "support/quant_oracle.rs"]
mod quant_oracle;

use quant_oracle::{load, oracle_element, KQUANTS};
use vien_core::quant::{self, QuantType};

#[test]
fn kquant_encoding_is_byte_exact() {
    for (q, name) in KQUANTS {
        for (i, c) in load(name).iter().enumerate() {
            let mut out = vec![0u8; q.block_bytes()];
            quant::quantize_block(q, &c.input, &mut out).unwrap();
            assert_eq!(out, c.bytes, "{name} block {i}");
        }
    }
}

#[test]
fn dequantization_is_bit_exact_for_all_block_formats() {
    let all = KQUANTS.iter().copied().chain([(QuantType::Q8_0, "q8_0")]);
    for (q, name) in all {
        for (i, c) in load(name).iter().enumerate() {
            let mut y = vec![0.0f32; q.block_elems()];
            quant::dequantize_block(q, &c.bytes, &mut y).unwrap();
            for (a, b) in y.iter().zip(&c.deq) {
                assert_eq!(a.to_bits(), b.to_bits(), "{name} block {i}");
            }
        }
    }
}

#[test]
fn dequantization_matches_element_indexed_oracle() {
    let all = KQUANTS.iter().copied().chain([(QuantType::Q8_0, "q8_0")]);
    for (q, name) in all {
        for c in load(name) {
            let mut y = vec![0.0f32; q.block_elems()];
            quant::dequantize_block(q, &c.bytes, &mut y).unwrap();
            for (i, v) in y.iter().enumerate() {
                let o = oracle_element(q, &c.bytes, i);
                // the oracle may fuse the scale products differently
                assert!((v - o).abs() <= 1e-6 * o.abs().max(1e-3), "{name}[{i}]: {v} vs {o}");
            }
        }
    }
}

#[test]
fn own_encodings_decode_identically_under_oracle() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for q in QuantType::LADDER {
        for _ in 0..50 {
            let x: Vec<f32> = (0..q.block_elems()).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut b = vec![0u8; q.block_bytes()];
            quant::quantize_block(q, &x, &mut b).unwrap();
            let mut y = vec![0.0f32; q.block_elems()];
            quant::dequantize_block(q, &b, &mut y).unwrap();
            for (i, v) in y.iter().enumerate() {
                let o = oracle_element(q, &b, i);
                assert!((v - o).abs() <= 1e-6 * o.abs().max(1e-3), "{q}[{i}]");
            }
        }
    }
}
