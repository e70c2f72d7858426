//! Q8_0: 32 elements per block, `d: f16` followed by 32 `i8` quants.

use super::f16::{f16_ceil_positive, f16_floor_positive, f16_to_f32};

pub const QK8_0: usize = 32;
pub const Q8_0_BYTES: usize = 34;

/// Quantizes one block.
///
/// The ideal scale `absmax / 127` is not representable in f16, so both f16
/// neighbours are tried and the one with the smaller worst-case element error
/// is kept (ties keep the lower scale). Quants are rounded half away from
/// zero against the stored scale, which bounds every element error by
/// `absmax / 254` whenever the scale is an f16 normal.
pub fn quantize_q8_0(x: &[f32], out: &mut [u8]) {
    debug_assert_eq!(x.len(), QK8_0);
    let amax = x.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let ideal = amax / 127.0;

    let mut best: Option<(f32, u16, [i8; QK8_0])> = None;
    for bits in [f16_floor_positive(ideal), f16_ceil_positive(ideal)] {
        let d = f16_to_f32(bits);
        let id = if d != 0.0 { 1.0 / d } else { 0.0 };
        let mut qs = [0i8; QK8_0];
        let mut worst = 0.0f32;
        for (q, &v) in qs.iter_mut().zip(x) {
            let level = (v * id).round().clamp(-127.0, 127.0);
            *q = level as i8;
            worst = worst.max((v - d * level).abs());
        }
        if best.as_ref().is_none_or(|(err, _, _)| worst < *err) {
            best = Some((worst, bits, qs));
        }
    }
    let (_, bits, qs) = best.expect("two candidates evaluated");
    out[..2].copy_from_slice(&bits.to_le_bytes());
    for (dst, q) in out[2..Q8_0_BYTES].iter_mut().zip(qs) {
        *dst = q as u8;
    }
}

pub fn dequantize_q8_0(raw: &[u8], out: &mut [f32]) {
    let d = f16_to_f32(u16::from_le_bytes([raw[0], raw[1]]));
    for (y, &q) in out.iter_mut().zip(&raw[2..Q8_0_BYTES]) {
        *y = d * (q as i8) as f32;
    }
}
