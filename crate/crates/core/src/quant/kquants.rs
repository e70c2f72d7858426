//! K-quant super-block formats (256 elements per block).
//!
//! Quantizers follow the reference scale search step for step, including the
//! float evaluation order, so that blocks are byte-identical with files made
//! by standard tooling. Byte layouts:
//!
//! | type | bytes | layout                                             |
//! |------|-------|----------------------------------------------------|
//! | Q2_K | 84    | scales[16] qs[64] d:f16 dmin:f16                   |
//! | Q3_K | 110   | hmask[32] qs[64] scales[12] d:f16                  |
//! | Q4_K | 144   | d:f16 dmin:f16 scales[12] qs[128]                  |
//! | Q5_K | 176   | d:f16 dmin:f16 scales[12] qh[32] qs[128]           |
//! | Q6_K | 210   | ql[128] qh[64] scales[16]:i8 d:f16                 |

use super::f16::{f16_to_f32, f32_to_f16};

pub const QK_K: usize = 256;
pub const K_SCALE_SIZE: usize = 12;

pub const Q2K_BYTES: usize = 84;
pub const Q3K_BYTES: usize = 110;
pub const Q4K_BYTES: usize = 144;
pub const Q5K_BYTES: usize = 176;
pub const Q6K_BYTES: usize = 210;

const GROUP_MAX_EPS: f32 = 1e-15;

#[inline]
fn read_f16(raw: &[u8], at: usize) -> f32 {
    f16_to_f32(u16::from_le_bytes([raw[at], raw[at + 1]]))
}

#[inline]
fn write_f16(out: &mut [u8], at: usize, value: f32) {
    out[at..at + 2].copy_from_slice(&f32_to_f16(value).to_le_bytes());
}

/// Round-to-nearest via the float magic-number trick (ties to even).
/// Valid for |x| <= 4194303.
#[inline]
pub(crate) fn nearest_int(x: f32) -> i32 {
    let val = x + 12_582_912.0f32;
    (val.to_bits() & 0x007f_ffff) as i32 - 0x0040_0000
}

/// Unpacks the j-th 6-bit (scale, min) pair of a Q4_K/Q5_K scale array.
#[inline]
pub(crate) fn scale_min_k4(j: usize, q: &[u8]) -> (u8, u8) {
    if j < 4 {
        (q[j] & 63, q[j + 4] & 63)
    } else {
        (
            (q[j + 4] & 0xf) | ((q[j - 4] >> 6) << 4),
            (q[j + 4] >> 4) | ((q[j] >> 6) << 4),
        )
    }
}

/// Unpacks the 16 signed 6-bit sub-block scales of a Q3_K block.
#[inline]
pub(crate) fn q3k_scales(packed: &[u8]) -> [i8; 16] {
    let mut out = [0i8; 16];
    for (j, slot) in out.iter_mut().enumerate() {
        let low = if j < 8 {
            packed[j] & 0xf
        } else {
            packed[j - 8] >> 4
        };
        let high = (packed[8 + j % 4] >> (2 * (j / 4))) & 3;
        *slot = ((low | (high << 4)) as i8) - 32;
    }
    out
}

fn make_qx_quants(x: &[f32], nmax: i32, levels: &mut [i8]) -> f32 {
    let mut max = 0.0f32;
    let mut amax = 0.0f32;
    for &v in x {
        let ax = v.abs();
        if ax > amax {
            amax = ax;
            max = v;
        }
    }
    if amax < GROUP_MAX_EPS {
        levels.fill(0);
        return 0.0;
    }
    let weight = |v: f32| v * v;

    let mut iscale = -(nmax as f32) / max;
    let mut sumlx = 0.0f32;
    let mut suml2 = 0.0f32;
    for (i, &v) in x.iter().enumerate() {
        let l = nearest_int(iscale * v).clamp(-nmax, nmax - 1);
        levels[i] = (l + nmax) as i8;
        let w = weight(v);
        sumlx += w * v * l as f32;
        suml2 += w * l as f32 * l as f32;
    }
    let mut scale = if suml2 != 0.0 { sumlx / suml2 } else { 0.0 };
    let mut best = scale * sumlx;
    for is in -9i32..=9 {
        if is == 0 {
            continue;
        }
        iscale = -(nmax as f32 + 0.1f32 * is as f32) / max;
        sumlx = 0.0;
        suml2 = 0.0;
        for &v in x {
            let l = nearest_int(iscale * v).clamp(-nmax, nmax - 1);
            let w = weight(v);
            sumlx += w * v * l as f32;
            suml2 += w * l as f32 * l as f32;
        }
        if suml2 > 0.0 && sumlx * sumlx > best * suml2 {
            for (i, &v) in x.iter().enumerate() {
                let l = nearest_int(iscale * v).clamp(-nmax, nmax - 1);
                levels[i] = (nmax + l) as i8;
            }
            scale = sumlx / suml2;
            best = scale * sumlx;
        }
    }
    scale
}

fn make_q3_quants(x: &[f32], nmax: i32, levels: &mut [i8]) -> f32 {
    let mut max = 0.0f32;
    let mut amax = 0.0f32;
    for &v in x {
        let ax = v.abs();
        if ax > amax {
            amax = ax;
            max = v;
        }
    }
    if amax < GROUP_MAX_EPS {
        levels.fill(0);
        return 0.0;
    }
    let iscale = -(nmax as f32) / max;
    let mut sumlx = 0.0f32;
    let mut suml2 = 0.0f32;
    for (i, &v) in x.iter().enumerate() {
        let l = nearest_int(iscale * v).clamp(-nmax, nmax - 1);
        levels[i] = l as i8;
        let w = v * v;
        sumlx += w * v * l as f32;
        suml2 += w * l as f32 * l as f32;
    }
    for _ in 0..5 {
        let mut changed = 0;
        for (i, &v) in x.iter().enumerate() {
            let w = v * v;
            let cur = levels[i] as f32;
            let mut slx = sumlx - w * v * cur;
            if slx > 0.0 {
                let mut sl2 = suml2 - w * cur * cur;
                let new_l = nearest_int(v * sl2 / slx).clamp(-nmax, nmax - 1);
                if new_l != levels[i] as i32 {
                    slx += w * v * new_l as f32;
                    sl2 += w * new_l as f32 * new_l as f32;
                    if sl2 > 0.0 && slx * slx * suml2 > sumlx * sumlx * sl2 {
                        levels[i] = new_l as i8;
                        sumlx = slx;
                        suml2 = sl2;
                        changed += 1;
                    }
                }
            }
        }
        if changed == 0 {
            break;
        }
    }
    for l in levels.iter_mut() {
        *l += nmax as i8;
    }
    if suml2 > 0.0 {
        sumlx / suml2
    } else {
        0.0
    }
}

/// Weighted affine (scale, min) search. Returns `(scale, -min)`.
#[allow(clippy::too_many_arguments)]
fn make_qkx2_quants(
    x: &[f32],
    weights: &[f32],
    nmax: i32,
    levels: &mut [u8],
    scratch: &mut [u8],
    rmin: f32,
    rdelta: f32,
    nstep: i32,
    use_mad: bool,
) -> (f32, f32) {
    let n = x.len();
    let mut min = x[0];
    let mut max = x[0];
    let mut sum_w = weights[0];
    let mut sum_x = sum_w * x[0];
    for i in 1..n {
        if x[i] < min {
            min = x[i];
        }
        if x[i] > max {
            max = x[i];
        }
        let w = weights[i];
        sum_w += w;
        sum_x += w * x[i];
    }
    if min > 0.0 {
        min = 0.0;
    }
    if max == min {
        levels.fill(0);
        return (0.0, -min);
    }
    let err = |d: f32| if use_mad { d.abs() } else { d * d };

    let mut iscale = nmax as f32 / (max - min);
    let mut scale = 1.0 / iscale;
    let mut best_error = 0.0f32;
    for i in 0..n {
        let l = nearest_int(iscale * (x[i] - min)).clamp(0, nmax);
        levels[i] = l as u8;
        let diff = scale * levels[i] as f32 + min - x[i];
        best_error += weights[i] * err(diff);
    }
    if nstep < 1 {
        return (scale, -min);
    }
    for is in 0..=nstep {
        iscale = (rmin + rdelta * is as f32 + nmax as f32) / (max - min);
        let mut sum_l = 0.0f32;
        let mut sum_l2 = 0.0f32;
        let mut sum_xl = 0.0f32;
        for i in 0..n {
            let l = nearest_int(iscale * (x[i] - min)).clamp(0, nmax);
            scratch[i] = l as u8;
            let w = weights[i];
            let lf = l as f32;
            sum_l += w * lf;
            sum_l2 += w * lf * lf;
            sum_xl += w * lf * x[i];
        }
        let det = sum_w * sum_l2 - sum_l * sum_l;
        if det > 0.0 {
            let mut this_scale = (sum_w * sum_xl - sum_x * sum_l) / det;
            let mut this_min = (sum_l2 * sum_x - sum_l * sum_xl) / det;
            if this_min > 0.0 {
                this_min = 0.0;
                this_scale = sum_xl / sum_l2;
            }
            let mut cur_error = 0.0f32;
            for i in 0..n {
                let diff = this_scale * scratch[i] as f32 + this_min - x[i];
                cur_error += weights[i] * err(diff);
            }
            if cur_error < best_error {
                levels[..n].copy_from_slice(&scratch[..n]);
                best_error = cur_error;
                scale = this_scale;
                min = this_min;
            }
        }
    }
    (scale, -min)
}

/// Packs 2-bit levels: each byte holds four elements 32 apart.
fn pack_2bit(levels: &[u8; QK_K], qs: &mut [u8]) {
    for j in (0..QK_K).step_by(128) {
        for l in 0..32 {
            qs[j / 4 + l] = levels[j + l]
                | (levels[j + l + 32] << 2)
                | (levels[j + l + 64] << 4)
                | (levels[j + l + 96] << 6);
        }
    }
}

pub fn quantize_q2k(x: &[f32], out: &mut [u8]) {
    debug_assert_eq!(x.len(), QK_K);
    let mut levels = [0u8; QK_K];
    let mut scratch = [0u8; 16];
    let mut weights = [0f32; 16];
    let mut scales = [0f32; 16];
    let mut mins = [0f32; 16];
    let q4scale = 15.0f32;

    let mut max_scale = 0.0f32;
    let mut max_min = 0.0f32;
    for j in 0..16 {
        let sub = &x[16 * j..16 * j + 16];
        for (w, v) in weights.iter_mut().zip(sub) {
            *w = v.abs();
        }
        let (scale, min) = make_qkx2_quants(
            sub,
            &weights,
            3,
            &mut levels[16 * j..16 * j + 16],
            &mut scratch,
            -0.5,
            0.1,
            15,
            true,
        );
        scales[j] = scale;
        mins[j] = min;
        if scale > max_scale {
            max_scale = scale;
        }
        if min > max_min {
            max_min = min;
        }
    }

    let (sc, rest) = out.split_at_mut(16);
    if max_scale > 0.0 {
        let iscale = q4scale / max_scale;
        for j in 0..16 {
            sc[j] = nearest_int(iscale * scales[j]) as u8;
        }
        write_f16(rest, 64, max_scale / q4scale);
    } else {
        sc.fill(0);
        write_f16(rest, 64, 0.0);
    }
    if max_min > 0.0 {
        let iscale = q4scale / max_min;
        for j in 0..16 {
            let l = nearest_int(iscale * mins[j]);
            sc[j] |= (l << 4) as u8;
        }
        write_f16(rest, 66, max_min / q4scale);
    } else {
        write_f16(rest, 66, 0.0);
    }
    let d_all = read_f16(rest, 64);
    let dmin_all = read_f16(rest, 66);
    for j in 0..16 {
        let d = d_all * (sc[j] & 0xf) as f32;
        if d == 0.0 {
            continue;
        }
        let dm = dmin_all * (sc[j] >> 4) as f32;
        for ii in 0..16 {
            let l = nearest_int((x[16 * j + ii] + dm) / d).clamp(0, 3);
            levels[16 * j + ii] = l as u8;
        }
    }
    pack_2bit(&levels, &mut rest[..64]);
}

pub fn dequantize_q2k(raw: &[u8], out: &mut [f32]) {
    let scales = &raw[0..16];
    let qs = &raw[16..80];
    let d = read_f16(raw, 80);
    let dmin = read_f16(raw, 82);
    let mut y = 0;
    let mut is = 0;
    for half in 0..2 {
        let q = &qs[32 * half..32 * half + 32];
        for shift in (0..8).step_by(2) {
            for part in 0..2 {
                let sc = scales[is];
                is += 1;
                let dl = d * (sc & 0xf) as f32;
                let ml = dmin * (sc >> 4) as f32;
                for l in 0..16 {
                    out[y] = dl * ((q[l + 16 * part] >> shift) & 3) as f32 - ml;
                    y += 1;
                }
            }
        }
    }
}

pub fn quantize_q3k(x: &[f32], out: &mut [u8]) {
    debug_assert_eq!(x.len(), QK_K);
    let mut signed = [0i8; QK_K];
    let mut scales = [0f32; 16];

    let mut max_scale = 0.0f32;
    let mut amax = 0.0f32;
    for j in 0..16 {
        scales[j] = make_q3_quants(&x[16 * j..16 * j + 16], 4, &mut signed[16 * j..16 * j + 16]);
        let scale = scales[j].abs();
        if scale > amax {
            amax = scale;
            max_scale = scales[j];
        }
    }

    out.fill(0);
    let (hmask, rest) = out.split_at_mut(32);
    let (qs, rest) = rest.split_at_mut(64);
    let (packed, dbytes) = rest.split_at_mut(12);
    if max_scale != 0.0 {
        let iscale = -32.0f32 / max_scale;
        for j in 0..16 {
            let mut l = nearest_int(iscale * scales[j]) as i8 as i32;
            l = l.clamp(-32, 31) + 32;
            if j < 8 {
                packed[j] = (l & 0xf) as u8;
            } else {
                packed[j - 8] |= ((l & 0xf) << 4) as u8;
            }
            l >>= 4;
            packed[j % 4 + 8] |= (l << (2 * (j / 4))) as u8;
        }
        write_f16(dbytes, 0, 1.0 / iscale);
    } else {
        write_f16(dbytes, 0, 0.0);
    }

    let d_all = read_f16(dbytes, 0);
    let sub_scales = q3k_scales(packed);
    for j in 0..16 {
        let d = d_all * sub_scales[j] as f32;
        if d == 0.0 {
            continue;
        }
        for ii in 0..16 {
            let l = nearest_int(x[16 * j + ii] / d).clamp(-4, 3);
            signed[16 * j + ii] = (l + 4) as i8;
        }
    }

    let mut levels = [0u8; QK_K];
    let mut m = 0;
    let mut hm = 1u8;
    for j in 0..QK_K {
        let mut l = signed[j] as u8;
        if l > 3 {
            hmask[m] |= hm;
            l -= 4;
        }
        levels[j] = l;
        m += 1;
        if m == QK_K / 8 {
            m = 0;
            hm <<= 1;
        }
    }
    pack_2bit(&levels, qs);
}

pub fn dequantize_q3k(raw: &[u8], out: &mut [f32]) {
    let hmask = &raw[0..32];
    let qs = &raw[32..96];
    let scales = q3k_scales(&raw[96..108]);
    let d_all = read_f16(raw, 108);
    let mut y = 0;
    let mut is = 0;
    let mut m = 1u8;
    for half in 0..2 {
        let q = &qs[32 * half..32 * half + 32];
        for shift in (0..8).step_by(2) {
            for part in 0..2 {
                let dl = d_all * scales[is] as f32;
                is += 1;
                for l in 0..16 {
                    let idx = l + 16 * part;
                    let low = ((q[idx] >> shift) & 3) as i32;
                    let high = if hmask[idx] & m != 0 { 0 } else { 4 };
                    out[y] = dl * (low - high) as f32;
                    y += 1;
                }
            }
            m <<= 1;
        }
    }
}

/// Shared scale/min search for Q4_K and Q5_K. Returns the packed scale bytes,
/// d, dmin and the final per-element levels.
fn quantize_affine_k(
    x: &[f32],
    nmax: i32,
    rmin: f32,
    nstep: i32,
    header: &mut [u8],
) -> [u8; QK_K] {
    let mut levels = [0u8; QK_K];
    let mut scratch = [0u8; 32];
    let mut weights = [0f32; 32];
    let mut scales = [0f32; 8];
    let mut mins = [0f32; 8];

    let mut max_scale = 0.0f32;
    let mut max_min = 0.0f32;
    for j in 0..8 {
        let sub = &x[32 * j..32 * j + 32];
        let mut sum_x2 = 0.0f32;
        for &v in sub {
            sum_x2 += v * v;
        }
        let av_x = (sum_x2 / 32.0).sqrt();
        for (w, v) in weights.iter_mut().zip(sub) {
            *w = av_x + v.abs();
        }
        let (scale, min) = make_qkx2_quants(
            sub,
            &weights,
            nmax,
            &mut levels[32 * j..32 * j + 32],
            &mut scratch,
            rmin,
            0.1,
            nstep,
            false,
        );
        scales[j] = scale;
        mins[j] = min;
        if scale > max_scale {
            max_scale = scale;
        }
        if min > max_min {
            max_min = min;
        }
    }

    let inv_scale = if max_scale > 0.0 { 63.0 / max_scale } else { 0.0 };
    let inv_min = if max_min > 0.0 { 63.0 / max_min } else { 0.0 };
    let packed = &mut header[4..16];
    packed.fill(0);
    for j in 0..8 {
        let ls = (nearest_int(inv_scale * scales[j]) as u8).min(63);
        let lm = (nearest_int(inv_min * mins[j]) as u8).min(63);
        if j < 4 {
            packed[j] = ls;
            packed[j + 4] = lm;
        } else {
            packed[j + 4] = (ls & 0xf) | ((lm & 0xf) << 4);
            packed[j - 4] |= (ls >> 4) << 6;
            packed[j] |= (lm >> 4) << 6;
        }
    }
    write_f16(header, 0, max_scale / 63.0);
    write_f16(header, 2, max_min / 63.0);

    let d_all = read_f16(header, 0);
    let dmin_all = read_f16(header, 2);
    for j in 0..8 {
        let (sc, m) = scale_min_k4(j, &header[4..16]);
        let d = d_all * sc as f32;
        if d == 0.0 {
            continue;
        }
        let dm = dmin_all * m as f32;
        for ii in 0..32 {
            let l = nearest_int((x[32 * j + ii] + dm) / d).clamp(0, nmax);
            levels[32 * j + ii] = l as u8;
        }
    }
    levels
}

pub fn quantize_q4k(x: &[f32], out: &mut [u8]) {
    debug_assert_eq!(x.len(), QK_K);
    let levels = quantize_affine_k(x, 15, -1.0, 20, &mut out[..16]);
    let qs = &mut out[16..144];
    for (chunk, j) in (0..QK_K).step_by(64).enumerate() {
        for l in 0..32 {
            qs[32 * chunk + l] = levels[j + l] | (levels[j + l + 32] << 4);
        }
    }
}

pub fn dequantize_q4k(raw: &[u8], out: &mut [f32]) {
    let d = read_f16(raw, 0);
    let dmin = read_f16(raw, 2);
    let scales = &raw[4..16];
    let qs = &raw[16..144];
    for chunk in 0..4 {
        let (sc1, m1) = scale_min_k4(2 * chunk, scales);
        let (sc2, m2) = scale_min_k4(2 * chunk + 1, scales);
        let (d1, m1) = (d * sc1 as f32, dmin * m1 as f32);
        let (d2, m2) = (d * sc2 as f32, dmin * m2 as f32);
        let q = &qs[32 * chunk..32 * chunk + 32];
        let y = &mut out[64 * chunk..64 * chunk + 64];
        for l in 0..32 {
            y[l] = d1 * (q[l] & 0xf) as f32 - m1;
            y[l + 32] = d2 * (q[l] >> 4) as f32 - m2;
        }
    }
}

pub fn quantize_q5k(x: &[f32], out: &mut [u8]) {
    debug_assert_eq!(x.len(), QK_K);
    let levels = quantize_affine_k(x, 31, -0.5, 15, &mut out[..16]);
    let (qh, ql) = out[16..176].split_at_mut(32);
    qh.fill(0);
    let mut m1 = 1u8;
    let mut m2 = 2u8;
    for (chunk, n) in (0..QK_K).step_by(64).enumerate() {
        for j in 0..32 {
            let mut l1 = levels[n + j];
            if l1 > 15 {
                l1 -= 16;
                qh[j] |= m1;
            }
            let mut l2 = levels[n + j + 32];
            if l2 > 15 {
                l2 -= 16;
                qh[j] |= m2;
            }
            ql[32 * chunk + j] = l1 | (l2 << 4);
        }
        m1 <<= 2;
        m2 <<= 2;
    }
}

pub fn dequantize_q5k(raw: &[u8], out: &mut [f32]) {
    let d = read_f16(raw, 0);
    let dmin = read_f16(raw, 2);
    let scales = &raw[4..16];
    let qh = &raw[16..48];
    let ql = &raw[48..176];
    let mut u1 = 1u8;
    let mut u2 = 2u8;
    for chunk in 0..4 {
        let (sc1, m1) = scale_min_k4(2 * chunk, scales);
        let (sc2, m2) = scale_min_k4(2 * chunk + 1, scales);
        let (d1, m1) = (d * sc1 as f32, dmin * m1 as f32);
        let (d2, m2) = (d * sc2 as f32, dmin * m2 as f32);
        let q = &ql[32 * chunk..32 * chunk + 32];
        let y = &mut out[64 * chunk..64 * chunk + 64];
        for l in 0..32 {
            let hi1 = if qh[l] & u1 != 0 { 16 } else { 0 };
            let hi2 = if qh[l] & u2 != 0 { 16 } else { 0 };
            y[l] = d1 * ((q[l] & 0xf) + hi1) as f32 - m1;
            y[l + 32] = d2 * ((q[l] >> 4) + hi2) as f32 - m2;
        }
        u1 <<= 2;
        u2 <<= 2;
    }
}

pub fn quantize_q6k(x: &[f32], out: &mut [u8]) {
    debug_assert_eq!(x.len(), QK_K);
    let mut levels = [0i8; QK_K];
    let mut scales = [0f32; 16];

    let mut max_scale = 0.0f32;
    let mut max_abs_scale = 0.0f32;
    for ib in 0..16 {
        let scale = make_qx_quants(&x[16 * ib..16 * ib + 16], 32, &mut levels[16 * ib..16 * ib + 16]);
        scales[ib] = scale;
        let abs_scale = scale.abs();
        if abs_scale > max_abs_scale {
            max_abs_scale = abs_scale;
            max_scale = scale;
        }
    }

    out.fill(0);
    if max_abs_scale < GROUP_MAX_EPS {
        write_f16(out, 208, 0.0);
        return;
    }

    let iscale = -128.0f32 / max_scale;
    write_f16(out, 208, 1.0 / iscale);
    for ib in 0..16 {
        out[192 + ib] = nearest_int(iscale * scales[ib]).min(127) as i8 as u8;
    }
    let d_all = read_f16(out, 208);
    for j in 0..16 {
        let d = d_all * (out[192 + j] as i8) as f32;
        if d == 0.0 {
            continue;
        }
        for ii in 0..16 {
            let l = nearest_int(x[16 * j + ii] / d).clamp(-32, 31);
            levels[16 * j + ii] = (l + 32) as i8;
        }
    }

    let (ql, rest) = out.split_at_mut(128);
    let qh = &mut rest[..64];
    for (half, j) in (0..QK_K).step_by(128).enumerate() {
        let ql = &mut ql[64 * half..64 * half + 64];
        let qh = &mut qh[32 * half..32 * half + 32];
        for l in 0..32 {
            let lv = |k: usize| levels[j + l + k] as u8;
            ql[l] = (lv(0) & 0xf) | ((lv(64) & 0xf) << 4);
            ql[l + 32] = (lv(32) & 0xf) | ((lv(96) & 0xf) << 4);
            qh[l] = (lv(0) >> 4) | ((lv(32) >> 4) << 2) | ((lv(64) >> 4) << 4) | ((lv(96) >> 4) << 6);
        }
    }
}

pub fn dequantize_q6k(raw: &[u8], out: &mut [f32]) {
    let d = read_f16(raw, 208);
    for half in 0..2 {
        let ql = &raw[64 * half..64 * half + 64];
        let qh = &raw[128 + 32 * half..128 + 32 * half + 32];
        let sc = &raw[192 + 8 * half..192 + 8 * half + 8];
        let y = &mut out[128 * half..128 * half + 128];
        for l in 0..32 {
            let is = l / 16;
            let q1 = ((ql[l] & 0xf) | ((qh[l] & 3) << 4)) as i32 - 32;
            let q2 = ((ql[l + 32] & 0xf) | (((qh[l] >> 2) & 3) << 4)) as i32 - 32;
            let q3 = ((ql[l] >> 4) | (((qh[l] >> 4) & 3) << 4)) as i32 - 32;
            let q4 = ((ql[l + 32] >> 4) | (((qh[l] >> 6) & 3) << 4)) as i32 - 32;
            y[l] = d * (sc[is] as i8) as f32 * q1 as f32;
            y[l + 32] = d * (sc[is + 2] as i8) as f32 * q2 as f32;
            y[l + 64] = d * (sc[is + 4] as i8) as f32 * q3 as f32;
            y[l + 96] = d * (sc[is + 6] as i8) as f32 * q4 as f32;
        }
    }
}
