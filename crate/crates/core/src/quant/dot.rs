//! Fused dot products between a quantized row and an f32 activation.
//!
//! Weights are never expanded to an f32 row. Each block produces integer-level
//! partial sums `Σ q·x` (and `Σ x` for formats with a min), which are scaled
//! once per sub-block and added to a single f32 accumulator in block order.
//! The accumulation order is fixed, so results are identical across runs and
//! thread counts.

use super::f16::f16_to_f32;
use super::kquants::{q3k_scales, scale_min_k4, QK_K};
use super::q8_0::QK8_0;
use super::QuantType;

#[inline]
fn half(raw: &[u8], at: usize) -> f32 {
    f16_to_f32(u16::from_le_bytes([raw[at], raw[at + 1]]))
}

/// Dot product of one encoded row with `x`. Lengths must already be checked.
pub(crate) fn dot_row(qtype: QuantType, row: &[u8], x: &[f32]) -> f32 {
    match qtype {
        QuantType::F32 => dot_f32(row, x),
        QuantType::F16 => dot_f16(row, x),
        QuantType::Q8_0 => dot_q8_0(row, x),
        QuantType::Q2K => dot_q2k(row, x),
        QuantType::Q3K => dot_q3k(row, x),
        QuantType::Q4K => dot_q4k(row, x),
        QuantType::Q5K => dot_q5k(row, x),
        QuantType::Q6K => dot_q6k(row, x),
    }
}

fn dot_f32(row: &[u8], x: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (wb, xb) in row.chunks(4 * 32).zip(x.chunks(32)) {
        let mut part = [0.0f32; 8];
        for (i, (w, &xv)) in wb.chunks_exact(4).zip(xb).enumerate() {
            part[i % 8] += f32::from_le_bytes([w[0], w[1], w[2], w[3]]) * xv;
        }
        acc += part.iter().sum::<f32>();
    }
    acc
}

fn dot_f16(row: &[u8], x: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    let mut w = [0.0f32; 32];
    for (wb, xb) in row.chunks(2 * 32).zip(x.chunks(32)) {
        let n = xb.len();
        for (v, b) in w.iter_mut().zip(wb.chunks_exact(2)) {
            *v = f16_to_f32(u16::from_le_bytes([b[0], b[1]]));
        }
        if n % 8 == 0 {
            acc += sum_f(&w[..n], xb);
        } else {
            acc += w[..n].iter().zip(xb).map(|(a, b)| a * b).sum::<f32>();
        }
    }
    acc
}

fn dot_q8_0(row: &[u8], x: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (block, xb) in row.chunks_exact(34).zip(x.chunks_exact(QK8_0)) {
        let d = half(block, 0);
        let mut q = [0.0f32; 32];
        for (v, &b) in q.iter_mut().zip(&block[2..]) {
            *v = (b as i8) as f32;
        }
        acc += d * sum_f(&q, xb);
    }
    acc
}

// The group sums below keep eight interleaved partial sums so the loops
// vectorize. Group lengths are always multiples of 8.

/// `(Σ q·x, Σ x)` over a group of levels widened to f32.
#[inline(always)]
fn sums_f(levels: &[f32], x: &[f32]) -> (f32, f32) {
    let mut qx = [0.0f32; 8];
    let mut sx = [0.0f32; 8];
    for (q, xs) in levels.chunks_exact(8).zip(x.chunks_exact(8)) {
        for k in 0..8 {
            qx[k] += q[k] * xs[k];
            sx[k] += xs[k];
        }
    }
    (qx.iter().sum(), sx.iter().sum())
}

#[inline(always)]
fn sum_f(w: &[f32], x: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    for (ws, xs) in w.chunks_exact(8).zip(x.chunks_exact(8)) {
        for k in 0..8 {
            acc[k] += ws[k] * xs[k];
        }
    }
    acc.iter().sum()
}

fn dot_q4k(row: &[u8], x: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    let mut lv = [0.0f32; 64];
    for (block, xb) in row.chunks_exact(144).zip(x.chunks_exact(QK_K)) {
        let d = half(block, 0);
        let dmin = half(block, 2);
        let scales = &block[4..16];
        let mut bsum = 0.0f32;
        for chunk in 0..4 {
            let q = &block[16 + 32 * chunk..16 + 32 * chunk + 32];
            for l in 0..32 {
                lv[l] = (q[l] & 0xf) as f32;
                lv[l + 32] = (q[l] >> 4) as f32;
            }
            let xs = &xb[64 * chunk..64 * chunk + 64];
            let (sc1, m1) = scale_min_k4(2 * chunk, scales);
            let (sc2, m2) = scale_min_k4(2 * chunk + 1, scales);
            let (qx1, x1) = sums_f(&lv[..32], &xs[..32]);
            let (qx2, x2) = sums_f(&lv[32..], &xs[32..]);
            bsum += d * sc1 as f32 * qx1 - dmin * m1 as f32 * x1;
            bsum += d * sc2 as f32 * qx2 - dmin * m2 as f32 * x2;
        }
        acc += bsum;
    }
    acc
}

fn dot_q5k(row: &[u8], x: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    let mut lv = [0.0f32; 64];
    for (block, xb) in row.chunks_exact(176).zip(x.chunks_exact(QK_K)) {
        let d = half(block, 0);
        let dmin = half(block, 2);
        let scales = &block[4..16];
        let qh = &block[16..48];
        let mut bsum = 0.0f32;
        for chunk in 0..4 {
            let q = &block[48 + 32 * chunk..48 + 32 * chunk + 32];
            let (u1, u2) = (1u8 << (2 * chunk), 2u8 << (2 * chunk));
            for l in 0..32 {
                lv[l] = ((q[l] & 0xf) | if qh[l] & u1 != 0 { 16 } else { 0 }) as f32;
                lv[l + 32] = ((q[l] >> 4) | if qh[l] & u2 != 0 { 16 } else { 0 }) as f32;
            }
            let xs = &xb[64 * chunk..64 * chunk + 64];
            let (sc1, m1) = scale_min_k4(2 * chunk, scales);
            let (sc2, m2) = scale_min_k4(2 * chunk + 1, scales);
            let (qx1, x1) = sums_f(&lv[..32], &xs[..32]);
            let (qx2, x2) = sums_f(&lv[32..], &xs[32..]);
            bsum += d * sc1 as f32 * qx1 - dmin * m1 as f32 * x1;
            bsum += d * sc2 as f32 * qx2 - dmin * m2 as f32 * x2;
        }
        acc += bsum;
    }
    acc
}

fn dot_q6k(row: &[u8], x: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    let mut lv = [0.0f32; 128];
    for (block, xb) in row.chunks_exact(210).zip(x.chunks_exact(QK_K)) {
        let d = half(block, 208);
        let mut bsum = 0.0f32;
        for h in 0..2 {
            let ql = &block[64 * h..64 * h + 64];
            let qh = &block[128 + 32 * h..128 + 32 * h + 32];
            let sc = &block[192 + 8 * h..192 + 8 * h + 8];
            for l in 0..32 {
                lv[l] = (((ql[l] & 0xf) | ((qh[l] & 3) << 4)) as i8 - 32) as f32;
                lv[l + 32] = (((ql[l + 32] & 0xf) | (((qh[l] >> 2) & 3) << 4)) as i8 - 32) as f32;
                lv[l + 64] = (((ql[l] >> 4) | (((qh[l] >> 4) & 3) << 4)) as i8 - 32) as f32;
                lv[l + 96] = (((ql[l + 32] >> 4) | (((qh[l] >> 6) & 3) << 4)) as i8 - 32) as f32;
            }
            let xs = &xb[128 * h..128 * h + 128];
            for g in 0..8 {
                let s = sum_f(&lv[16 * g..16 * g + 16], &xs[16 * g..16 * g + 16]);
                bsum += d * (sc[g] as i8) as f32 * s;
            }
        }
        acc += bsum;
    }
    acc
}

fn dot_q2k(row: &[u8], x: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (block, xb) in row.chunks_exact(84).zip(x.chunks_exact(QK_K)) {
        let scales = &block[0..16];
        let d = half(block, 80);
        let dmin = half(block, 82);
        let mut bsum = 0.0f32;
        let mut lv = [0.0f32; 16];
        let mut is = 0;
        let mut y = 0;
        for h in 0..2 {
            let q = &block[16 + 32 * h..16 + 32 * h + 32];
            for shift in (0..8).step_by(2) {
                for part in 0..2 {
                    for l in 0..16 {
                        lv[l] = ((q[l + 16 * part] >> shift) & 3) as f32;
                    }
                    let (qx, sx) = sums_f(&lv, &xb[y..y + 16]);
                    let sc = scales[is];
                    bsum += d * (sc & 0xf) as f32 * qx - dmin * (sc >> 4) as f32 * sx;
                    is += 1;
                    y += 16;
                }
            }
        }
        acc += bsum;
    }
    acc
}

fn dot_q3k(row: &[u8], x: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (block, xb) in row.chunks_exact(110).zip(x.chunks_exact(QK_K)) {
        let hmask = &block[0..32];
        let scales = q3k_scales(&block[96..108]);
        let d = half(block, 108);
        let mut bsum = 0.0f32;
        let mut is = 0;
        let mut y = 0;
        let mut m = 1u8;
        for h in 0..2 {
            let q = &block[32 + 32 * h..32 + 32 * h + 32];
            for shift in (0..8).step_by(2) {
                for part in 0..2 {
                    let mut lv = [0.0f32; 16];
                    for (l, v) in lv.iter_mut().enumerate() {
                        let idx = l + 16 * part;
                        let low = ((q[idx] >> shift) & 3) as i8;
                        *v = (low - if hmask[idx] & m != 0 { 0 } else { 4 }) as f32;
                    }
                    let s = sum_f(&lv, &xb[y..y + 16]);
                    bsum += d * scales[is] as f32 * s;
                    is += 1;
                    y += 16;
                }
                m <<= 1;
            }
        }
        acc += bsum;
    }
    acc
}
