//! IEEE 754 binary16 conversions.
//!
//! Scales in every block format are stored as half precision, so these sit on
//! the hot path of dequantization and are kept branch-light.

/// Decodes a binary16 bit pattern. Subnormals are exact, infinities and NaNs
/// propagate (NaN payload bits are kept in the high mantissa).
#[inline]
pub fn f16_to_f32(bits: u16) -> f32 {
    let sign = ((bits as u32) & 0x8000) << 16;
    let exp = ((bits >> 10) & 0x1f) as u32;
    let mant = (bits & 0x3ff) as u32;
    match exp {
        0 => {
            // zero or subnormal: mant * 2^-24 is exact in f32
            let mag = mant as f32 * f32::from_bits(0x3380_0000);
            f32::from_bits(sign | mag.to_bits())
        }
        31 => f32::from_bits(sign | 0x7f80_0000 | (mant << 13)),
        _ => f32::from_bits(sign | ((exp + 112) << 23) | (mant << 13)),
    }
}

/// Encodes with round-to-nearest-even, the rounding used by reference tooling.
#[inline]
pub fn f32_to_f16(value: f32) -> u16 {
    let x = value.to_bits();
    let sign = ((x >> 16) & 0x8000) as u16;
    let abs = x & 0x7fff_ffff;

    if abs >= 0x7f80_0000 {
        if abs == 0x7f80_0000 {
            return sign | 0x7c00;
        }
        // quiet NaN, keep the top payload bits
        return sign | 0x7e00 | ((abs >> 13) & 0x3ff) as u16;
    }
    if abs < 0x3880_0000 {
        // result is subnormal (or rounds up into the smallest normal)
        let scaled = f32::from_bits(abs) * 16_777_216.0;
        return sign | scaled.round_ties_even() as u16;
    }

    let exp = (abs >> 23) as i32 - 127 + 15;
    if exp >= 31 {
        return sign | 0x7c00;
    }
    let mant = abs & 0x7f_ffff;
    let mut half = ((exp as u32) << 10) | (mant >> 13);
    let rem = mant & 0x1fff;
    if rem > 0x1000 || (rem == 0x1000 && half & 1 == 1) {
        // carry may roll into the exponent, and up to infinity, which is correct
        half += 1;
    }
    sign | half as u16
}

/// Largest binary16 value not greater than `value`, for finite `value >= 0`.
pub(crate) fn f16_floor_positive(value: f32) -> u16 {
    debug_assert!(value >= 0.0 && value.is_finite());
    let nearest = f32_to_f16(value);
    if f16_to_f32(nearest) > value {
        nearest - 1
    } else {
        nearest
    }
}

/// Smallest binary16 value not less than `value`, for finite `value >= 0`.
pub(crate) fn f16_ceil_positive(value: f32) -> u16 {
    debug_assert!(value >= 0.0 && value.is_finite());
    let nearest = f32_to_f16(value);
    if f16_to_f32(nearest) < value {
        nearest + 1
    } else {
        nearest
    }
}
