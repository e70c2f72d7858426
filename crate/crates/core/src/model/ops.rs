//! Scalar building blocks of the decoder.

use super::ModelError;

/// `y_i = w_i * x_i / sqrt(mean(x^2) + eps)`.
pub fn rms_norm(x: &[f32], w: &[f32], eps: f32) -> Result<Vec<f32>, ModelError> {
    let mut y = vec![0.0; x.len()];
    rms_norm_into(x, w, eps, &mut y)?;
    Ok(y)
}

pub fn rms_norm_into(x: &[f32], w: &[f32], eps: f32, out: &mut [f32]) -> Result<(), ModelError> {
    if x.len() != w.len() || x.len() != out.len() {
        return Err(ModelError::LengthMismatch {
            expected: w.len(),
            actual: x.len(),
        });
    }
    let ss: f32 = x.iter().map(|v| v * v).sum::<f32>() / x.len().max(1) as f32;
    let scale = 1.0 / (ss + eps).sqrt();
    if !scale.is_finite() {
        // all-zero input with eps 0
        out.fill(0.0);
        return Ok(());
    }
    for ((o, &xi), &wi) in out.iter_mut().zip(x).zip(w) {
        *o = wi * (xi * scale);
    }
    Ok(())
}

/// Rotates consecutive pairs `(v[2j], v[2j+1])` by `position * theta^(-2j/d)`.
pub fn rope_apply(v: &[f32], position: usize, theta: f32) -> Result<Vec<f32>, ModelError> {
    let mut out = v.to_vec();
    rope_in_place(&mut out, position, theta)?;
    Ok(out)
}

pub fn rope_in_place(v: &mut [f32], position: usize, theta: f32) -> Result<(), ModelError> {
    let d = v.len();
    if !d.is_multiple_of(2) {
        return Err(ModelError::OddHeadDim(d));
    }
    let pos = position as f32;
    for (j, pair) in v.chunks_exact_mut(2).enumerate() {
        let freq = theta.powf(-((2 * j) as f32) / d as f32);
        let (sin, cos) = (pos * freq).sin_cos();
        let (x, y) = (pair[0], pair[1]);
        pair[0] = x * cos - y * sin;
        pair[1] = x * sin + y * cos;
    }
    Ok(())
}

/// Numerically stable softmax over `x`.
pub fn softmax_in_place(x: &mut [f32]) {
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}

pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}
