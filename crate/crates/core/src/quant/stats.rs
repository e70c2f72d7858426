use serde::Serialize;

use super::{dequantize, quantize, QuantError, QuantType};

/// Round-trip error of one encoding over a set of values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuantErrorStats {
    pub qtype: QuantType,
    pub elems: usize,
    pub rmse: f64,
    pub max_abs: f64,
    pub mean_abs: f64,
    /// `rmse / rms(x)`; zero when the input is all zeros.
    pub rel_rmse: f64,
}

pub fn quant_error_report(qtype: QuantType, x: &[f32]) -> Result<QuantErrorStats, QuantError> {
    let y = dequantize(qtype, &quantize(qtype, x)?, x.len())?;
    let mut se = 0.0f64;
    let mut sx = 0.0f64;
    let mut sa = 0.0f64;
    let mut max_abs = 0.0f64;
    for (&a, &b) in x.iter().zip(&y) {
        let e = (a as f64 - b as f64).abs();
        se += e * e;
        sa += e;
        sx += a as f64 * a as f64;
        max_abs = max_abs.max(e);
    }
    let n = x.len().max(1) as f64;
    let rmse = (se / n).sqrt();
    let rms = (sx / n).sqrt();
    Ok(QuantErrorStats {
        qtype,
        elems: x.len(),
        rmse,
        max_abs,
        mean_abs: sa / n,
        rel_rmse: if rms > 0.0 { rmse / rms } else { 0.0 },
    })
}
