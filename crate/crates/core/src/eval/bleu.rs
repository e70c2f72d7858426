use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use super::EvalError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothing {
    /// Zero matches at any available order gives a score of 0.
    #[default]
    None,
    /// `(m + 1) / (t + 1)` for orders 2 and up.
    AddOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuOptions {
    pub max_n: usize,
    pub smoothing: Smoothing,
}

impl Default for BleuOptions {
    fn default() -> Self {
        BleuOptions {
            max_n: 4,
            smoothing: Smoothing::None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuReport {
    /// `p_n` for n = 1..=max_n; `None` when the hypotheses have no n-grams
    /// of that order.
    pub precisions: Vec<Option<f64>>,
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub brevity_penalty: f64,
    /// 0..=1.
    pub score: f64,
    /// The same score on the 0..=100 scale.
    pub score_100: f64,
    pub hyp_len: u64,
    pub ref_len: u64,
    pub smoothing: Smoothing,
}

fn tokens(s: &str) -> Vec<String> {
    let s: String = s.nfc().collect();
    s.split_whitespace().map(str::to_string).collect()
}

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU with clipped n-gram counts over whitespace tokens. The score
/// is `BP * exp(mean log p_n)` over orders that have at least one n-gram.
pub fn bleu(hypotheses: &[impl AsRef<str>], references: &[impl AsRef<str>], opts: &BleuOptions) -> Result<BleuReport, EvalError> {
    if hypotheses.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    if opts.max_n == 0 {
        return Err(EvalError::InvalidOptions("max_n must be at least 1".into()));
    }
    let mut matches = vec![0u64; opts.max_n];
    let mut totals = vec![0u64; opts.max_n];
    let (mut hyp_len, mut ref_len) = (0u64, 0u64);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (tokens(h.as_ref()), tokens(r.as_ref()));
        hyp_len += h.len() as u64;
        ref_len += r.len() as u64;
        for n in 1..=opts.max_n {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            for (gram, &c) in &hc {
                matches[n - 1] += c.min(rc.get(gram).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }

    let precisions: Vec<Option<f64>> = (0..opts.max_n)
        .map(|i| {
            let (m, t) = (matches[i] as f64, totals[i] as f64);
            (totals[i] > 0).then(|| match opts.smoothing {
                Smoothing::AddOne if i > 0 => (m + 1.0) / (t + 1.0),
                _ => m / t,
            })
        })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp().min(1.0)
    };
    let available: Vec<f64> = precisions.iter().flatten().copied().collect();
    let score = if available.is_empty() || available.contains(&0.0) {
        0.0
    } else {
        let mean_log = available.iter().map(|p| p.ln()).sum::<f64>() / available.len() as f64;
        (brevity_penalty * mean_log.exp()).clamp(0.0, 1.0)
    };
    Ok(BleuReport {
        precisions,
        matches,
        totals,
        brevity_penalty,
        score,
        score_100: score * 100.0,
        hyp_len,
        ref_len,
        smoothing: opts.smoothing,
    })
}
