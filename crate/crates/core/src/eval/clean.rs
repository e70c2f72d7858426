use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParallelPair {
    pub source: String,
    pub target: String,
    pub origin: String,
}

impl ParallelPair {
    pub fn new(source: impl Into<String>, target: impl Into<String>, origin: impl Into<String>) -> Self {
        ParallelPair {
            source: source.into(),
            target: target.into(),
            origin: origin.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CleaningRules {
    /// Allowed source/target word-count ratio, inclusive.
    pub min_ratio: f64,
    pub max_ratio: f64,
}

impl Default for CleaningRules {
    fn default() -> Self {
        CleaningRules {
            min_ratio: 1.0 / 3.0,
            max_ratio: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Removed {
    pub duplicates: usize,
    pub empties: usize,
    pub ratio_outliers: usize,
    /// TSV lines without exactly one tab.
    pub malformed: usize,
    /// Pairs whose text changed under NFC normalization. These are repairs
    /// and do not count towards [`Removed::total`].
    pub encoding_fixes: usize,
}

impl Removed {
    pub fn total(&self) -> usize {
        self.duplicates + self.empties + self.ratio_outliers + self.malformed
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub input_count: usize,
    pub kept_count: usize,
    pub removed: Removed,
}

/// Parses `source<TAB>target` lines. Blank lines are skipped; any other line
/// without exactly one tab is counted and dropped.
pub fn parse_tsv(text: &str, origin: &str) -> (Vec<ParallelPair>, usize) {
    let mut pairs = Vec::new();
    let mut malformed = 0;
    for line in text.lines() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        match (parts.next(), parts.next(), parts.next()) {
            (Some(s), Some(t), None) => pairs.push(ParallelPair::new(s, t, origin)),
            _ => malformed += 1,
        }
    }
    (pairs, malformed)
}

/// NFC-normalizes and trims both sides, then drops pairs with an empty side,
/// exact duplicates of an earlier survivor, and pairs outside the word-count
/// ratio window. Survivors keep their order.
pub fn clean_corpus(pairs: &[ParallelPair], rules: &CleaningRules) -> (Vec<ParallelPair>, CleaningReport) {
    let mut report = CleaningReport {
        input_count: pairs.len(),
        ..CleaningReport::default()
    };
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for p in pairs {
        let source: String = p.source.nfc().collect();
        let target: String = p.target.nfc().collect();
        if source != p.source || target != p.target {
            report.removed.encoding_fixes += 1;
        }
        let (source, target) = (source.trim().to_string(), target.trim().to_string());
        if source.is_empty() || target.is_empty() {
            report.removed.empties += 1;
            continue;
        }
        if !seen.insert((source.clone(), target.clone())) {
            report.removed.duplicates += 1;
            continue;
        }
        let ratio = source.split_whitespace().count() as f64 / target.split_whitespace().count() as f64;
        if ratio < rules.min_ratio || ratio > rules.max_ratio {
            report.removed.ratio_outliers += 1;
            continue;
        }
        kept.push(ParallelPair {
            source,
            target,
            origin: p.origin.clone(),
        });
    }
    report.kept_count = kept.len();
    (kept, report)
}

/// [`parse_tsv`] followed by [`clean_corpus`]; malformed lines count as input
/// and as removals.
pub fn clean_tsv(text: &str, origin: &str, rules: &CleaningRules) -> (Vec<ParallelPair>, CleaningReport) {
    let (pairs, malformed) = parse_tsv(text, origin);
    let (kept, mut report) = clean_corpus(&pairs, rules);
    report.input_count += malformed;
    report.removed.malformed = malformed;
    (kept, report)
}
