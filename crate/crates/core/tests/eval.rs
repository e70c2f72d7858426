use std::collections::HashMap;
use std::sync::Arc;

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vien_core::eval::{
    bench, bleu, clean_corpus, clean_tsv, compare_quants, requantize, BenchOptions, BleuOptions, CleaningRules,
    CompareOptions, EvalError, ParallelPair, Smoothing,
};
use vien_core::fixture::{TinyModel, EN_WORDS, VI_WORDS};
use vien_core::gguf::{self, GgufFile};
use vien_core::pipeline::{Direction, Engine};
use vien_core::quant::QuantType;

/// Textbook corpus BLEU, counted by linear scans.
fn naive_bleu(hyps: &[&str], refs: &[&str], max_n: usize, add_one: bool) -> (Vec<(u64, u64)>, f64) {
    let mut counts = vec![(0u64, 0u64); max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        let h: Vec<&str> = h.split_whitespace().collect();
        let rf: Vec<&str> = rf.split_whitespace().collect();
        c += h.len();
        r += rf.len();
        for n in 1..=max_n {
            let grams = |t: &[&str]| -> Vec<Vec<String>> {
                if t.len() < n {
                    return vec![];
                }
                (0..=t.len() - n).map(|i| t[i..i + n].iter().map(|s| s.to_string()).collect()).collect()
            };
            let hg = grams(&h);
            let rg = grams(&rf);
            let mut distinct: Vec<&Vec<String>> = Vec::new();
            for g in &hg {
                if !distinct.contains(&g) {
                    distinct.push(g);
                }
            }
            for g in distinct {
                let in_h = hg.iter().filter(|x| *x == g).count();
                let in_r = rg.iter().filter(|x| *x == g).count();
                counts[n - 1].0 += in_h.min(in_r) as u64;
            }
            counts[n - 1].1 += hg.len() as u64;
        }
    }
    if c == 0 {
        return (counts, 0.0);
    }
    let mut logs = Vec::new();
    for (i, &(m, t)) in counts.iter().enumerate() {
        if t == 0 {
            continue;
        }
        let (m, t) = if add_one && i > 0 { (m + 1, t + 1) } else { (m, t) };
        if m == 0 {
            return (counts, 0.0);
        }
        logs.push((m as f64 / t as f64).ln());
    }
    let bp = (1.0 - r as f64 / c as f64).exp().min(1.0);
    (counts, bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp())
}

#[test]
fn identical_corpus_scores_one() {
    let hyps = ["xin chào thế giới", "tôi muốn một ly cà phê", "cảm ơn"];
    let r = bleu(&hyps, &hyps, &BleuOptions::default()).unwrap();
    assert_eq!(r.score, 1.0);
    assert_eq!(r.score_100, 100.0);
    assert_eq!(r.brevity_penalty, 1.0);
    assert_eq!((r.hyp_len, r.ref_len), (12, 12));
}

#[test]
fn clipped_unigram_precision() {
    let r = bleu(&["the the the the the the the"], &["the cat is on the mat"], &BleuOptions::default()).unwrap();
    assert_eq!((r.matches[0], r.totals[0]), (2, 7));
    assert_eq!(r.precisions[0], Some(2.0 / 7.0));
}

#[test]
fn zero_overlap_scores_zero() {
    let r = bleu(&["xin chào bạn"], &["the cat is on the mat"], &BleuOptions::default()).unwrap();
    assert_eq!(r.score, 0.0);
    assert_eq!(r.matches[0], 0);
    let smoothed = bleu(
        &["the dog sat"],
        &["the cat is on the mat"],
        &BleuOptions {
            smoothing: Smoothing::AddOne,
            ..BleuOptions::default()
        },
    )
    .unwrap();
    assert!(smoothed.score > 0.0 && smoothed.score < 1.0);
}

#[test]
fn permutation_invariance() {
    let hyps: Vec<String> = (0..30)
        .map(|i| VI_WORDS.iter().cycle().skip(i * 3).take(3 + i % 7).copied().collect::<Vec<_>>().join(" "))
        .collect();
    let refs: Vec<String> = (0..30)
        .map(|i| VI_WORDS.iter().cycle().skip(i * 3 + i % 2).take(4 + i % 5).copied().collect::<Vec<_>>().join(" "))
        .collect();
    let base = bleu(&hyps, &refs, &BleuOptions::default()).unwrap();
    assert!(base.score > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut idx: Vec<usize> = (0..hyps.len()).collect();
    for _ in 0..20 {
        idx.shuffle(&mut rng);
        let h: Vec<&str> = idx.iter().map(|&i| hyps[i].as_str()).collect();
        let r: Vec<&str> = idx.iter().map(|&i| refs[i].as_str()).collect();
        assert_eq!(bleu(&h, &r, &BleuOptions::default()).unwrap(), base);
    }
}

#[test]
fn bleu_errors_and_brevity() {
    assert!(matches!(
        bleu(&["a"], &["a", "b"], &BleuOptions::default()),
        Err(EvalError::LengthMismatch { hypotheses: 1, references: 2 })
    ));
    assert!(matches!(bleu(&[] as &[&str], &[] as &[&str], &BleuOptions::default()), Err(EvalError::EmptyCorpus)));
    // a matching prefix half the reference length
    let r = bleu(&["a b c d"], &["a b c d e f g h"], &BleuOptions::default()).unwrap();
    assert_eq!(r.precisions, vec![Some(1.0); 4]);
    assert!((r.brevity_penalty - (-1.0f64).exp()).abs() < 1e-15);
    assert!((r.score - (-1.0f64).exp()).abs() < 1e-15);
    let empty = bleu(&[""], &["a b"], &BleuOptions::default()).unwrap();
    assert_eq!(empty.score, 0.0);
    // decomposed and precomposed diacritics tokenize the same
    let nfd = bleu(&["cha\u{300}o ba\u{323}n"], &["chào bạn"], &BleuOptions::default()).unwrap();
    assert_eq!(nfd.precisions[0], Some(1.0));
}

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&EN_WORDS[..12]), 0..9).prop_map(|w| w.join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn bleu_matches_naive_oracle(
        pairs in prop::collection::vec((sentence(), sentence()), 1..8),
        add_one in any::<bool>(),
    ) {
        let hyps: Vec<&str> = pairs.iter().map(|p| p.0.as_str()).collect();
        let refs: Vec<&str> = pairs.iter().map(|p| p.1.as_str()).collect();
        let opts = BleuOptions { max_n: 4, smoothing: if add_one { Smoothing::AddOne } else { Smoothing::None } };
        let r = bleu(&hyps, &refs, &opts).unwrap();
        let (counts, score) = naive_bleu(&hyps, &refs, 4, add_one);
        prop_assert_eq!(r.matches.clone(), counts.iter().map(|c| c.0).collect::<Vec<_>>());
        prop_assert_eq!(r.totals.clone(), counts.iter().map(|c| c.1).collect::<Vec<_>>());
        prop_assert!((r.score - score).abs() < 1e-12, "{} vs {}", r.score, score);
        prop_assert!((0.0..=1.0).contains(&r.score));
    }

    #[test]
    fn bleu_of_self_is_one(hyps in prop::collection::vec(sentence(), 1..6)) {
        prop_assume!(hyps.iter().any(|h| !h.trim().is_empty()));
        prop_assert_eq!(bleu(&hyps, &hyps, &BleuOptions::default()).unwrap().score, 1.0);
    }
}

#[test]
fn cleaning_examples() {
    let rules = CleaningRules::default();
    let pairs = vec![ParallelPair::new("Hello", "Xin chào", "a"), ParallelPair::new("Hello", "Xin chào", "a")];
    let (kept, report) = clean_corpus(&pairs, &rules);
    assert_eq!(kept.len(), 1);
    assert_eq!(report.removed.duplicates, 1);

    let decomposed = "cha\u{300}o";
    let composed = "ch\u{e0}o";
    assert_ne!(decomposed, composed);
    let pairs = vec![ParallelPair::new("hi", decomposed, "a"), ParallelPair::new("hi", composed, "b")];
    let (kept, report) = clean_corpus(&pairs, &rules);
    assert_eq!(kept, vec![ParallelPair::new("hi", composed, "a")]);
    assert_eq!((report.removed.duplicates, report.removed.encoding_fixes), (1, 1));

    let forty = vec!["từ"; 40].join(" ");
    let (kept, report) = clean_corpus(&[ParallelPair::new("word", forty, "a")], &rules);
    assert!(kept.is_empty());
    assert_eq!(report.removed.ratio_outliers, 1);

    let (kept, report) = clean_corpus(&[ParallelPair::new("  ", "x", "a"), ParallelPair::new("one two three", "một hai ba", "a")], &rules);
    assert_eq!(kept.len(), 1);
    assert_eq!(report.removed.empties, 1);
}

#[test]
fn tsv_counts_malformed_lines() {
    let text = "Hello\tXin chào\nno tab here\na\tb\tc\n\nThanks\tCảm ơn\r\n";
    let (kept, report) = clean_tsv(text, "file.tsv", &CleaningRules::default());
    assert_eq!(kept.len(), 2);
    assert_eq!(kept[1].target, "Cảm ơn");
    assert_eq!(report.input_count, 4);
    assert_eq!(report.removed.malformed, 2);
    assert_eq!(report.kept_count + report.removed.total(), report.input_count);
}

fn raw_pair() -> impl Strategy<Value = ParallelPair> {
    let side = prop::collection::vec(
        prop::sample::select(vec!["chào", "cha\u{300}o", "bạn", "ba\u{323}n", "hello", " ", "", "a b c d e f g"]),
        0..5,
    )
    .prop_map(|v| v.join(" "));
    (side.clone(), side).prop_map(|(s, t)| ParallelPair::new(s, t, "p"))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cleaning_is_idempotent_and_reconciles(pairs in prop::collection::vec(raw_pair(), 0..30)) {
        let rules = CleaningRules::default();
        let (once, report) = clean_corpus(&pairs, &rules);
        prop_assert_eq!(report.input_count, pairs.len());
        prop_assert_eq!(report.kept_count, once.len());
        prop_assert_eq!(report.kept_count + report.removed.total(), report.input_count);
        let (twice, again) = clean_corpus(&once, &rules);
        prop_assert_eq!(&twice, &once);
        prop_assert_eq!(again.removed.total() + again.removed.encoding_fixes, 0);
    }
}

fn chat_engine() -> &'static Engine {
    static E: std::sync::OnceLock<Engine> = std::sync::OnceLock::new();
    E.get_or_init(|| Engine::load(Arc::new(TinyModel::chat(QuantType::Q8_0).file().unwrap())).unwrap())
}

#[test]
fn bench_counts_timed_runs() {
    let e = chat_engine();
    let mut session = e.session(Direction::EnToVi);
    let mut params = session.params().clone();
    params.max_new_tokens = 8;
    session.set_params(params);
    let prompts: Vec<String> = EN_WORDS.chunks(2).take(10).map(|w| w.join(" ")).collect();
    let opts = BenchOptions {
        reps: 3,
        ..BenchOptions::default()
    };
    let report = bench(&session, &prompts, &opts).unwrap();
    assert_eq!(report.sentences, 10);
    assert_eq!(report.warmup_runs, 10);
    assert_eq!(report.timed_runs, 30);
    assert_eq!(report.sentence_ms.len(), 30);
    assert_eq!(report.outputs.len(), 10);
    let per_pass: u64 = prompts
        .iter()
        .map(|p| session.translate(p, &mut |_| {}).unwrap().token_counts.generated as u64)
        .sum();
    assert_eq!(report.generated_tokens, 3 * per_pass);
    assert!(report.tokens_per_sec > 0.0);
    let s = report.ms_per_sentence;
    assert!(s.min <= s.p50 && s.p50 <= s.p95 && s.p95 <= s.max && s.min <= s.mean && s.mean <= s.max);
    assert!(report.peak_resident_memory_bytes > 0);
    assert!(matches!(
        bench(&session, &prompts, &BenchOptions { reps: 0, ..opts }),
        Err(EvalError::InvalidOptions(_))
    ));
}

fn toy_testset() -> Vec<ParallelPair> {
    [("hello friend", "xin chào bạn"), ("thank you", "cảm ơn"), ("I want coffee", "tôi muốn cà phê")]
        .iter()
        .map(|(s, t)| ParallelPair::new(*s, *t, "toy"))
        .collect()
}

fn small_compare() -> CompareOptions {
    CompareOptions {
        max_new_tokens: Some(8),
        ..CompareOptions::default()
    }
}

#[test]
fn compare_identity() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.gguf");
    std::fs::write(&path, TinyModel::chat(QuantType::Q8_0).bytes().unwrap()).unwrap();
    let r = compare_quants(&path, &path, &toy_testset(), &small_compare()).unwrap();
    assert_eq!(r.size_a, std::fs::metadata(&path).unwrap().len());
    assert_eq!(r.size_a, r.size_b);
    assert_eq!(r.size_reduction_pct, 0.0);
    assert_eq!(r.bleu_delta, 0.0);
    assert_eq!(r.bleu_delta_100, 0.0);
    assert!(r.speedup_pct.is_finite());
}

#[test]
fn compare_q8_0_against_q4_k() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("q8.gguf");
    let b = dir.path().join("q4k.gguf");
    std::fs::write(&a, TinyModel::chat(QuantType::Q8_0).bytes().unwrap()).unwrap();
    let q4 = requantize(&GgufFile::open(&a).unwrap(), QuantType::Q4K).unwrap();
    std::fs::write(&b, gguf::write(&q4).unwrap()).unwrap();

    let file_b = GgufFile::open(&b).unwrap();
    assert!(file_b.validate().is_clean());
    let types: HashMap<String, QuantType> =
        file_b.tensors.iter().filter_map(|t| Some((t.name.clone(), t.qtype()?))).collect();
    assert_eq!(types["blk.0.attn_q.weight"], QuantType::Q4K);
    assert_eq!(types["blk.0.attn_norm.weight"], QuantType::F32);

    let r = compare_quants(&a, &b, &toy_testset(), &small_compare()).unwrap();
    assert!(r.size_b < r.size_a);
    let expected = (r.size_a as f64 - r.size_b as f64) / r.size_a as f64 * 100.0;
    assert_eq!(r.size_reduction_pct, expected);
    assert!(r.bleu_delta.is_finite());
    assert_eq!(r.bleu_delta, r.bleu_a.score - r.bleu_b.score);
    println!(
        "toy Q8_0 vs Q4_K: size -{:.1}%, speedup {:.1}%, bleu {:.4} vs {:.4} (delta {:.4})",
        r.size_reduction_pct, r.speedup_pct, r.bleu_a.score, r.bleu_b.score, r.bleu_delta
    );
}

#[test]
fn compare_rejects_different_architectures() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.gguf");
    let b = dir.path().join("b.gguf");
    std::fs::write(&a, TinyModel::chat(QuantType::Q8_0).bytes().unwrap()).unwrap();
    let mut other = TinyModel::chat(QuantType::Q8_0);
    other.n_layers = 1;
    std::fs::write(&b, other.bytes().unwrap()).unwrap();
    assert!(matches!(
        compare_quants(&a, &b, &toy_testset(), &small_compare()),
        Err(EvalError::ArchitectureMismatch(_))
    ));
}
