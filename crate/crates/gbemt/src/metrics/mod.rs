//! BLEU, chrF, and TER, plus corpus-level report assembly.
//!
//! BLEU: corpus-level clipped n-gram precisions (n = 1..4) over
//! 13a-tokenized text with exponential smoothing of zero orders and the
//! standard brevity penalty. chrF: character n-grams (n = 1..6, whitespace
//! removed) aggregated corpus-wide into macro-averaged precision and
//! recall, combined with beta = 2. TER: word edits (insert, delete,
//! substitute) plus greedy block shifts, divided by reference length.
//! Everything is case-sensitive.

mod tok13a;

pub use tok13a::tokenize_13a;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BLEU_ORDER: usize = 4;
const CHRF_ORDER: usize = 6;
const CHRF_BETA: f64 = 2.0;
/// Standard TER limits on shifted block size and shift distance.
const TER_MAX_BLOCK: usize = 10;
const TER_MAX_SHIFT_DIST: usize = 50;

/// Scores for one system/label combination, shaped like one results-table
/// row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub system_name: String,
    pub target_label: String,
    pub bleu: f64,
    pub chrf: f64,
    pub ter: f64,
    pub sentence_count: usize,
    pub decoding_settings: String,
}

/// BLEU with its components, for inspection and tests.
#[derive(Clone, Debug)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; BLEU_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub warning: Option<String>,
}

fn check_paired(hyps: &[impl AsRef<str>], refs: &[impl AsRef<str>]) -> Result<()> {
    if hyps.len() != refs.len() {
        return Err(Error::Pairing(format!(
            "{} hypotheses vs {} references",
            hyps.len(),
            refs.len()
        )));
    }
    if hyps.is_empty() {
        return Err(Error::Pairing("need at least one sentence pair".into()));
    }
    Ok(())
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<Vec<&str>, u64> {
    let mut counts: HashMap<Vec<&str>, u64> = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            let key: Vec<&str> = window.iter().map(String::as_str).collect();
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU in `[0, 100]`.
pub fn bleu(hypotheses: &[impl AsRef<str>], references: &[impl AsRef<str>]) -> Result<f64> {
    Ok(bleu_detailed(hypotheses, references)?.score)
}

pub fn bleu_detailed(
    hypotheses: &[impl AsRef<str>],
    references: &[impl AsRef<str>],
) -> Result<BleuScore> {
    check_paired(hypotheses, references)?;
    let mut correct = [0u64; BLEU_ORDER];
    let mut total = [0u64; BLEU_ORDER];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        let h = tokenize_13a(hyp.as_ref());
        let r = tokenize_13a(reference.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=BLEU_ORDER {
            let h_counts = ngram_counts(&h, n);
            let r_counts = ngram_counts(&r, n);
            for (gram, &count) in &h_counts {
                total[n - 1] += count;
                let clip = r_counts.get(gram).copied().unwrap_or(0);
                correct[n - 1] += count.min(clip);
            }
        }
    }

    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };

    let mut precisions = [0.0; BLEU_ORDER];
    let mut log_sum = 0.0;
    let mut effective_order = 0usize;
    let mut smooth = 1.0;
    for n in 0..BLEU_ORDER {
        if total[n] == 0 {
            break;
        }
        let p = if correct[n] == 0 {
            // Exponential smoothing: the k-th zero order contributes 1/2^k.
            smooth *= 2.0;
            1.0 / smooth
        } else {
            correct[n] as f64 / total[n] as f64
        };
        precisions[n] = p;
        log_sum += p.ln();
        effective_order = n + 1;
    }

    let score = if effective_order == 0 || hyp_len == 0 {
        0.0
    } else {
        100.0 * brevity_penalty * (log_sum / effective_order as f64).exp()
    };
    let warning = (hyp_len == 0).then(|| "empty hypothesis corpus".to_string());
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
        warning,
    })
}

fn char_ngram_counts(text: &str, n: usize) -> HashMap<Vec<char>, u64> {
    let chars: Vec<char> = text.chars().collect();
    let mut counts: HashMap<Vec<char>, u64> = HashMap::new();
    if chars.len() >= n {
        for window in chars.windows(n) {
            *counts.entry(window.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// chrF (beta = 2) in `[0, 100]`. Character n-grams are taken over the
/// text with all whitespace removed.
pub fn chrf(hypotheses: &[impl AsRef<str>], references: &[impl AsRef<str>]) -> Result<f64> {
    check_paired(hypotheses, references)?;
    let strip = |s: &str| -> String { s.split_whitespace().collect() };

    let mut matches = [0u64; CHRF_ORDER];
    let mut hyp_total = [0u64; CHRF_ORDER];
    let mut ref_total = [0u64; CHRF_ORDER];
    for (hyp, reference) in hypotheses.iter().zip(references) {
        let h = strip(hyp.as_ref());
        let r = strip(reference.as_ref());
        for n in 1..=CHRF_ORDER {
            let h_counts = char_ngram_counts(&h, n);
            let r_counts = char_ngram_counts(&r, n);
            for (gram, &count) in &h_counts {
                hyp_total[n - 1] += count;
                matches[n - 1] += count.min(r_counts.get(gram).copied().unwrap_or(0));
            }
            ref_total[n - 1] += r_counts.values().sum::<u64>();
        }
    }

    // Orders with zero n-grams on both sides are skipped; precision and
    // recall are macro-averaged over the kept orders.
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut kept = 0usize;
    for n in 0..CHRF_ORDER {
        if hyp_total[n] == 0 && ref_total[n] == 0 {
            continue;
        }
        kept += 1;
        if hyp_total[n] > 0 {
            precision_sum += matches[n] as f64 / hyp_total[n] as f64;
        }
        if ref_total[n] > 0 {
            recall_sum += matches[n] as f64 / ref_total[n] as f64;
        }
    }
    if kept == 0 {
        return Ok(0.0);
    }
    let precision = precision_sum / kept as f64;
    let recall = recall_sum / kept as f64;
    let beta_sq = CHRF_BETA * CHRF_BETA;
    let denom = beta_sq * precision + recall;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * (1.0 + beta_sq) * precision * recall / denom)
}

/// Word-level Levenshtein distance (unit costs).
fn edit_distance(a: &[String], b: &[String]) -> u64 {
    let mut prev: Vec<u64> = (0..=b.len() as u64).collect();
    let mut curr = vec![0u64; b.len() + 1];
    for (i, aw) in a.iter().enumerate() {
        curr[0] = i as u64 + 1;
        for (j, bw) in b.iter().enumerate() {
            let sub = prev[j] + u64::from(aw != bw);
            curr[j + 1] = sub.min(prev[j + 1] + 1).min(curr[j] + 1);
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Edits and denominator for one sentence: greedy block shifts (cost 1
/// each, the block must match a reference subsequence) plus remaining edit
/// distance, over the reference length. An empty reference with a
/// non-empty hypothesis counts `hyp_len` edits over a denominator of 1.
fn ter_sentence(hyp: &[String], reference: &[String]) -> (u64, u64) {
    if reference.is_empty() {
        return (hyp.len() as u64, 1);
    }
    // All reference subsequences up to the block-size cap.
    let mut ref_blocks: HashMap<&[String], ()> = HashMap::new();
    for len in 1..=TER_MAX_BLOCK.min(reference.len()) {
        for start in 0..=reference.len() - len {
            ref_blocks.insert(&reference[start..start + len], ());
        }
    }

    let mut current: Vec<String> = hyp.to_vec();
    let mut shifts = 0u64;
    loop {
        let base = edit_distance(&current, reference);
        if base == 0 {
            break;
        }
        let mut best: Option<(u64, Vec<String>)> = None;
        for start in 0..current.len() {
            for len in 1..=TER_MAX_BLOCK.min(current.len() - start) {
                if !ref_blocks.contains_key(&current[start..start + len]) {
                    continue;
                }
                let mut rest: Vec<String> = Vec::with_capacity(current.len() - len);
                rest.extend_from_slice(&current[..start]);
                rest.extend_from_slice(&current[start + len..]);
                for dest in 0..=rest.len() {
                    if dest == start || dest.abs_diff(start) > TER_MAX_SHIFT_DIST {
                        continue;
                    }
                    let mut candidate = Vec::with_capacity(current.len());
                    candidate.extend_from_slice(&rest[..dest]);
                    candidate.extend_from_slice(&current[start..start + len]);
                    candidate.extend_from_slice(&rest[dest..]);
                    let d = edit_distance(&candidate, reference);
                    if d < base && best.as_ref().map_or(true, |(bd, _)| d < *bd) {
                        best = Some((d, candidate));
                    }
                }
            }
        }
        match best {
            Some((_, seq)) => {
                current = seq;
                shifts += 1;
            }
            None => break,
        }
    }
    (shifts + edit_distance(&current, reference), reference.len() as u64)
}

/// Corpus TER (x100, lower is better): total edits over total reference
/// length, 13a-tokenized.
pub fn ter(hypotheses: &[impl AsRef<str>], references: &[impl AsRef<str>]) -> Result<f64> {
    check_paired(hypotheses, references)?;
    let mut edits = 0u64;
    let mut denom = 0u64;
    for (hyp, reference) in hypotheses.iter().zip(references) {
        let h = tokenize_13a(hyp.as_ref());
        let r = tokenize_13a(reference.as_ref());
        let (e, d) = ter_sentence(&h, &r);
        edits += e;
        denom += d;
    }
    if denom == 0 {
        return Ok(0.0);
    }
    Ok(100.0 * edits as f64 / denom as f64)
}

/// All three scores for one hypothesis/reference list.
pub fn score_lines(hyps: &[String], refs: &[String]) -> Result<(f64, f64, f64)> {
    Ok((bleu(hyps, refs)?, chrf(hyps, refs)?, ter(hyps, refs)?))
}

/// Score hypothesis/reference files. With per-line labels, one report per
/// label (in first-appearance order) plus a pooled report over everything;
/// without labels, a single pooled report labeled `all`.
pub fn evaluate_corpus(
    hyp_path: impl AsRef<Path>,
    ref_path: impl AsRef<Path>,
    labels_path: Option<&Path>,
    system_name: &str,
    decoding_settings: &str,
) -> Result<Vec<EvalReport>> {
    let hyps = crate::corpus::read_lines(hyp_path.as_ref())?;
    let refs = crate::corpus::read_lines(ref_path.as_ref())?;
    if hyps.len() != refs.len() {
        return Err(Error::Pairing(format!(
            "{} hypothesis lines vs {} reference lines",
            hyps.len(),
            refs.len()
        )));
    }
    let labels = match labels_path {
        Some(path) => {
            let labels = crate::corpus::read_lines(path)?;
            if labels.len() != hyps.len() {
                return Err(Error::Pairing(format!(
                    "{} labels for {} sentences",
                    labels.len(),
                    hyps.len()
                )));
            }
            Some(labels)
        }
        None => None,
    };
    evaluate_labeled(&hyps, &refs, labels.as_deref(), system_name, decoding_settings)
}

/// In-memory counterpart of [`evaluate_corpus`].
pub fn evaluate_labeled(
    hyps: &[String],
    refs: &[String],
    labels: Option<&[String]>,
    system_name: &str,
    decoding_settings: &str,
) -> Result<Vec<EvalReport>> {
    let make = |label: &str, hyps: &[String], refs: &[String]| -> Result<EvalReport> {
        let (bleu, chrf, ter) = score_lines(hyps, refs)?;
        Ok(EvalReport {
            system_name: system_name.to_string(),
            target_label: label.to_string(),
            bleu,
            chrf,
            ter,
            sentence_count: hyps.len(),
            decoding_settings: decoding_settings.to_string(),
        })
    };

    match labels {
        None => Ok(vec![make("all", hyps, refs)?]),
        Some(labels) => {
            let mut order: Vec<&String> = Vec::new();
            for label in labels {
                if !order.contains(&label) {
                    order.push(label);
                }
            }
            let mut reports = Vec::new();
            for label in &order {
                let (h, r): (Vec<String>, Vec<String>) = hyps
                    .iter()
                    .zip(refs)
                    .zip(labels)
                    .filter(|(_, l)| **l == **label)
                    .map(|((h, r), _)| (h.clone(), r.clone()))
                    .unzip();
                reports.push(make(label, &h, &r)?);
            }
            if order.len() > 1 {
                let pooled_label = order
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join("/");
                reports.push(make(&pooled_label, hyps, refs)?);
            }
            Ok(reports)
        }
    }
}

/// Aligned text table with one row per report.
pub fn format_report_table(reports: &[EvalReport]) -> String {
    let mut rows = vec![[
        "Model".to_string(),
        "Target".to_string(),
        "BLEU".to_string(),
        "CHRF".to_string(),
        "TER".to_string(),
        "Sentences".to_string(),
    ]];
    for r in reports {
        rows.push([
            r.system_name.clone(),
            r.target_label.clone(),
            format!("{:.1}", r.bleu),
            format!("{:.1}", r.chrf),
            format!("{:.1}", r.ter),
            r.sentence_count.to_string(),
        ]);
    }
    let mut widths = [0usize; 6];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (cell, w) in row.iter().zip(widths) {
            line.push_str(&format!("{cell:<w$}  "));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(items: &[&str]) -> Vec<String> {
        items.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn bleu_identity_is_100() {
        let text = s(&["the cat sat on the mat", "a stitch in time saves nine"]);
        assert!((bleu(&text, &text).unwrap() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn bleu_clipping_worked_example() {
        // The reference holds "the" twice, so four hypothesis "the"s clip
        // to a unigram precision of 2/4.
        let detail =
            bleu_detailed(&s(&["the the the the"]), &s(&["the cat is on the mat"])).unwrap();
        assert!((detail.precisions[0] - 0.5).abs() < 1e-12);

        // A single-occurrence reference clips the same hypothesis to 1/4.
        let detail = bleu_detailed(&s(&["the the the the"]), &s(&["the cat"])).unwrap();
        assert!((detail.precisions[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn bleu_brevity_penalty_worked_example() {
        // All precisions 1, BP = exp(1 - 6/5): BLEU = 81.87.
        let score = bleu(&s(&["a b c d e"]), &s(&["a b c d e f"])).unwrap();
        assert!((score - 81.87).abs() < 0.01, "{score}");
    }

    #[test]
    fn bleu_empty_hypotheses_scores_zero_with_warning() {
        let detail = bleu_detailed(&s(&["", ""]), &s(&["a b", "c d"])).unwrap();
        assert_eq!(detail.score, 0.0);
        assert!(detail.warning.is_some());
    }

    #[test]
    fn bleu_length_mismatch_is_pairing_error() {
        assert!(matches!(
            bleu(&s(&["a"]), &s(&["a", "b"])),
            Err(Error::Pairing(_))
        ));
    }

    #[test]
    fn bleu_bp_decreases_when_truncating_a_correct_prefix() {
        let reference = s(&["a b c d e f g h"]);
        let mut prev_bp = 1.0;
        for keep in (3..8).rev() {
            let hyp = s(&[&"a b c d e f g h"[..2 * keep - 1]]);
            let detail = bleu_detailed(&hyp, &reference).unwrap();
            assert!(
                detail.brevity_penalty < prev_bp,
                "BP did not strictly decrease at keep={keep}"
            );
            prev_bp = detail.brevity_penalty;
        }
    }

    #[test]
    fn chrf_identity_and_disjoint() {
        let text = s(&["abc def", "ghij"]);
        assert!((chrf(&text, &text).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(chrf(&s(&["abc"]), &s(&["xyz"])).unwrap(), 0.0);
    }

    #[test]
    fn chrf_worked_example() {
        // hyp "abc" vs ref "abd": orders 1-3 kept, P = R = 7/18,
        // chrF = 38.89.
        let score = chrf(&s(&["abc"]), &s(&["abd"])).unwrap();
        assert!((score - 38.89).abs() < 0.01, "{score}");
    }

    #[test]
    fn ter_identity_substitution_and_shift() {
        assert_eq!(ter(&s(&["a b c d"]), &s(&["a b c d"])).unwrap(), 0.0);

        let sub = ter(&s(&["a b c d"]), &s(&["a b x d"])).unwrap();
        assert!((sub - 25.0).abs() < 1e-9, "{sub}");

        // One block shift repairs the rotation: 1 edit over 4 words.
        let shift = ter(&s(&["d a b c"]), &s(&["a b c d"])).unwrap();
        assert!((shift - 25.0).abs() < 1e-9, "{shift}");
    }

    #[test]
    fn ter_empty_reference_convention() {
        let score = ter(&s(&["a b c"]), &s(&[""])).unwrap();
        assert!((score - 300.0).abs() < 1e-9, "{score}");
    }

    #[test]
    fn ter_never_exceeds_plain_edit_distance() {
        let cases = [
            ("a b c d e", "e d c b a"),
            ("the cat sat", "sat the cat"),
            ("x y z", "p q r"),
            ("one two three four", "four three two one"),
        ];
        for (h, r) in cases {
            let ht = tokenize_13a(h);
            let rt = tokenize_13a(r);
            let (edits, denom) = ter_sentence(&ht, &rt);
            let plain = edit_distance(&ht, &rt);
            assert!(edits <= plain, "{h} vs {r}: {edits} > {plain}");
            assert_eq!(denom, rt.len() as u64);
        }
    }

    #[test]
    fn metrics_are_permutation_equivariant() {
        let hyps = s(&["a b c", "d e f g", "h i", "j k l m n"]);
        let refs = s(&["a b d", "d e f", "h i i", "j k l m"]);
        let perm = [2usize, 0, 3, 1];
        let ph: Vec<String> = perm.iter().map(|&i| hyps[i].clone()).collect();
        let pr: Vec<String> = perm.iter().map(|&i| refs[i].clone()).collect();
        assert_eq!(bleu(&hyps, &refs).unwrap(), bleu(&ph, &pr).unwrap());
        assert_eq!(chrf(&hyps, &refs).unwrap(), chrf(&ph, &pr).unwrap());
        assert_eq!(ter(&hyps, &refs).unwrap(), ter(&ph, &pr).unwrap());
    }

    #[test]
    fn identical_corpora_score_perfectly() {
        let text = s(&["the quick brown fox", "jumps over the lazy dog"]);
        let (b, c, t) = score_lines(&text, &text).unwrap();
        assert!((b - 100.0).abs() < 1e-9);
        assert!((c - 100.0).abs() < 1e-9);
        assert_eq!(t, 0.0);
    }

    #[test]
    fn scores_stay_in_range() {
        let hyps = s(&["x", "a b", "totally different words here"]);
        let refs = s(&["y z w", "a b", "nothing in common at all"]);
        let (b, c, t) = score_lines(&hyps, &refs).unwrap();
        assert!((0.0..=100.0).contains(&b));
        assert!((0.0..=100.0).contains(&c));
        assert!(t >= 0.0);
    }

    #[test]
    fn evaluate_labeled_report_shapes() {
        let hyps = s(&["a b", "c d", "e f", "g h"]);
        let refs = s(&["a b", "c d", "e f", "g x"]);

        let single = evaluate_labeled(&hyps, &refs, None, "sys", "beam=5").unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].target_label, "all");
        assert_eq!(single[0].sentence_count, 4);

        let labels = s(&["ewe", "fon", "ewe", "fon"]);
        let labeled = evaluate_labeled(&hyps, &refs, Some(&labels), "sys", "beam=5").unwrap();
        assert_eq!(labeled.len(), 3);
        assert_eq!(labeled[0].target_label, "ewe");
        assert_eq!(labeled[1].target_label, "fon");
        assert_eq!(labeled[2].target_label, "ewe/fon");
        assert_eq!(labeled[2].sentence_count, 4);
    }

    #[test]
    fn pooling_equal_sublists_preserves_the_score() {
        // Two label groups with identical counts and identical per-order
        // statistics pool to the same score.
        let hyps = s(&["a b c d", "a b c d"]);
        let refs = s(&["a b c x", "a b c x"]);
        let labels = s(&["one", "two"]);
        let reports = evaluate_labeled(&hyps, &refs, Some(&labels), "sys", "").unwrap();
        assert!((reports[0].bleu - reports[2].bleu).abs() < 1e-9);
        assert!((reports[1].bleu - reports[2].bleu).abs() < 1e-9);
    }
}
