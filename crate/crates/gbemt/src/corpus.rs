//! Parallel corpus loading, filtering, subsampling, tagging, and splits.
//!
//! A corpus is an ordered list of aligned sentence pairs. Cleaning runs in a
//! fixed documented order per pair: empty check, then deduplication, then
//! test-leakage check. Comparison uses whitespace-normalized text (ends
//! trimmed, interior runs collapsed to single spaces); kept pairs store the
//! end-trimmed original with interior characters untouched.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// One aligned sentence pair. `origin_line` is the 1-based line number in
/// the files the pair was loaded from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: String,
    pub target: String,
    pub origin_line: usize,
}

/// An ordered, line-aligned parallel corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<SentencePair>,
    pub source_lang: String,
    pub target_lang: String,
}

impl ParallelCorpus {
    pub fn new(source_lang: impl Into<String>, target_lang: impl Into<String>) -> Self {
        ParallelCorpus {
            pairs: Vec::new(),
            source_lang: source_lang.into(),
            target_lang: target_lang.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Source sentences in corpus order.
    pub fn sources(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.source.as_str())
    }

    /// Target sentences in corpus order.
    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.target.as_str())
    }
}

/// Exact bookkeeping of what `filter_corpus` dropped.
///
/// Invariant: `input_count = output_count + dropped_duplicates +
/// dropped_empty + dropped_leaked`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterReport {
    pub input_count: usize,
    pub dropped_duplicates: usize,
    pub dropped_empty: usize,
    pub dropped_leaked: usize,
    pub output_count: usize,
}

impl FilterReport {
    /// Flat `key: value` text block, one line per field.
    pub fn to_text(&self) -> String {
        format!(
            "input_count: {}\ndropped_duplicates: {}\ndropped_empty: {}\ndropped_leaked: {}\noutput_count: {}\n",
            self.input_count,
            self.dropped_duplicates,
            self.dropped_empty,
            self.dropped_leaked,
            self.output_count
        )
    }
}

impl fmt::Display for FilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// A target-language selector token of the form `<2xxx>`.
///
/// The token is registered as a protected BPE symbol, so it is always a
/// single atomic vocabulary entry.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LanguageTag {
    token: String,
}

impl LanguageTag {
    /// Build a tag from a language code, e.g. `"ewe"` becomes `<2ewe>`.
    pub fn for_lang(code: &str) -> Result<Self> {
        Self::parse(&format!("<2{code}>"))
    }

    /// Parse a full token of the form `<2xxx>` with a lowercase ASCII code.
    pub fn parse(token: &str) -> Result<Self> {
        let inner = token
            .strip_prefix("<2")
            .and_then(|rest| rest.strip_suffix('>'))
            .ok_or_else(|| Error::Config(format!("language tag must look like <2xxx>, got {token:?}")))?;
        if inner.is_empty() || !inner.bytes().all(|b| b.is_ascii_lowercase()) {
            return Err(Error::Config(format!(
                "language tag code must be non-empty lowercase ASCII, got {token:?}"
            )));
        }
        Ok(LanguageTag {
            token: token.to_string(),
        })
    }

    pub fn token(&self) -> &str {
        &self.token
    }

    /// The language code between `<2` and `>`.
    pub fn lang_code(&self) -> &str {
        &self.token[2..self.token.len() - 1]
    }
}

impl fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token)
    }
}

/// Load two line-aligned UTF-8 text files into a corpus.
///
/// Line `i` of the source file pairs with line `i` of the target file;
/// file order is preserved. A trailing `\r` per line is tolerated.
pub fn load_parallel(
    source_path: impl AsRef<Path>,
    target_path: impl AsRef<Path>,
    source_lang: &str,
    target_lang: &str,
) -> Result<ParallelCorpus> {
    let src_lines = read_lines(source_path.as_ref())?;
    let tgt_lines = read_lines(target_path.as_ref())?;
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::Alignment {
            source_path: source_path.as_ref().to_path_buf(),
            target_path: target_path.as_ref().to_path_buf(),
            source_lines: src_lines.len(),
            target_lines: tgt_lines.len(),
        });
    }
    let pairs = src_lines
        .into_iter()
        .zip(tgt_lines)
        .enumerate()
        .map(|(i, (source, target))| SentencePair {
            source,
            target,
            origin_line: i + 1,
        })
        .collect();
    Ok(ParallelCorpus {
        pairs,
        source_lang: source_lang.to_string(),
        target_lang: target_lang.to_string(),
    })
}

pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Utf8 {
        path: path.to_path_buf(),
        byte_offset: e.utf8_error().valid_up_to(),
    })?;
    if text.is_empty() {
        return Ok(Vec::new());
    }
    let body = text.strip_suffix('\n').unwrap_or(&text);
    Ok(body
        .split('\n')
        .map(|line| line.strip_suffix('\r').unwrap_or(line).to_string())
        .collect())
}

/// Whitespace normalization used for all pair comparisons: trim both ends,
/// collapse interior whitespace runs to single ASCII spaces.
pub fn normalize_for_comparison(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Clean a corpus: drop empties, exact duplicate pairs, and pairs leaked
/// from the test set, in that order per pair.
///
/// The duplicate and leakage keys are the normalized `(source, target)`
/// pair. Kept pairs are stored end-trimmed with interior text unchanged.
/// Output preserves input order (first occurrence wins).
pub fn filter_corpus(corpus: &ParallelCorpus, test_corpus: &ParallelCorpus) -> (ParallelCorpus, FilterReport) {
    let test_keys: HashSet<(String, String)> = test_corpus
        .pairs
        .iter()
        .map(|p| (normalize_for_comparison(&p.source), normalize_for_comparison(&p.target)))
        .collect();

    let mut seen: HashSet<(String, String)> = HashSet::with_capacity(corpus.len());
    let mut out = ParallelCorpus::new(corpus.source_lang.clone(), corpus.target_lang.clone());
    let mut report = FilterReport {
        input_count: corpus.len(),
        ..FilterReport::default()
    };

    for pair in &corpus.pairs {
        let key = (
            normalize_for_comparison(&pair.source),
            normalize_for_comparison(&pair.target),
        );
        if key.0.is_empty() || key.1.is_empty() {
            report.dropped_empty += 1;
            continue;
        }
        if seen.contains(&key) {
            report.dropped_duplicates += 1;
            continue;
        }
        if test_keys.contains(&key) {
            seen.insert(key);
            report.dropped_leaked += 1;
            continue;
        }
        seen.insert(key);
        out.pairs.push(SentencePair {
            source: pair.source.trim().to_string(),
            target: pair.target.trim().to_string(),
            origin_line: pair.origin_line,
        });
    }
    report.output_count = out.len();
    (out, report)
}

/// Keep `n` pairs selected uniformly without replacement, in original
/// corpus order. Identity when `n >= len`. Seeded SplitMix64 selection,
/// so identical `(corpus, n, seed)` give identical output.
pub fn subsample(corpus: &ParallelCorpus, n: usize, seed: u64) -> ParallelCorpus {
    if n >= corpus.len() {
        return corpus.clone();
    }
    let mut rng = SplitMix64::new(seed);
    let keep = rng.sample_indices(corpus.len(), n);
    ParallelCorpus {
        pairs: keep.into_iter().map(|i| corpus.pairs[i].clone()).collect(),
        source_lang: corpus.source_lang.clone(),
        target_lang: corpus.target_lang.clone(),
    }
}

/// Prefix each source sentence with its language tag and concatenate the
/// corpora in argument order. Target sentences are unchanged.
pub fn tag_and_merge(corpora: &[(ParallelCorpus, LanguageTag)]) -> Result<ParallelCorpus> {
    let mut tags = HashSet::new();
    for (_, tag) in corpora {
        if !tags.insert(tag.token().to_string()) {
            return Err(Error::Config(format!(
                "duplicate language tag {} across corpora",
                tag.token()
            )));
        }
    }
    if let Some(((first, _), rest)) = corpora.split_first() {
        for (corpus, _) in rest {
            if corpus.source_lang != first.source_lang {
                return Err(Error::Config(format!(
                    "all corpora must share one source language, got {:?} and {:?}",
                    first.source_lang, corpus.source_lang
                )));
            }
        }
    }

    let source_lang = corpora
        .first()
        .map(|(c, _)| c.source_lang.clone())
        .unwrap_or_default();
    let target_lang = corpora
        .iter()
        .map(|(c, _)| c.target_lang.as_str())
        .collect::<Vec<_>>()
        .join("+");
    let mut out = ParallelCorpus::new(source_lang, target_lang);
    for (corpus, tag) in corpora {
        for pair in &corpus.pairs {
            out.pairs.push(SentencePair {
                source: format!("{} {}", tag.token(), pair.source),
                target: pair.target.clone(),
                origin_line: pair.origin_line,
            });
        }
    }
    Ok(out)
}

/// Split off a seeded uniform validation sample; the train side is the
/// complement. Both sides preserve original corpus order.
pub fn split(
    corpus: &ParallelCorpus,
    validation_size: usize,
    seed: u64,
) -> Result<(ParallelCorpus, ParallelCorpus)> {
    if validation_size > corpus.len() {
        return Err(Error::Size(format!(
            "validation size {} exceeds corpus size {}",
            validation_size,
            corpus.len()
        )));
    }
    let mut rng = SplitMix64::new(seed);
    let valid_idx = rng.sample_indices(corpus.len(), validation_size);
    let mut in_valid = vec![false; corpus.len()];
    for &i in &valid_idx {
        in_valid[i] = true;
    }
    let mut train = ParallelCorpus::new(corpus.source_lang.clone(), corpus.target_lang.clone());
    let mut valid = ParallelCorpus::new(corpus.source_lang.clone(), corpus.target_lang.clone());
    for (i, pair) in corpus.pairs.iter().enumerate() {
        if in_valid[i] {
            valid.pairs.push(pair.clone());
        } else {
            train.pairs.push(pair.clone());
        }
    }
    Ok((train, valid))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus_of(pairs: &[(&str, &str)]) -> ParallelCorpus {
        ParallelCorpus {
            pairs: pairs
                .iter()
                .enumerate()
                .map(|(i, (s, t))| SentencePair {
                    source: s.to_string(),
                    target: t.to_string(),
                    origin_line: i + 1,
                })
                .collect(),
            source_lang: "en".into(),
            target_lang: "xx".into(),
        }
    }

    #[test]
    fn load_aligns_by_line() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s.txt");
        let tgt = dir.path().join("t.txt");
        std::fs::write(&src, "a\nb\n").unwrap();
        std::fs::write(&tgt, "x\ny\n").unwrap();
        let c = load_parallel(&src, &tgt, "en", "xx").unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.pairs[0].source, "a");
        assert_eq!(c.pairs[0].target, "x");
        assert_eq!(c.pairs[0].origin_line, 1);
        assert_eq!(c.pairs[1].source, "b");
        assert_eq!(c.pairs[1].target, "y");
    }

    #[test]
    fn load_empty_files_gives_empty_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s.txt");
        let tgt = dir.path().join("t.txt");
        std::fs::write(&src, "").unwrap();
        std::fs::write(&tgt, "").unwrap();
        let c = load_parallel(&src, &tgt, "en", "xx").unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn load_reports_line_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s.txt");
        let tgt = dir.path().join("t.txt");
        std::fs::write(&src, "a\nb\nc\n").unwrap();
        std::fs::write(&tgt, "x\ny\n").unwrap();
        match load_parallel(&src, &tgt, "en", "xx") {
            Err(Error::Alignment {
                source_lines, target_lines, ..
            }) => {
                assert_eq!((source_lines, target_lines), (3, 2));
            }
            other => panic!("expected alignment error, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_utf8_byte_offset() {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("s.txt");
        let tgt = dir.path().join("t.txt");
        std::fs::write(&src, [b'o', b'k', b'\n', 0xFF, b'x']).unwrap();
        std::fs::write(&tgt, "x\ny\n").unwrap();
        match load_parallel(&src, &tgt, "en", "xx") {
            Err(Error::Utf8 { byte_offset, .. }) => assert_eq!(byte_offset, 3),
            other => panic!("expected utf8 error, got {other:?}"),
        }
    }

    #[test]
    fn filter_drops_duplicates_keeping_first() {
        let c = corpus_of(&[("a", "x"), ("a", "x"), ("b", "y")]);
        let (out, report) = filter_corpus(&c, &ParallelCorpus::new("en", "xx"));
        assert_eq!(out.len(), 2);
        assert_eq!(out.pairs[0].source, "a");
        assert_eq!(out.pairs[1].source, "b");
        assert_eq!(report.dropped_duplicates, 1);
        assert_eq!(report.input_count, 3);
        assert_eq!(report.output_count, 2);
    }

    #[test]
    fn filter_drops_empty_sides() {
        let c = corpus_of(&[("a", "   "), ("b", "y")]);
        let (out, report) = filter_corpus(&c, &ParallelCorpus::new("en", "xx"));
        assert_eq!(out.len(), 1);
        assert_eq!(out.pairs[0].source, "b");
        assert_eq!(report.dropped_empty, 1);
    }

    #[test]
    fn filter_drops_test_leaks() {
        let train = corpus_of(&[("a", "x"), ("b", "y")]);
        let test = corpus_of(&[("b", "y")]);
        let (out, report) = filter_corpus(&train, &test);
        assert_eq!(out.len(), 1);
        assert_eq!(out.pairs[0].source, "a");
        assert_eq!(report.dropped_leaked, 1);
    }

    #[test]
    fn filter_normalizes_for_comparison_but_preserves_interior() {
        let c = corpus_of(&[("a  b", "x"), (" a b ", "x"), ("c\td", "y")]);
        let (out, report) = filter_corpus(&c, &ParallelCorpus::new("en", "xx"));
        // "a  b" and " a b " normalize identically -> duplicate.
        assert_eq!(report.dropped_duplicates, 1);
        assert_eq!(out.pairs[0].source, "a  b");
        assert_eq!(out.pairs[1].source, "c\td");
    }

    #[test]
    fn filter_is_idempotent() {
        let c = corpus_of(&[("a", "x"), ("a", "x"), ("", "y"), ("b", "y")]);
        let (once, _) = filter_corpus(&c, &ParallelCorpus::new("en", "xx"));
        let (twice, second) = filter_corpus(&once, &ParallelCorpus::new("en", "xx"));
        assert_eq!(once, twice);
        assert_eq!(second.dropped_duplicates, 0);
        assert_eq!(second.dropped_empty, 0);
        assert_eq!(second.dropped_leaked, 0);
    }

    #[test]
    fn filter_report_serialization_has_exact_keys() {
        let report = FilterReport {
            input_count: 5,
            dropped_duplicates: 1,
            dropped_empty: 1,
            dropped_leaked: 1,
            output_count: 2,
        };
        let json = serde_json::to_string(&report).unwrap();
        assert_eq!(
            json,
            r#"{"input_count":5,"dropped_duplicates":1,"dropped_empty":1,"dropped_leaked":1,"output_count":2}"#
        );
        let text = report.to_text();
        assert!(text.contains("input_count: 5"));
        assert!(text.contains("output_count: 2"));
        let back: FilterReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn subsample_n_zero_and_identity() {
        let c = corpus_of(&[("a", "x"), ("b", "y"), ("c", "z")]);
        assert!(subsample(&c, 0, 1).is_empty());
        assert_eq!(subsample(&c, 3, 1), c);
        assert_eq!(subsample(&c, 10, 1), c);
    }

    #[test]
    fn subsample_is_deterministic_and_order_preserving() {
        let pairs: Vec<(String, String)> = (0..10).map(|i| (format!("s{i}"), format!("t{i}"))).collect();
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let c = corpus_of(&refs);
        let a = subsample(&c, 3, 42);
        let b = subsample(&c, 3, 42);
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        let lines: Vec<usize> = a.pairs.iter().map(|p| p.origin_line).collect();
        assert!(lines.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn subsample_different_seeds_differ() {
        let pairs: Vec<(String, String)> = (0..1000).map(|i| (format!("s{i}"), format!("t{i}"))).collect();
        let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let c = corpus_of(&refs);
        let differs = [(1u64, 2u64), (3, 4), (5, 6)]
            .iter()
            .any(|&(s1, s2)| subsample(&c, 100, s1) != subsample(&c, 100, s2));
        assert!(differs);
    }

    #[test]
    fn tag_and_merge_prefixes_and_concatenates() {
        let a = corpus_of(&[("Good morning", "x")]);
        let mut b = corpus_of(&[("Good night", "y")]);
        b.target_lang = "fon".into();
        let merged = tag_and_merge(&[
            (a, LanguageTag::for_lang("ewe").unwrap()),
            (b, LanguageTag::for_lang("fon").unwrap()),
        ])
        .unwrap();
        assert_eq!(merged.len(), 2);
        assert_eq!(merged.pairs[0].source, "<2ewe> Good morning");
        assert_eq!(merged.pairs[0].target, "x");
        assert_eq!(merged.pairs[1].source, "<2fon> Good night");
    }

    #[test]
    fn tag_and_merge_empty_list() {
        let merged = tag_and_merge(&[]).unwrap();
        assert!(merged.is_empty());
    }

    #[test]
    fn tag_and_merge_rejects_duplicate_tags() {
        let a = corpus_of(&[("a", "x")]);
        let b = corpus_of(&[("b", "y")]);
        let tag = LanguageTag::for_lang("ewe").unwrap();
        assert!(matches!(
            tag_and_merge(&[(a, tag.clone()), (b, tag)]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tag_and_merge_preserves_pair_counts() {
        let a = corpus_of(&[("a", "x"), ("b", "y")]);
        let b = corpus_of(&[("c", "z")]);
        let merged = tag_and_merge(&[
            (a, LanguageTag::for_lang("aa").unwrap()),
            (b, LanguageTag::for_lang("bb").unwrap()),
        ])
        .unwrap();
        assert_eq!(merged.len(), 3);
    }

    #[test]
    fn split_edges_and_disjointness() {
        let c = corpus_of(&[("a", "1"), ("b", "2"), ("c", "3"), ("d", "4"), ("e", "5")]);
        let (train, valid) = split(&c, 0, 7).unwrap();
        assert_eq!(train, c);
        assert!(valid.is_empty());

        let (train, valid) = split(&c, 5, 7).unwrap();
        assert!(train.is_empty());
        assert_eq!(valid.len(), 5);

        let (train, valid) = split(&c, 2, 7).unwrap();
        assert_eq!(train.len() + valid.len(), c.len());
        for p in &valid.pairs {
            assert!(!train.pairs.contains(p));
        }

        assert!(matches!(split(&c, 6, 7), Err(Error::Size(_))));
    }

    #[test]
    fn language_tag_validation() {
        assert_eq!(LanguageTag::parse("<2ewe>").unwrap().lang_code(), "ewe");
        assert!(LanguageTag::parse("<ewe>").is_err());
        assert!(LanguageTag::parse("<2EWE>").is_err());
        assert!(LanguageTag::parse("<2>").is_err());
        assert!(LanguageTag::parse("2ewe").is_err());
    }
}
