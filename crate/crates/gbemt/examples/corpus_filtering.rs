//! Corpus cleaning: duplicates, empty lines, and test-set leakage.
//!
//! ```bash
//! cargo run --example corpus_filtering
//! ```

use gbemt::corpus::{filter_corpus, split, subsample, ParallelCorpus, SentencePair};

fn corpus(pairs: &[(&str, &str)]) -> ParallelCorpus {
    let mut c = ParallelCorpus::new("en", "ewe");
    for (i, (s, t)) in pairs.iter().enumerate() {
        c.pairs.push(SentencePair {
            source: s.to_string(),
            target: t.to_string(),
            origin_line: i + 1,
        });
    }
    c
}

fn main() -> gbemt::Result<()> {
    let raw = corpus(&[
        ("Good morning", "Ŋdi na mi"),
        ("Good morning", "Ŋdi na mi"), // duplicate
        ("  ", "empty on the source side"),
        ("How are you?", "Aleke nèfɔ?"),
        ("This pair is in the test set", "leaked"),
        ("Thank you", "Akpe"),
    ]);
    let test = corpus(&[("This pair is in the test set", "leaked")]);

    let (clean, report) = filter_corpus(&raw, &test);
    println!("filter report:\n{report}");
    println!("kept pairs:");
    for pair in &clean.pairs {
        println!("  line {:>2}: {} ||| {}", pair.origin_line, pair.source, pair.target);
    }

    // Deterministic subsampling and validation splits.
    let sampled = subsample(&clean, 2, 42);
    println!("\nsubsample(n=2, seed=42) keeps original order:");
    for pair in &sampled.pairs {
        println!("  line {:>2}: {}", pair.origin_line, pair.source);
    }

    let (train, valid) = split(&clean, 1, 42)?;
    println!("\nsplit: {} train / {} validation", train.len(), valid.len());
    println!("\nas JSON: {}", serde_json::to_string(&report).unwrap());
    Ok(())
}
