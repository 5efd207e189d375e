//! BLEU, chrF, and TER, plus labeled report tables.
//!
//! ```bash
//! cargo run --example evaluate_metrics
//! ```

use gbemt::metrics::{
    bleu_detailed, chrf, evaluate_labeled, format_report_table, ter, tokenize_13a,
};

fn main() -> gbemt::Result<()> {
    println!("13a tokenization:");
    for text in ["Hello, world!", "It costs 3.50 dollars.", "state-of-the-art (2020)"] {
        println!("  {text:?} -> {:?}", tokenize_13a(text));
    }

    let hyps: Vec<String> = vec![
        "the cat sat on the mat".into(),
        "a quick brown fox".into(),
        "he reads the report twice".into(),
    ];
    let refs: Vec<String> = vec![
        "the cat sat on the mat".into(),
        "the quick brown fox".into(),
        "he reads the report once".into(),
    ];

    let detail = bleu_detailed(&hyps, &refs)?;
    println!("\ncorpus BLEU {:.2}", detail.score);
    println!("  precisions {:?}", detail.precisions.map(|p| (p * 1000.0).round() / 10.0));
    println!("  brevity penalty {:.4} (hyp {} vs ref {} tokens)", detail.brevity_penalty, detail.hyp_len, detail.ref_len);
    println!("corpus chrF {:.2}", chrf(&hyps, &refs)?);
    println!("corpus TER  {:.2} (block shifts count as one edit)", ter(&hyps, &refs)?);

    // A shifted block costs one edit, not four.
    let rotated: Vec<String> = vec!["mat the cat sat on the".into()];
    let original: Vec<String> = vec!["the cat sat on the mat".into()];
    println!("rotation TER {:.2}", ter(&rotated, &original)?);

    // Per-label and pooled rows, as in a multilingual comparison.
    let labels: Vec<String> = vec!["ewe".into(), "fon".into(), "ewe".into()];
    let reports = evaluate_labeled(&hyps, &refs, Some(&labels), "demo-system", "beam=5 seed=42")?;
    println!("\n{}", format_report_table(&reports));
    Ok(())
}
