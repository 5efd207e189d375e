//! Byte-pair encoding: train a model, inspect its merges, encode and
//! decode, and keep language tags atomic.
//!
//! ```bash
//! cargo run --example bpe_tokenizer
//! ```

use std::collections::BTreeSet;

use gbemt::bpe::BpeModel;

fn main() -> gbemt::Result<()> {
    let lines = [
        "<2ewe> the lowest trainer trained the lowlands",
        "<2fon> the trainer trains in the lowlands",
        "<2ewe> low lower lowest",
        "<2fon> train trained trainer training",
    ];
    let protected: BTreeSet<String> = ["<2ewe>", "<2fon>"].iter().map(|s| s.to_string()).collect();
    let model = BpeModel::train(lines.iter(), 60, &protected)?;

    println!("vocab size {} ({} merges), first merges:", model.vocab_len(), model.merges().len());
    for (left, right) in model.merges().iter().take(8) {
        println!("  {left} + {right} -> {left}{right}");
    }

    let text = "<2ewe> the lowest training";
    let ids = model.encode(text);
    println!("\nencode {text:?}:");
    let tokens: Vec<&str> = ids.iter().filter_map(|&id| model.token_of(id)).collect();
    println!("  ids    {ids:?}");
    println!("  tokens {tokens:?}");
    println!("  decode {:?}", model.decode(&ids)?);

    // Unknown characters degrade to the UNK placeholder.
    println!("\nunknown input decodes as {:?}", model.decode(&model.encode("\u{0292}ʒʒ"))?);

    // The serialized form is deterministic: retraining writes identical bytes.
    let mut first = Vec::new();
    let mut second = Vec::new();
    model.write_to(&mut first).unwrap();
    BpeModel::train(lines.iter(), 60, &protected)?.write_to(&mut second).unwrap();
    println!("\nretraining is byte-identical: {}", first == second);
    Ok(())
}
