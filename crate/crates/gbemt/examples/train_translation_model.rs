//! Train a micro Transformer on a toy copy task and watch it converge.
//!
//! ```bash
//! cargo run --example train_translation_model
//! ```

use std::collections::BTreeSet;

use gbemt::bpe::BpeModel;
use gbemt::decoding::{translate, DecodeConfig};
use gbemt::model::{Checkpoint, ModelConfig};
use gbemt::rng::SplitMix64;
use gbemt::training::{train, TokenizedDataset, TrainConfig};

fn main() -> gbemt::Result<()> {
    // Toy task: copy short sentences over a five-word vocabulary.
    let words = ["kpo", "lo", "mi", "se", "do"];
    let mut rng = SplitMix64::new(8);
    let sentences: Vec<String> = (0..300)
        .map(|_| {
            let len = 2 + rng.next_below(4) as usize;
            (0..len)
                .map(|_| words[rng.next_below(words.len() as u64) as usize])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();

    let bpe = BpeModel::train(sentences.iter(), 40, &BTreeSet::new())?;
    let encode_all = |lines: &[String]| {
        lines
            .iter()
            .map(|l| (bpe.encode(l), bpe.encode(l)))
            .collect::<Vec<_>>()
    };
    let data = TokenizedDataset {
        train: encode_all(&sentences[..280]),
        valid: encode_all(&sentences[280..]),
    };

    let model_cfg = ModelConfig {
        num_layers: 1,
        d_model: 16,
        d_ff: 32,
        num_heads: 2,
        max_seq_len: 20,
        src_vocab: bpe.vocab_len(),
        tgt_vocab: bpe.vocab_len(),
        dropout: 0.0,
        label_smoothing: 0.0,
        tie_output_embedding: true,
    };
    let dir = tempfile::tempdir().unwrap();
    let mut train_cfg = TrainConfig::desk(5, dir.path());
    train_cfg.epochs = 12;
    train_cfg.batch_size_sentences = 32;
    train_cfg.label_smoothing = 0.0;

    let outcome = train(&model_cfg, &data, &train_cfg)?;
    println!("epoch  train_loss  valid_loss");
    for stats in &outcome.log {
        println!("{:>5}  {:>10.4}  {:>10.4}", stats.epoch, stats.train_loss, stats.valid_loss);
    }

    let best: &Checkpoint = &outcome.checkpoint;
    println!("\nbest epoch {} (valid loss {:.4})", best.epoch, best.validation_loss);
    let decode = DecodeConfig {
        beam_size: 3,
        ..DecodeConfig::default()
    };
    for input in ["kpo lo mi", "se do", "mi mi kpo se"] {
        let output = translate(best, &bpe, &bpe, input, None, &decode)?;
        println!("copy {input:?} -> {output:?}");
    }
    Ok(())
}
