//! One model, two target languages: a `<2xxx>` tag on the source picks
//! the output language, mirroring multilingual translation with toy tasks
//! (reverse vs. sort).
//!
//! ```bash
//! cargo run --example tagged_multilingual
//! ```

use std::collections::BTreeSet;

use gbemt::bpe::BpeModel;
use gbemt::corpus::LanguageTag;
use gbemt::decoding::{translate, DecodeConfig};
use gbemt::model::ModelConfig;
use gbemt::rng::SplitMix64;
use gbemt::training::{train, TokenizedDataset, TrainConfig};

const ALPHABET: [&str; 6] = ["a", "b", "c", "d", "e", "f"];

fn main() -> gbemt::Result<()> {
    let mut rng = SplitMix64::new(21);
    let mut sources = Vec::new();
    for _ in 0..700 {
        let len = 3 + rng.next_below(4) as usize;
        let sentence: Vec<&str> = (0..len)
            .map(|_| ALPHABET[rng.next_below(ALPHABET.len() as u64) as usize])
            .collect();
        sources.push(sentence);
    }

    // Tagged pairs: <2rev> reverses the tokens, <2srt> sorts them.
    let mut tagged: Vec<(String, String)> = Vec::new();
    for s in &sources {
        let reversed: Vec<&str> = s.iter().rev().copied().collect();
        let mut sorted = s.clone();
        sorted.sort_unstable();
        tagged.push((format!("<2rev> {}", s.join(" ")), reversed.join(" ")));
        tagged.push((format!("<2srt> {}", s.join(" ")), sorted.join(" ")));
    }

    let protected: BTreeSet<String> = ["<2rev>", "<2srt>"].iter().map(|s| s.to_string()).collect();
    let src_bpe = BpeModel::train(tagged.iter().map(|(s, _)| s.as_str()), 40, &protected)?;
    let tgt_bpe = BpeModel::train(tagged.iter().map(|(_, t)| t.as_str()), 40, &BTreeSet::new())?;

    let encode = |pairs: &[(String, String)]| {
        pairs
            .iter()
            .map(|(s, t)| (src_bpe.encode(s), tgt_bpe.encode(t)))
            .collect::<Vec<_>>()
    };
    let data = TokenizedDataset {
        train: encode(&tagged[..1300]),
        valid: encode(&tagged[1300..]),
    };

    let model_cfg = ModelConfig {
        num_layers: 2,
        d_model: 32,
        d_ff: 64,
        num_heads: 4,
        max_seq_len: 32,
        src_vocab: src_bpe.vocab_len(),
        tgt_vocab: tgt_bpe.vocab_len(),
        dropout: 0.0,
        label_smoothing: 0.0,
        tie_output_embedding: true,
    };
    let dir = tempfile::tempdir().unwrap();
    let mut train_cfg = TrainConfig::desk(99, dir.path());
    train_cfg.epochs = 14;
    train_cfg.batch_size_sentences = 32;
    train_cfg.label_smoothing = 0.0;
    println!("training one tagged model on both tasks ({} pairs)...", data.train.len());
    let outcome = train(&model_cfg, &data, &train_cfg)?;
    println!("best valid loss {:.4} at epoch {}\n", outcome.checkpoint.validation_loss, outcome.checkpoint.epoch);

    let decode = DecodeConfig::default();
    let rev = LanguageTag::parse("<2rev>")?;
    let srt = LanguageTag::parse("<2srt>")?;
    for input in ["c a f b", "e d c b a", "b a f"] {
        let reversed = translate(&outcome.checkpoint, &src_bpe, &tgt_bpe, input, Some(&rev), &decode)?;
        let sorted = translate(&outcome.checkpoint, &src_bpe, &tgt_bpe, input, Some(&srt), &decode)?;
        println!("{input:>10}  --<2rev>-->  {reversed:<10}  --<2srt>-->  {sorted}");
    }

    // Unknown tags fail fast with the registered list.
    let bad = LanguageTag::parse("<2xyz>")?;
    let err = translate(&outcome.checkpoint, &src_bpe, &tgt_bpe, "a b", Some(&bad), &decode).unwrap_err();
    println!("\nunknown tag: {err}");
    Ok(())
}
