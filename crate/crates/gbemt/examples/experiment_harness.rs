//! The full comparison harness on tiny synthetic data: two bilingual
//! models versus one tagged multilingual model, one shared budget, one
//! report.
//!
//! ```bash
//! cargo run --example experiment_harness
//! ```

use std::path::Path;

use gbemt::decoding::DecodeConfig;
use gbemt::experiment::{run_experiment, BpeSizes, DataConfig, ExperimentConfig, PairConfig};
use gbemt::model::ModelConfig;
use gbemt::rng::SplitMix64;
use gbemt::training::TrainConfig;

const ALPHABET: [&str; 4] = ["a", "b", "c", "d"];

fn write_lines(path: &Path, lines: &[String]) {
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

fn main() -> gbemt::Result<()> {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // Shared source stream; one target reverses it, the other echoes it.
    let mut rng = SplitMix64::new(4);
    let sources: Vec<Vec<&str>> = (0..440)
        .map(|_| {
            let len = 2 + rng.next_below(4) as usize;
            (0..len)
                .map(|_| ALPHABET[rng.next_below(ALPHABET.len() as u64) as usize])
                .collect()
        })
        .collect();
    let src: Vec<String> = sources.iter().map(|s| s.join(" ")).collect();
    let rev: Vec<String> = sources
        .iter()
        .map(|s| s.iter().rev().copied().collect::<Vec<_>>().join(" "))
        .collect();
    let echo: Vec<String> = sources.iter().map(|s| s.join(" ")).collect();
    write_lines(&d.join("train.src"), &src[..400].to_vec());
    write_lines(&d.join("train.rev"), &rev[..400].to_vec());
    write_lines(&d.join("train.echo"), &echo[..400].to_vec());
    write_lines(&d.join("test.src"), &src[400..].to_vec());
    write_lines(&d.join("test.rev"), &rev[400..].to_vec());
    write_lines(&d.join("test.echo"), &echo[400..].to_vec());

    let cfg = ExperimentConfig {
        pairs: vec![
            PairConfig {
                name: "reverse".into(),
                src_file: d.join("train.src"),
                tgt_file: d.join("train.rev"),
                test_src_file: d.join("test.src"),
                test_tgt_file: d.join("test.rev"),
                tag: "<2rev>".into(),
                extra_bpe_tgt_file: None,
            },
            PairConfig {
                name: "echo".into(),
                src_file: d.join("train.src"),
                tgt_file: d.join("train.echo"),
                test_src_file: d.join("test.src"),
                test_tgt_file: d.join("test.echo"),
                tag: "<2echo>".into(),
                extra_bpe_tgt_file: None,
            },
        ],
        source_lang: "tok".into(),
        data: DataConfig {
            subsample: None,
            validation_size: 20,
        },
        bpe: BpeSizes {
            source_vocab_size: 40,
            target_vocab_size: 40,
        },
        model: ModelConfig {
            num_layers: 2,
            d_model: 32,
            d_ff: 64,
            num_heads: 4,
            max_seq_len: 32,
            src_vocab: 0, // filled from the tokenizers
            tgt_vocab: 0,
            dropout: 0.0,
            label_smoothing: 0.0,
            tie_output_embedding: true,
        },
        train: TrainConfig {
            batch_size_sentences: 16,
            epochs: 35,
            learning_rate: 1.0,
            warmup_steps: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            label_smoothing: 0.0,
            seed: 42,
            checkpoint_dir: d.join("unused"),
        },
        decode: DecodeConfig {
            beam_size: 3,
            max_len_factor: 1.5,
            max_len_offset: 5,
        },
        output_dir: d.join("out"),
    };

    println!("training 2 bilingual models + 1 multilingual model (tiny budget)...\n");
    let report = run_experiment(&cfg, true)?;
    print!("{}", report.to_markdown());
    println!(
        "artifacts: {}",
        std::fs::read_dir(d.join("out"))
            .unwrap()
            .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<Vec<_>>()
            .join(", ")
    );
    Ok(())
}
