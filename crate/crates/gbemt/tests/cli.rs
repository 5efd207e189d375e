//! End-to-end tests of the `gbemt` binary: subcommand plumbing, exit
//! codes, stdin/stdout behavior, and the JSON surfaces.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use gbemt::bpe::BpeModel;

fn gbemt() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_gbemt"));
    // Keep host environment overrides out of the tests.
    cmd.env_remove("GBEMT_SEED").env_remove("GBEMT_OUTPUT_DIR");
    cmd
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

#[test]
fn prepare_writes_splits_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(&d.join("s.txt"), "a one\na one\nb two\nc three\nd four\n");
    write(&d.join("t.txt"), "x1\nx1\nx2\nx3\nx4\n");
    let out = gbemt()
        .args(["prepare", "--src"])
        .arg(d.join("s.txt"))
        .arg("--tgt")
        .arg(d.join("t.txt"))
        .args(["--validation-size", "1", "--seed", "9", "--out-dir"])
        .arg(d.join("prep"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("prep/filter_report.json")).unwrap()).unwrap();
    assert_eq!(report["input_count"], 5);
    assert_eq!(report["dropped_duplicates"], 1);
    assert_eq!(report["output_count"], 4);
    let train = std::fs::read_to_string(d.join("prep/train.src")).unwrap();
    let valid = std::fs::read_to_string(d.join("prep/valid.src")).unwrap();
    assert_eq!(train.lines().count(), 3);
    assert_eq!(valid.lines().count(), 1);
    let text_report = std::fs::read_to_string(d.join("prep/filter_report.txt")).unwrap();
    assert!(text_report.contains("dropped_duplicates: 1"));
}

#[test]
fn prepare_honors_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut src = String::new();
    let mut tgt = String::new();
    for i in 0..30 {
        src.push_str(&format!("source line {i}\n"));
        tgt.push_str(&format!("target line {i}\n"));
    }
    write(&d.join("s.txt"), &src);
    write(&d.join("t.txt"), &tgt);

    let run = |seed_args: &[&str], env: Option<(&str, String)>, out: &Path| {
        let mut cmd = gbemt();
        cmd.args(["prepare", "--src"])
            .arg(d.join("s.txt"))
            .arg("--tgt")
            .arg(d.join("t.txt"))
            .args(["--validation-size", "10"])
            .args(seed_args)
            .arg("--out-dir")
            .arg(out);
        if let Some((key, value)) = env {
            cmd.env(key, value);
        }
        assert!(cmd.output().unwrap().status.success());
    };
    run(&["--seed", "7"], None, &d.join("a"));
    run(&["--seed", "42"], Some(("GBEMT_SEED", "7".into())), &d.join("b"));
    run(&["--seed", "42"], None, &d.join("c"));
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&d.join("a/train.src")), read(&d.join("b/train.src")));
    assert_ne!(read(&d.join("a/train.src")), read(&d.join("c/train.src")));

    // GBEMT_OUTPUT_DIR wins over --out-dir.
    let mut cmd = gbemt();
    cmd.args(["prepare", "--src"])
        .arg(d.join("s.txt"))
        .arg("--tgt")
        .arg(d.join("t.txt"))
        .args(["--seed", "7", "--out-dir"])
        .arg(d.join("ignored"))
        .env("GBEMT_OUTPUT_DIR", d.join("env_out"));
    assert!(cmd.output().unwrap().status.success());
    assert!(d.join("env_out/train.src").exists());
    assert!(!d.join("ignored").exists());
}

#[test]
fn bpe_train_encode_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(&d.join("text.txt"), "banana bandana\ncabana banana\n");
    let out = gbemt()
        .args(["bpe", "train", "--input"])
        .arg(d.join("text.txt"))
        .args(["--vocab-size", "40", "--output"])
        .arg(d.join("model.bpe"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    // Encode from stdin, decode from a file, recover the text.
    let mut encode = gbemt()
        .args(["bpe", "encode", "--model"])
        .arg(d.join("model.bpe"))
        .arg("--output")
        .arg(d.join("ids.txt"))
        .stdin(Stdio::piped())
        .spawn()
        .unwrap();
    encode
        .stdin
        .as_mut()
        .unwrap()
        .write_all(b"banana cabana\n")
        .unwrap();
    assert!(encode.wait().unwrap().success());

    let out = gbemt()
        .args(["bpe", "decode", "--model"])
        .arg(d.join("model.bpe"))
        .arg("--input")
        .arg(d.join("ids.txt"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(stdout_of(&out), "banana cabana\n");
}

/// Train a micro model through the CLI, translate stdin to stdout, then
/// evaluate the output file with the JSON surface.
#[test]
fn train_translate_evaluate_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // Copy task over a tiny alphabet.
    let mut src = String::new();
    for i in 0..40 {
        let w = ["aa", "ab", "ba", "bb"][i % 4];
        let v = ["aa", "ab", "ba", "bb"][(i / 4) % 4];
        src.push_str(&format!("{w} {v}\n"));
    }
    write(&d.join("train.src"), &src);
    write(&d.join("train.tgt"), &src);
    write(&d.join("valid.src"), "aa bb\nba ab\n");
    write(&d.join("valid.tgt"), "aa bb\nba ab\n");

    for side in ["src", "tgt"] {
        let out = gbemt()
            .args(["bpe", "train", "--input"])
            .arg(d.join("train.src"))
            .args(["--vocab-size", "20", "--output"])
            .arg(d.join(format!("{side}.bpe")))
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let vocab = BpeModel::load(d.join("src.bpe")).unwrap().vocab_len();

    let config = serde_json::json!({
        "model": {
            "num_layers": 1, "d_model": 16, "d_ff": 32, "num_heads": 2,
            "max_seq_len": 12, "src_vocab": vocab, "tgt_vocab": vocab,
            "dropout": 0.0, "label_smoothing": 0.0, "tie_output_embedding": true
        },
        "train": {
            "batch_size_sentences": 8, "epochs": 30, "learning_rate": 1.0,
            "warmup_steps": 50, "adam_beta1": 0.9, "adam_beta2": 0.999,
            "adam_eps": 1e-8, "label_smoothing": 0.0, "seed": 11,
            "checkpoint_dir": d.join("run")
        },
        "data": {
            "train_src": d.join("train.src"), "train_tgt": d.join("train.tgt"),
            "valid_src": d.join("valid.src"), "valid_tgt": d.join("valid.tgt"),
            "src_bpe": d.join("src.bpe"), "tgt_bpe": d.join("tgt.bpe")
        }
    });
    write(&d.join("job.json"), &config.to_string());
    let out = gbemt().args(["train", "--config"]).arg(d.join("job.json")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(d.join("run/best.ckpt").exists());
    let log = std::fs::read_to_string(d.join("run/train.log")).unwrap();
    assert_eq!(log.lines().count(), 30);
    let first = log.lines().next().unwrap();
    assert_eq!(first.split('\t').count(), 5, "epoch\\ttrain\\tvalid\\tlr\\tseconds");

    // Translate two sentences from stdin.
    let mut translate = gbemt()
        .args(["translate", "--checkpoint"])
        .arg(d.join("run/best.ckpt"))
        .arg("--src-bpe")
        .arg(d.join("src.bpe"))
        .arg("--tgt-bpe")
        .arg(d.join("tgt.bpe"))
        .args(["--beam", "2"])
        .arg("--output")
        .arg(d.join("hyp.txt"))
        .stdin(Stdio::piped())
        .spawn()
        .unwrap();
    translate
        .stdin
        .as_mut()
        .unwrap()
        .write_all(b"aa bb\nba ab\n")
        .unwrap();
    assert!(translate.wait().unwrap().success());
    let hyp = std::fs::read_to_string(d.join("hyp.txt")).unwrap();
    assert_eq!(hyp.lines().count(), 2);

    let out = gbemt()
        .args(["evaluate", "--hyp"])
        .arg(d.join("hyp.txt"))
        .arg("--ref")
        .arg(d.join("valid.src"))
        .args(["--json", "--system-name", "copy"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let reports: serde_json::Value = serde_json::from_str(&stdout_of(&out)).unwrap();
    let row = &reports[0];
    for key in [
        "system_name",
        "target_label",
        "bleu",
        "chrf",
        "ter",
        "sentence_count",
        "decoding_settings",
    ] {
        assert!(row.get(key).is_some(), "missing EvalReport key {key}");
    }
    assert_eq!(row["system_name"], "copy");
    assert_eq!(row["sentence_count"], 2);

    // Text mode with a metric subset.
    let out = gbemt()
        .args(["evaluate", "--hyp"])
        .arg(d.join("hyp.txt"))
        .arg("--ref")
        .arg(d.join("valid.src"))
        .args(["--metrics", "bleu,ter"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let table = stdout_of(&out);
    assert!(table.contains("BLEU") && table.contains("TER") && !table.contains("CHRF"));
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    // Usage error: unknown flag.
    let out = gbemt().args(["evaluate", "--nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Usage error: unknown metric name.
    write(&d.join("h.txt"), "a\n");
    write(&d.join("r.txt"), "a\n");
    let out = gbemt()
        .args(["evaluate", "--hyp"])
        .arg(d.join("h.txt"))
        .arg("--ref")
        .arg(d.join("r.txt"))
        .args(["--metrics", "rouge"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Data error: missing file.
    let out = gbemt()
        .args(["evaluate", "--hyp"])
        .arg(d.join("missing.txt"))
        .arg("--ref")
        .arg(d.join("r.txt"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Data error: pairing mismatch.
    write(&d.join("h2.txt"), "a\nb\n");
    let out = gbemt()
        .args(["evaluate", "--hyp"])
        .arg(d.join("h2.txt"))
        .arg("--ref")
        .arg(d.join("r.txt"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // Usage error: unknown key in a config file.
    write(&d.join("bad.json"), r#"{"model": {}, "train": {}, "data": {}, "typo": 1}"#);
    let out = gbemt().args(["train", "--config"]).arg(d.join("bad.json")).output().unwrap();
    assert_eq!(out.status.code(), Some(1));

    // --help exits 0.
    let out = gbemt().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn stats_prints_size_table_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for (name, lines) in [
        ("a.src", 12),
        ("a.tgt", 12),
        ("a_test.src", 3),
        ("a_test.tgt", 3),
        ("b.src", 9),
        ("b.tgt", 9),
        ("b_test.src", 2),
        ("b_test.tgt", 2),
    ] {
        let text: String = (0..lines).map(|i| format!("{name} line {i}\n")).collect();
        write(&d.join(name), &text);
    }
    let cfg = serde_json::json!({
        "pairs": [
            {"name": "aa", "src_file": d.join("a.src"), "tgt_file": d.join("a.tgt"),
             "test_src_file": d.join("a_test.src"), "test_tgt_file": d.join("a_test.tgt"), "tag": "<2aa>"},
            {"name": "bb", "src_file": d.join("b.src"), "tgt_file": d.join("b.tgt"),
             "test_src_file": d.join("b_test.src"), "test_tgt_file": d.join("b_test.tgt"), "tag": "<2bb>"}
        ],
        "source_lang": "en",
        "data": {"validation_size": 2},
        "bpe": {"source_vocab_size": 60, "target_vocab_size": 60},
        "model": {
            "num_layers": 1, "d_model": 8, "d_ff": 16, "num_heads": 2,
            "max_seq_len": 16, "src_vocab": 0, "tgt_vocab": 0,
            "dropout": 0.0, "label_smoothing": 0.0, "tie_output_embedding": true
        },
        "train": {
            "batch_size_sentences": 4, "epochs": 1, "learning_rate": 1.0,
            "warmup_steps": 10, "adam_beta1": 0.9, "adam_beta2": 0.999,
            "adam_eps": 1e-8, "label_smoothing": 0.0, "seed": 3,
            "checkpoint_dir": d.join("unused")
        },
        "decode": {"beam_size": 2, "max_len_factor": 1.5, "max_len_offset": 5},
        "output_dir": d.join("never_created")
    });
    write(&d.join("exp.json"), &cfg.to_string());
    let out = gbemt().args(["stats", "--config"]).arg(d.join("exp.json")).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = stdout_of(&out);
    assert!(table.contains("multilingual"), "{table}");
    // 12 - 2 validation = 10 train for pair aa.
    assert!(table.contains("10"), "{table}");
    assert!(!d.join("never_created").exists(), "stats must not write");
}

#[test]
fn translate_rejects_unknown_tag_with_registered_list() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(&d.join("text.txt"), "<2aa> x y\n<2bb> y x\n");
    let out = gbemt()
        .args(["bpe", "train", "--input"])
        .arg(d.join("text.txt"))
        .args(["--vocab-size", "30", "--protected", "<2aa>,<2bb>", "--output"])
        .arg(d.join("m.bpe"))
        .output()
        .unwrap();
    assert!(out.status.success());

    // A checkpoint is needed before tag validation; build a micro one.
    let vocab = BpeModel::load(d.join("m.bpe")).unwrap().vocab_len();
    let cfg = gbemt::model::ModelConfig {
        num_layers: 1,
        d_model: 8,
        d_ff: 16,
        num_heads: 2,
        max_seq_len: 12,
        src_vocab: vocab,
        tgt_vocab: vocab,
        dropout: 0.0,
        label_smoothing: 0.0,
        tie_output_embedding: true,
    };
    let ckpt = gbemt::model::Checkpoint {
        parameters: gbemt::model::Parameters::init(&cfg, 1),
        config: cfg,
        epoch: 0,
        validation_loss: 0.0,
    };
    ckpt.save(d.join("m.ckpt")).unwrap();

    let mut child = gbemt()
        .args(["translate", "--checkpoint"])
        .arg(d.join("m.ckpt"))
        .arg("--src-bpe")
        .arg(d.join("m.bpe"))
        .arg("--tgt-bpe")
        .arg(d.join("m.bpe"))
        .args(["--tag", "<2cc>"])
        .stdin(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.as_mut().unwrap().write_all(b"x y\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("<2aa>") && err.contains("<2bb>"), "{err}");
}
