//! Thin command-line front end over the gbemt library.
//!
//! One process, one job. Exit codes: 0 success, 1 usage error, 2 data
//! error, 3 training error. `GBEMT_SEED` and `GBEMT_OUTPUT_DIR` override
//! the seed and output directory of `prepare`, `experiment`, and `stats`.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use gbemt::bpe::BpeModel;
use gbemt::corpus::{filter_corpus, load_parallel, split, subsample, tag_and_merge, LanguageTag, ParallelCorpus};
use gbemt::decoding::{translate, DecodeConfig};
use gbemt::error::{Error, Result};
use gbemt::experiment::{dataset_stats, format_size_table, prepare_pairs, run_experiment, ExperimentConfig};
use gbemt::metrics::{evaluate_corpus, EvalReport};
use gbemt::model::{Checkpoint, ModelConfig};
use gbemt::rng::derive_seed;
use gbemt::training::{train, TokenizedDataset, TrainConfig};

#[derive(Parser)]
#[command(name = "gbemt", version, about = "Multilingual NMT toolkit: corpus prep, BPE, training, translation, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter, subsample, optionally tag, and split a parallel corpus.
    Prepare(PrepareArgs),
    /// Train or apply BPE tokenizers.
    #[command(subcommand)]
    Bpe(BpeCommand),
    /// Train a translation model from a JSON job description.
    Train(TrainArgs),
    /// Translate text, one sentence per line.
    Translate(TranslateArgs),
    /// Score hypotheses against references with BLEU, chrF, and TER.
    Evaluate(EvaluateArgs),
    /// Run the full bilingual-vs-multilingual comparison.
    Experiment(ExperimentArgs),
    /// Print the dataset-size table for an experiment config.
    Stats(StatsArgs),
}

#[derive(Args)]
struct PrepareArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long, default_value = "en")]
    src_lang: String,
    #[arg(long, default_value = "xx")]
    tgt_lang: String,
    /// Test-set source file for leakage filtering.
    #[arg(long, requires = "test_tgt")]
    test_src: Option<PathBuf>,
    /// Test-set target file for leakage filtering.
    #[arg(long, requires = "test_src")]
    test_tgt: Option<PathBuf>,
    /// Keep at most this many training pairs (uniform random).
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, default_value_t = 0)]
    validation_size: usize,
    /// Prepend this language tag (e.g. <2ewe>) to every source sentence.
    #[arg(long)]
    tag: Option<String>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum BpeCommand {
    /// Learn a BPE model from text files.
    Train(BpeTrainArgs),
    /// Encode text lines to space-separated token ids.
    Encode(BpeApplyArgs),
    /// Decode lines of space-separated token ids back to text.
    Decode(BpeApplyArgs),
}

#[derive(Args)]
struct BpeTrainArgs {
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long)]
    vocab_size: usize,
    /// Comma-separated atomic tokens, e.g. <2ewe>,<2fon>.
    #[arg(long)]
    protected: Option<String>,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Args)]
struct BpeApplyArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input file; standard input when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON job: {"model": ModelConfig, "train": TrainConfig, "data": {...}}.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    src_bpe: PathBuf,
    #[arg(long)]
    tgt_bpe: PathBuf,
    /// Target-language tag for multilingual checkpoints, e.g. <2fon>.
    #[arg(long)]
    tag: Option<String>,
    /// Input file; standard input when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    beam: usize,
    #[arg(long, default_value_t = 1.5)]
    max_len_factor: f64,
    #[arg(long, default_value_t = 5)]
    max_len_offset: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    hyp: PathBuf,
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Per-line target-language labels; adds per-label and pooled rows.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value = "bleu,chrf,ter")]
    metrics: String,
    /// Emit JSON instead of the aligned text table.
    #[arg(long)]
    json: bool,
    #[arg(long, default_value = "system")]
    system_name: String,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Train the bilingual models concurrently.
    #[arg(long)]
    parallel_bilinguals: bool,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    config: PathBuf,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Prepare(args) => cmd_prepare(args),
        Command::Bpe(BpeCommand::Train(args)) => cmd_bpe_train(args),
        Command::Bpe(BpeCommand::Encode(args)) => cmd_bpe_apply(args, true),
        Command::Bpe(BpeCommand::Decode(args)) => cmd_bpe_apply(args, false),
        Command::Train(args) => cmd_train(args),
        Command::Translate(args) => cmd_translate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Stats(args) => cmd_stats(args),
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("GBEMT_SEED") {
        Ok(text) => text
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("GBEMT_SEED must be an integer, got {text:?}"))),
        Err(_) => Ok(None),
    }
}

fn env_output_dir() -> Option<PathBuf> {
    std::env::var_os("GBEMT_OUTPUT_DIR").map(PathBuf::from)
}

fn read_input_lines(path: &Option<PathBuf>) -> Result<Vec<String>> {
    let text = match path {
        Some(path) => std::fs::read_to_string(path).map_err(|e| Error::io(path.clone(), e))?,
        None => {
            let mut buf = String::new();
            for line in std::io::stdin().lock().lines() {
                buf.push_str(&line.map_err(|e| Error::Data(format!("stdin read failed: {e}")))?);
                buf.push('\n');
            }
            buf
        }
    };
    if text.is_empty() {
        return Ok(Vec::new());
    }
    Ok(text
        .strip_suffix('\n')
        .unwrap_or(&text)
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
        .collect())
}

fn write_output_lines(path: &Option<PathBuf>, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    match path {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path.clone(), e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Error::Data(format!("stdout write failed: {e}")))
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn corpus_lines(corpus: &ParallelCorpus) -> (Vec<String>, Vec<String>) {
    (
        corpus.sources().map(str::to_string).collect(),
        corpus.targets().map(str::to_string).collect(),
    )
}

fn cmd_prepare(args: PrepareArgs) -> Result<()> {
    let seed = env_seed()?.unwrap_or(args.seed);
    let out_dir = env_output_dir().unwrap_or(args.out_dir);

    let corpus = load_parallel(&args.src, &args.tgt, &args.src_lang, &args.tgt_lang)?;
    let test = match (&args.test_src, &args.test_tgt) {
        (Some(ts), Some(tt)) => load_parallel(ts, tt, &args.src_lang, &args.tgt_lang)?,
        _ => ParallelCorpus::new(args.src_lang.clone(), args.tgt_lang.clone()),
    };
    let (clean, report) = filter_corpus(&corpus, &test);
    let capped = match args.subsample {
        Some(n) => subsample(&clean, n, derive_seed(seed, "prepare/subsample")),
        None => clean,
    };
    let tagged = match &args.tag {
        Some(tag) => tag_and_merge(&[(capped, LanguageTag::parse(tag)?)])?,
        None => capped,
    };
    let (train_split, valid_split) = split(&tagged, args.validation_size, derive_seed(seed, "prepare/split"))?;

    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let (train_src, train_tgt) = corpus_lines(&train_split);
    let (valid_src, valid_tgt) = corpus_lines(&valid_split);
    write_output_lines(&Some(out_dir.join("train.src")), &train_src)?;
    write_output_lines(&Some(out_dir.join("train.tgt")), &train_tgt)?;
    write_output_lines(&Some(out_dir.join("valid.src")), &valid_src)?;
    write_output_lines(&Some(out_dir.join("valid.tgt")), &valid_tgt)?;
    write_file(&out_dir.join("filter_report.txt"), &report.to_text())?;
    write_file(
        &out_dir.join("filter_report.json"),
        &serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?,
    )?;
    print!("{}", report.to_text());
    println!("train: {} pairs, valid: {} pairs -> {}", train_split.len(), valid_split.len(), out_dir.display());
    Ok(())
}

fn cmd_bpe_train(args: BpeTrainArgs) -> Result<()> {
    let mut lines = Vec::new();
    for path in &args.input {
        lines.extend(read_input_lines(&Some(path.clone()))?);
    }
    let protected: BTreeSet<String> = args
        .protected
        .as_deref()
        .unwrap_or("")
        .split(',')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect();
    let model = BpeModel::train(lines.iter(), args.vocab_size, &protected)?;
    model.save(&args.output)?;
    println!(
        "trained BPE model: {} merges, vocab {} -> {}",
        model.merges().len(),
        model.vocab_len(),
        args.output.display()
    );
    Ok(())
}

fn cmd_bpe_apply(args: BpeApplyArgs, encode: bool) -> Result<()> {
    let model = BpeModel::load(&args.model)?;
    let lines = read_input_lines(&args.input)?;
    let mut out = Vec::with_capacity(lines.len());
    for line in &lines {
        if encode {
            let ids: Vec<String> = model.encode(line).iter().map(u32::to_string).collect();
            out.push(ids.join(" "));
        } else {
            let ids: Vec<u32> = line
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Data(format!("bad token id {t:?}"))))
                .collect::<Result<_>>()?;
            out.push(model.decode(&ids)?);
        }
    }
    write_output_lines(&args.output, &out)
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainJob {
    model: ModelConfig,
    train: TrainConfig,
    data: TrainJobData,
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainJobData {
    train_src: PathBuf,
    train_tgt: PathBuf,
    valid_src: PathBuf,
    valid_tgt: PathBuf,
    src_bpe: PathBuf,
    tgt_bpe: PathBuf,
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| Error::io(&args.config, e))?;
    let mut job: TrainJob =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad train config: {e}")))?;
    if let Some(seed) = env_seed()? {
        job.train.seed = seed;
    }
    let src_bpe = BpeModel::load(&job.data.src_bpe)?;
    let tgt_bpe = BpeModel::load(&job.data.tgt_bpe)?;
    if job.model.src_vocab != src_bpe.vocab_len() || job.model.tgt_vocab != tgt_bpe.vocab_len() {
        return Err(Error::Config(format!(
            "model vocab sizes ({}, {}) do not match tokenizers ({}, {})",
            job.model.src_vocab,
            job.model.tgt_vocab,
            src_bpe.vocab_len(),
            tgt_bpe.vocab_len()
        )));
    }

    let encode_pairs = |src: &Path, tgt: &Path| -> Result<Vec<(Vec<u32>, Vec<u32>)>> {
        let corpus = load_parallel(src, tgt, "src", "tgt")?;
        Ok(corpus
            .pairs
            .iter()
            .map(|p| (src_bpe.encode(&p.source), tgt_bpe.encode(&p.target)))
            .collect())
    };
    let mut data = TokenizedDataset {
        train: encode_pairs(&job.data.train_src, &job.data.train_tgt)?,
        valid: encode_pairs(&job.data.valid_src, &job.data.valid_tgt)?,
    };
    let dropped = data.enforce_max_len(job.model.max_seq_len);
    if dropped > 0 {
        eprintln!("dropped {dropped} pairs exceeding max_seq_len {}", job.model.max_seq_len);
    }

    let outcome = train(&job.model, &data, &job.train)?;
    let best = &outcome.checkpoint;
    println!(
        "best checkpoint: epoch {} valid_loss {:.6} -> {}",
        best.epoch,
        best.validation_loss,
        job.train.checkpoint_dir.join("best.ckpt").display()
    );
    Ok(())
}

fn cmd_translate(args: TranslateArgs) -> Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let src_bpe = BpeModel::load(&args.src_bpe)?;
    let tgt_bpe = BpeModel::load(&args.tgt_bpe)?;
    let tag = args.tag.as_deref().map(LanguageTag::parse).transpose()?;
    let decode = DecodeConfig {
        beam_size: args.beam,
        max_len_factor: args.max_len_factor,
        max_len_offset: args.max_len_offset,
    };
    let lines = read_input_lines(&args.input)?;
    let mut out = Vec::with_capacity(lines.len());
    for line in &lines {
        out.push(translate(&checkpoint, &src_bpe, &tgt_bpe, line, tag.as_ref(), &decode)?);
    }
    write_output_lines(&args.output, &out)
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let selected: Vec<&str> = args.metrics.split(',').map(str::trim).filter(|m| !m.is_empty()).collect();
    for metric in &selected {
        if !["bleu", "chrf", "ter"].contains(metric) {
            return Err(Error::Config(format!(
                "unknown metric {metric:?}; expected bleu, chrf, ter"
            )));
        }
    }
    let reports = evaluate_corpus(
        &args.hyp,
        &args.reference,
        args.labels.as_deref(),
        &args.system_name,
        &format!("metrics={}", args.metrics),
    )?;
    if args.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&reports).map_err(|e| Error::Data(e.to_string()))?
        );
    } else {
        print!("{}", metric_table(&reports, &selected));
    }
    Ok(())
}

fn metric_table(reports: &[EvalReport], selected: &[&str]) -> String {
    let mut header = vec!["Model".to_string(), "Target".to_string()];
    for m in selected {
        header.push(m.to_uppercase());
    }
    header.push("Sentences".to_string());
    let mut rows = vec![header];
    for r in reports {
        let mut row = vec![r.system_name.clone(), r.target_label.clone()];
        for m in selected {
            let value = match *m {
                "bleu" => r.bleu,
                "chrf" => r.chrf,
                _ => r.ter,
            };
            row.push(format!("{value:.1}"));
        }
        row.push(r.sentence_count.to_string());
        rows.push(row);
    }
    let cols = rows[0].len();
    let mut widths = vec![0usize; cols];
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (cell, w) in row.iter().zip(&widths) {
            line.push_str(&format!("{cell:<w$}  "));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = env_seed()? {
        cfg.train.seed = seed;
    }
    if let Some(dir) = env_output_dir() {
        cfg.output_dir = dir;
    }
    Ok(cfg)
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let cfg = load_experiment_config(&args.config)?;
    let report = run_experiment(&cfg, args.parallel_bilinguals)?;
    print!("{}", report.to_markdown());
    println!(
        "wrote {} and {}",
        cfg.output_dir.join("report.md").display(),
        cfg.output_dir.join("report.json").display()
    );
    Ok(())
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    let cfg = load_experiment_config(&args.config)?;
    let prepared = prepare_pairs(&cfg)?;
    print!("{}", format_size_table(&dataset_stats(&prepared)));
    Ok(())
}
