//! The bilingual-vs-multilingual comparison harness.
//!
//! One experiment trains a bilingual model per language pair plus a single
//! tag-conditioned multilingual model on the merged, tagged data, under the
//! same epoch budget, evaluates everything on the shared per-pair test
//! sets, and writes `report.md` / `report.json` into the output directory.
//! The score table has one row per bilingual model, a pooled multilingual
//! row, and one multilingual row per target language; a dataset-size table
//! accompanies it. Given one seed the whole run, including the reports and
//! checkpoints, is byte-identical across reruns.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bpe::BpeModel;
use crate::corpus::{
    filter_corpus, load_parallel, subsample, split, tag_and_merge, FilterReport, LanguageTag,
    ParallelCorpus,
};
use crate::decoding::{translate, DecodeConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_labeled, format_report_table, EvalReport};
use crate::model::{Checkpoint, ModelConfig};
use crate::rng::derive_seed;
use crate::training::{train, TokenizedDataset, TrainConfig};

/// Paper-scale preset values; desk-scale runs use much smaller ones.
pub mod presets {
    /// BPE vocabulary for the Gbe side of a bilingual model.
    pub const BPE_VOCAB_GBE_BILINGUAL: usize = 4_000;
    /// BPE vocabulary for English in either setup.
    pub const BPE_VOCAB_ENGLISH: usize = 10_000;
    /// Shared Gbe BPE vocabulary in the multilingual model.
    pub const BPE_VOCAB_GBE_MULTILINGUAL: usize = 6_000;
    /// Sentences per batch for bilingual training.
    pub const BATCH_SIZE_BILINGUAL: usize = 300;
    /// Sentences per batch for multilingual training.
    pub const BATCH_SIZE_MULTILINGUAL: usize = 400;
    /// Common epoch budget keeping the comparison fair.
    pub const TRAIN_EPOCHS: usize = 30;
    /// Validation sample per language pair.
    pub const VALIDATION_SIZE: usize = 1_000;
    /// Training-set cap for the larger pair.
    pub const SUBSAMPLE_LIMIT: usize = 100_000;
}

/// One language pair: line-aligned training files, a held-out test set,
/// and the tag that selects this target language in the multilingual
/// model.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    pub name: String,
    pub src_file: PathBuf,
    pub tgt_file: PathBuf,
    pub test_src_file: PathBuf,
    pub test_tgt_file: PathBuf,
    pub tag: String,
    /// Optional extra monolingual target text used only when training this
    /// pair's bilingual target BPE model.
    #[serde(default)]
    pub extra_bpe_tgt_file: Option<PathBuf>,
}

/// Corpus preparation knobs.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Cap on training pairs after filtering (uniform random subsample).
    #[serde(default)]
    pub subsample: Option<usize>,
    pub validation_size: usize,
}

/// BPE vocabulary budgets.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpeSizes {
    pub source_vocab_size: usize,
    pub target_vocab_size: usize,
}

/// Full experiment description, loaded from JSON with unknown keys
/// rejected.
///
/// `model.src_vocab` / `model.tgt_vocab` are overridden per model from the
/// trained tokenizers; `train.seed` is the master seed every component
/// seed is derived from, and `train.checkpoint_dir` is replaced by a
/// per-model directory under `output_dir`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pairs: Vec<PairConfig>,
    pub source_lang: String,
    pub data: DataConfig,
    pub bpe: BpeSizes,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("bad experiment config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_json(&text)
    }
}

/// A pair after loading, filtering, subsampling, and splitting.
pub struct PreparedPair {
    pub name: String,
    pub tag: LanguageTag,
    pub target_lang: String,
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test: ParallelCorpus,
    pub filter_report: FilterReport,
}

/// One row of the dataset-size table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeRow {
    pub model: String,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Filter bookkeeping per pair, kept in the report for reproducibility.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairFilterReport {
    pub name: String,
    pub report: FilterReport,
}

/// Machine-readable experiment outcome; serialized as `report.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub decoding_settings: String,
    pub dataset_sizes: Vec<SizeRow>,
    pub filter_reports: Vec<PairFilterReport>,
    pub scores: Vec<EvalReport>,
}

/// Validate an experiment configuration without touching the filesystem
/// beyond read-only existence checks.
pub fn preflight(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.pairs.len() < 2 {
        return Err(Error::Config(format!(
            "a multilingual experiment needs at least 2 pairs, got {}",
            cfg.pairs.len()
        )));
    }
    let mut tags = BTreeSet::new();
    for pair in &cfg.pairs {
        let tag = LanguageTag::parse(&pair.tag)?;
        if !tags.insert(tag.token().to_string()) {
            return Err(Error::Config(format!("tag {} used by more than one pair", pair.tag)));
        }
        for path in [
            &pair.src_file,
            &pair.tgt_file,
            &pair.test_src_file,
            &pair.test_tgt_file,
        ] {
            if !path.is_file() {
                return Err(Error::Data(format!("missing input file {}", path.display())));
            }
        }
        if let Some(extra) = &pair.extra_bpe_tgt_file {
            if !extra.is_file() {
                return Err(Error::Data(format!("missing input file {}", extra.display())));
            }
        }
    }
    if cfg.data.validation_size == 0 {
        return Err(Error::Config("validation_size must be at least 1".into()));
    }
    if cfg.decode.beam_size == 0 {
        return Err(Error::Config("decode.beam_size must be at least 1".into()));
    }
    // Vocab sizes are filled in per model from the trained tokenizers.
    cfg.model.validate_architecture()?;
    cfg.train.validate()?;
    Ok(())
}

/// Load, filter against the pair's test set, subsample, and split each
/// configured pair. Read-only.
pub fn prepare_pairs(cfg: &ExperimentConfig) -> Result<Vec<PreparedPair>> {
    let master = cfg.train.seed;
    let mut prepared = Vec::with_capacity(cfg.pairs.len());
    for pair in &cfg.pairs {
        let tag = LanguageTag::parse(&pair.tag)?;
        let target_lang = tag.lang_code().to_string();
        let full = load_parallel(&pair.src_file, &pair.tgt_file, &cfg.source_lang, &target_lang)?;
        let test = load_parallel(
            &pair.test_src_file,
            &pair.test_tgt_file,
            &cfg.source_lang,
            &target_lang,
        )?;
        let (clean, filter_report) = filter_corpus(&full, &test);
        let capped = match cfg.data.subsample {
            Some(n) => subsample(
                &clean,
                n,
                derive_seed(master, &format!("data/{}/subsample", pair.name)),
            ),
            None => clean,
        };
        let (train_split, valid_split) = split(
            &capped,
            cfg.data.validation_size,
            derive_seed(master, &format!("data/{}/split", pair.name)),
        )?;
        prepared.push(PreparedPair {
            name: pair.name.clone(),
            tag,
            target_lang,
            train: train_split,
            valid: valid_split,
            test,
            filter_report,
        });
    }
    Ok(prepared)
}

/// Per-model train/validation/test counts plus a multilingual row holding
/// the column-wise sums.
pub fn dataset_stats(prepared: &[PreparedPair]) -> Vec<SizeRow> {
    let mut rows: Vec<SizeRow> = prepared
        .iter()
        .map(|p| SizeRow {
            model: p.name.clone(),
            train: p.train.len(),
            validation: p.valid.len(),
            test: p.test.len(),
        })
        .collect();
    rows.push(SizeRow {
        model: "multilingual".into(),
        train: rows.iter().map(|r| r.train).sum(),
        validation: rows.iter().map(|r| r.validation).sum(),
        test: rows.iter().map(|r| r.test).sum(),
    });
    rows
}

/// Aligned text table for the dataset sizes.
pub fn format_size_table(rows: &[SizeRow]) -> String {
    let mut table = vec![[
        "Model".to_string(),
        "Train".to_string(),
        "Validation".to_string(),
        "Test".to_string(),
    ]];
    for r in rows {
        table.push([
            r.model.clone(),
            r.train.to_string(),
            r.validation.to_string(),
            r.test.to_string(),
        ]);
    }
    let mut widths = [0usize; 4];
    for row in &table {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in table {
        let mut line = String::new();
        for (cell, w) in row.iter().zip(widths) {
            line.push_str(&format!("{cell:<w$}  "));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn tokenize_dataset(
    src_bpe: &BpeModel,
    tgt_bpe: &BpeModel,
    train: &ParallelCorpus,
    valid: &ParallelCorpus,
    max_seq_len: usize,
) -> TokenizedDataset {
    let encode = |corpus: &ParallelCorpus| {
        corpus
            .pairs
            .iter()
            .map(|p| (src_bpe.encode(&p.source), tgt_bpe.encode(&p.target)))
            .collect()
    };
    let mut data = TokenizedDataset {
        train: encode(train),
        valid: encode(valid),
    };
    data.enforce_max_len(max_seq_len);
    data
}

fn model_config_for(cfg: &ExperimentConfig, src_bpe: &BpeModel, tgt_bpe: &BpeModel) -> ModelConfig {
    ModelConfig {
        src_vocab: src_bpe.vocab_len(),
        tgt_vocab: tgt_bpe.vocab_len(),
        ..cfg.model.clone()
    }
}

fn train_config_for(cfg: &ExperimentConfig, model_name: &str) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.train.seed, &format!("model/{model_name}")),
        checkpoint_dir: cfg.output_dir.join(model_name),
        ..cfg.train.clone()
    }
}

struct TrainedModel {
    checkpoint: Checkpoint,
    src_bpe: BpeModel,
    tgt_bpe: BpeModel,
}

fn fit(
    cfg: &ExperimentConfig,
    model_name: &str,
    src_bpe: BpeModel,
    tgt_bpe: BpeModel,
    train_corpus: &ParallelCorpus,
    valid_corpus: &ParallelCorpus,
) -> Result<TrainedModel> {
    let data = tokenize_dataset(&src_bpe, &tgt_bpe, train_corpus, valid_corpus, cfg.model.max_seq_len);
    let model_cfg = model_config_for(cfg, &src_bpe, &tgt_bpe);
    let train_cfg = train_config_for(cfg, model_name);
    std::fs::create_dir_all(&train_cfg.checkpoint_dir)
        .map_err(|e| Error::io(&train_cfg.checkpoint_dir, e))?;
    src_bpe.save(train_cfg.checkpoint_dir.join("src.bpe"))?;
    tgt_bpe.save(train_cfg.checkpoint_dir.join("tgt.bpe"))?;
    train(&model_cfg, &data, &train_cfg)?;
    // Decode from the serialized weights so artifacts and reports agree.
    let checkpoint = Checkpoint::load(train_cfg.checkpoint_dir.join("best.ckpt"))?;
    Ok(TrainedModel {
        checkpoint,
        src_bpe,
        tgt_bpe,
    })
}

fn decode_test_set(
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    test: &ParallelCorpus,
    tag: Option<&LanguageTag>,
) -> Result<Vec<String>> {
    test.pairs
        .iter()
        .map(|p| {
            translate(
                &model.checkpoint,
                &model.src_bpe,
                &model.tgt_bpe,
                &p.source,
                tag,
                &cfg.decode,
            )
        })
        .collect()
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn run_bilingual(cfg: &ExperimentConfig, pair: &PreparedPair, settings: &str) -> Result<EvalReport> {
    let src_bpe = BpeModel::train(pair.train.sources(), cfg.bpe.source_vocab_size, &BTreeSet::new())?;
    let pair_cfg = cfg
        .pairs
        .iter()
        .find(|p| p.name == pair.name)
        .expect("prepared pairs mirror the config");
    let mut tgt_lines: Vec<String> = pair.train.targets().map(str::to_string).collect();
    if let Some(extra) = &pair_cfg.extra_bpe_tgt_file {
        tgt_lines.extend(crate::corpus::read_lines(extra)?);
    }
    let tgt_bpe = BpeModel::train(tgt_lines.iter(), cfg.bpe.target_vocab_size, &BTreeSet::new())?;

    let model = fit(cfg, &pair.name, src_bpe, tgt_bpe, &pair.train, &pair.valid)?;
    let hyps = decode_test_set(cfg, &model, &pair.test, None)?;
    write_lines(&cfg.output_dir.join(&pair.name).join("test.hyp"), &hyps)?;

    let refs: Vec<String> = pair.test.targets().map(str::to_string).collect();
    let mut reports = evaluate_labeled(&hyps, &refs, None, &pair.name, settings)?;
    let mut report = reports.remove(0);
    report.target_label = pair.target_lang.clone();
    Ok(report)
}

fn run_multilingual(
    cfg: &ExperimentConfig,
    prepared: &[PreparedPair],
    settings: &str,
) -> Result<Vec<EvalReport>> {
    let tagged_train = tag_and_merge(
        &prepared
            .iter()
            .map(|p| (p.train.clone(), p.tag.clone()))
            .collect::<Vec<_>>(),
    )?;
    let tagged_valid = tag_and_merge(
        &prepared
            .iter()
            .map(|p| (p.valid.clone(), p.tag.clone()))
            .collect::<Vec<_>>(),
    )?;
    let protected: BTreeSet<String> = prepared.iter().map(|p| p.tag.token().to_string()).collect();
    let src_bpe = BpeModel::train(tagged_train.sources(), cfg.bpe.source_vocab_size, &protected)?;
    let tgt_bpe = BpeModel::train(tagged_train.targets(), cfg.bpe.target_vocab_size, &BTreeSet::new())?;

    let model = fit(cfg, "multilingual", src_bpe, tgt_bpe, &tagged_train, &tagged_valid)?;

    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    let mut labels = Vec::new();
    for pair in prepared {
        let pair_hyps = decode_test_set(cfg, &model, &pair.test, Some(&pair.tag))?;
        write_lines(
            &cfg.output_dir
                .join("multilingual")
                .join(format!("test.{}.hyp", pair.name)),
            &pair_hyps,
        )?;
        refs.extend(pair.test.targets().map(str::to_string));
        labels.extend(std::iter::repeat_n(pair.target_lang.clone(), pair_hyps.len()));
        hyps.extend(pair_hyps);
    }
    let reports = evaluate_labeled(&hyps, &refs, Some(&labels), "multilingual", settings)?;
    // Pooled row first, then per-language rows, mirroring the comparison
    // table layout.
    let mut ordered = Vec::with_capacity(reports.len());
    let mut per_lang = reports;
    if per_lang.len() > 1 {
        let pooled = per_lang.pop().expect("pooled row exists for >1 label");
        ordered.push(pooled);
    }
    ordered.extend(per_lang);
    Ok(ordered)
}

impl ExperimentReport {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("# Experiment report\n\n");
        out.push_str(&format!(
            "Seed: {}\nDecoding: {}\n\n## Dataset sizes\n\n```\n{}```\n\n## Scores\n\n```\n{}```\n\n",
            self.seed,
            self.decoding_settings,
            format_size_table(&self.dataset_sizes),
            format_report_table(&self.scores),
        ));
        out.push_str("## Reproducibility\n\n");
        for row in &self.scores {
            out.push_str(&format!(
                "- {} / {}: {}\n",
                row.system_name, row.target_label, row.decoding_settings
            ));
        }
        out.push_str("\n## Filtering\n\n");
        for pf in &self.filter_reports {
            out.push_str(&format!("### {}\n\n```\n{}```\n\n", pf.name, pf.report.to_text()));
        }
        out
    }
}

/// Run the full comparison: every bilingual model plus the tagged
/// multilingual model under one budget, evaluated on the shared test
/// splits. Writes `report.md` and `report.json` plus per-model artifacts
/// (checkpoint, tokenizers, hypotheses, training log) under `output_dir`.
///
/// With `parallel_bilinguals` the bilingual trainings run concurrently;
/// results are byte-identical either way because every model derives its
/// own seeds.
pub fn run_experiment(cfg: &ExperimentConfig, parallel_bilinguals: bool) -> Result<ExperimentReport> {
    preflight(cfg)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let prepared = prepare_pairs(cfg)?;
    let settings = cfg.decode.describe(cfg.train.seed);

    let bilingual_reports: Vec<EvalReport> = if parallel_bilinguals && prepared.len() > 1 {
        let results: Vec<Result<EvalReport>> = std::thread::scope(|scope| {
            let handles: Vec<_> = prepared
                .iter()
                .map(|pair| {
                    let settings = settings.as_str();
                    scope.spawn(move || run_bilingual(cfg, pair, settings))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Training("bilingual training thread panicked".into())))
                })
                .collect()
        });
        results.into_iter().collect::<Result<Vec<_>>>()?
    } else {
        prepared
            .iter()
            .map(|pair| run_bilingual(cfg, pair, &settings))
            .collect::<Result<Vec<_>>>()?
    };

    let multilingual_reports = run_multilingual(cfg, &prepared, &settings)?;

    let mut scores = bilingual_reports;
    scores.extend(multilingual_reports);

    let report = ExperimentReport {
        seed: cfg.train.seed,
        decoding_settings: settings,
        dataset_sizes: dataset_stats(&prepared),
        filter_reports: prepared
            .iter()
            .map(|p| PairFilterReport {
                name: p.name.clone(),
                report: p.filter_report,
            })
            .collect(),
        scores,
    };

    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(cfg.output_dir.join("report.json"), json.as_bytes())
        .map_err(|e| Error::io(cfg.output_dir.join("report.json"), e))?;
    std::fs::write(cfg.output_dir.join("report.md"), report.to_markdown())
        .map_err(|e| Error::io(cfg.output_dir.join("report.md"), e))?;
    Ok(report)
}
