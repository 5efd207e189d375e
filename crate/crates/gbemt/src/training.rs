//! Loss, optimizer, and the epoch loop.
//!
//! Each epoch shuffles sentence order with a seed derived from the run
//! seed, groups sentences into fixed-size batches padded to the batch
//! maximum, runs a teacher-forced forward (BOS-prefixed decoder input,
//! EOS-suffixed targets), backpropagates, and applies one Adam update at
//! the Noam learning rate. After every epoch the validation loss is
//! computed in eval mode and the best state checkpointed. Given one seed
//! the whole run is deterministic.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::bpe::{BOS_ID, EOS_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::model::{forward_on_tape, Checkpoint, Dropout, ModelConfig, ModelVars, Parameters, TokenMatrix};
use crate::rng::{derive_seed, SplitMix64};
use crate::tensor::{Tape, Tensor};

/// Training regime.
///
/// `learning_rate` scales the Noam schedule (1.0 reproduces the canonical
/// recipe); `batch_size_sentences` counts sentences per update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size_sentences: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
}

impl TrainConfig {
    /// Desk-scale defaults: small batches and a short warmup.
    pub fn desk(seed: u64, checkpoint_dir: impl Into<PathBuf>) -> Self {
        TrainConfig {
            batch_size_sentences: 16,
            epochs: 10,
            learning_rate: 1.0,
            warmup_steps: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            label_smoothing: 0.1,
            seed,
            checkpoint_dir: checkpoint_dir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size_sentences < 1 {
            return Err(Error::Config("batch_size_sentences must be at least 1".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config("label_smoothing must lie in [0, 1)".into()));
        }
        if self.warmup_steps == 0 {
            return Err(Error::Config("warmup_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Mean label-smoothed cross entropy over non-pad target positions.
///
/// Per token the loss is `-sum_k q_k log p_k` with
/// `q = (1 - eps) * one_hot + eps / V`.
pub fn cross_entropy(
    logits: &Tensor,
    targets: &TokenMatrix,
    pad_id: u32,
    label_smoothing: f64,
) -> Result<f64> {
    let (b, t, v) = match logits.shape() {
        [b, t, v] => (*b, *t, *v),
        other => {
            return Err(Error::Shape(format!(
                "cross_entropy expects B x T x V logits, got {other:?}"
            )))
        }
    };
    if targets.rows() != b || targets.cols() != t {
        return Err(Error::Shape(format!(
            "targets {}x{} do not match logits {b}x{t}",
            targets.rows(),
            targets.cols()
        )));
    }
    let flat = Tensor::new(vec![b * t, v], logits.data().to_vec())?;
    let mut tape = Tape::new();
    let node = tape.leaf(flat, false);
    let (loss, counted) = tape.cross_entropy_sum(node, targets.flat(), pad_id, label_smoothing)?;
    Ok(tape.value(loss).item()? / counted as f64)
}

/// Adam first/second moment estimates, keyed like the parameters.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    pub step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl OptimizerState {
    pub fn new(params: &Parameters, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = |p: &Parameters| {
            p.iter()
                .map(|(name, t)| (name.clone(), Tensor::zeros(t.shape().to_vec())))
                .collect()
        };
        OptimizerState {
            step: 0,
            beta1,
            beta2,
            eps,
            m: zeros(params),
            v: zeros(params),
        }
    }
}

/// One Adam update at learning rate `lr_t`:
/// `m <- b1 m + (1-b1) g`, `v <- b2 v + (1-b2) g^2`, bias-corrected, then
/// `theta <- theta - lr_t * m_hat / (sqrt(v_hat) + eps)`. Parameters
/// missing from `grads` are left untouched.
pub fn adam_step(
    params: &mut Parameters,
    grads: &BTreeMap<String, Tensor>,
    state: &mut OptimizerState,
    lr_t: f64,
) -> Result<()> {
    state.step += 1;
    let bias1 = 1.0 - state.beta1.powi(state.step as i32);
    let bias2 = 1.0 - state.beta2.powi(state.step as i32);
    for (name, grad) in grads {
        let theta = params.get_mut(name);
        if theta.shape() != grad.shape() {
            return Err(Error::Shape(format!(
                "gradient for {name} has shape {:?}, parameter is {:?}",
                grad.shape(),
                theta.shape()
            )));
        }
        let m = state.m.get_mut(name).expect("state mirrors parameters");
        let v = state.v.get_mut(name).expect("state mirrors parameters");
        for ((t, &g), (m, v)) in theta
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()))
        {
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *t -= lr_t * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Noam learning rate: `d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn lr_schedule(step: u64, d_model: usize, warmup: usize) -> f64 {
    assert!(step >= 1, "schedule starts at step 1");
    let step = step as f64;
    let warmup = warmup as f64;
    (d_model as f64).powf(-0.5) * (step.powf(-0.5)).min(step * warmup.powf(-1.5))
}

/// Tokenized sentence pairs: source ids and target ids without BOS/EOS
/// (the batcher adds them).
#[derive(Clone, Debug, Default)]
pub struct TokenizedDataset {
    pub train: Vec<(Vec<u32>, Vec<u32>)>,
    pub valid: Vec<(Vec<u32>, Vec<u32>)>,
}

impl TokenizedDataset {
    /// Drop pairs whose source or BOS/EOS-extended target would exceed the
    /// model's maximum sequence length. Returns how many were dropped.
    pub fn enforce_max_len(&mut self, max_seq_len: usize) -> usize {
        let fits = |pair: &(Vec<u32>, Vec<u32>)| {
            pair.0.len() <= max_seq_len && pair.1.len() + 1 <= max_seq_len
        };
        let before = self.train.len() + self.valid.len();
        self.train.retain(fits);
        self.valid.retain(fits);
        before - self.train.len() - self.valid.len()
    }
}

/// One epoch line of the tab-separated training log.
#[derive(Clone, Debug, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// Training outcome: the best checkpoint by validation loss plus the
/// per-epoch log.
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochStats>,
}

fn batch_of(pairs: &[&(Vec<u32>, Vec<u32>)]) -> (TokenMatrix, TokenMatrix, TokenMatrix) {
    let src_rows: Vec<Vec<u32>> = pairs.iter().map(|(s, _)| s.clone()).collect();
    let tgt_in_rows: Vec<Vec<u32>> = pairs
        .iter()
        .map(|(_, t)| {
            let mut row = Vec::with_capacity(t.len() + 1);
            row.push(BOS_ID);
            row.extend_from_slice(t);
            row
        })
        .collect();
    let tgt_out_rows: Vec<Vec<u32>> = pairs
        .iter()
        .map(|(_, t)| {
            let mut row = Vec::with_capacity(t.len() + 1);
            row.extend_from_slice(t);
            row.push(EOS_ID);
            row
        })
        .collect();
    (
        TokenMatrix::from_rows(&src_rows),
        TokenMatrix::from_rows(&tgt_in_rows),
        TokenMatrix::from_rows(&tgt_out_rows),
    )
}

fn check_vocab(cfg: &ModelConfig, data: &TokenizedDataset) -> Result<()> {
    let max_src = data
        .train
        .iter()
        .chain(&data.valid)
        .flat_map(|(s, _)| s.iter())
        .max()
        .copied()
        .unwrap_or(0);
    let max_tgt = data
        .train
        .iter()
        .chain(&data.valid)
        .flat_map(|(_, t)| t.iter())
        .max()
        .copied()
        .unwrap_or(0);
    if max_src as usize >= cfg.src_vocab || max_tgt as usize >= cfg.tgt_vocab {
        return Err(Error::Config(format!(
            "tokenizer ids exceed model vocab sizes: max source id {max_src} vs src_vocab {}, \
             max target id {max_tgt} vs tgt_vocab {}",
            cfg.src_vocab, cfg.tgt_vocab
        )));
    }
    Ok(())
}

/// Teacher-forced mean loss of one batch in eval mode, values only.
pub fn batch_loss(
    cfg: &ModelConfig,
    params: &Parameters,
    batch: &[(Vec<u32>, Vec<u32>)],
    label_smoothing: f64,
) -> Result<f64> {
    let refs: Vec<&(Vec<u32>, Vec<u32>)> = batch.iter().collect();
    let (src, tgt_in, tgt_out) = batch_of(&refs);
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params, false);
    let logits = forward_on_tape(cfg, &mut tape, &vars, &src, &tgt_in, &mut Dropout::eval())?;
    let (sum, tokens) = tape.cross_entropy_sum(logits, tgt_out.flat(), PAD_ID, label_smoothing)?;
    Ok(tape.value(sum).item()? / tokens as f64)
}

/// [`batch_loss`] plus the analytic gradient of every parameter tensor
/// (no dropout), for optimizer steps outside [`train`] and for gradient
/// checking.
pub fn loss_and_gradients(
    cfg: &ModelConfig,
    params: &Parameters,
    batch: &[(Vec<u32>, Vec<u32>)],
    label_smoothing: f64,
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let refs: Vec<&(Vec<u32>, Vec<u32>)> = batch.iter().collect();
    let (src, tgt_in, tgt_out) = batch_of(&refs);
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params, true);
    let logits = forward_on_tape(cfg, &mut tape, &vars, &src, &tgt_in, &mut Dropout::eval())?;
    let (sum, tokens) = tape.cross_entropy_sum(logits, tgt_out.flat(), PAD_ID, label_smoothing)?;
    let loss = tape.scale(sum, 1.0 / tokens as f64);
    let value = tape.value(loss).item()?;
    let mut grads = tape.backward(loss)?;
    let mut map = BTreeMap::new();
    for (name, var) in vars.iter() {
        if let Some(g) = grads.take(*var) {
            map.insert(name.clone(), g);
        }
    }
    Ok((value, map))
}

/// Average per-token validation loss in eval mode. Read-only on the
/// parameters.
pub fn validation_loss(
    cfg: &ModelConfig,
    params: &Parameters,
    valid: &[(Vec<u32>, Vec<u32>)],
    batch_size: usize,
    label_smoothing: f64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in valid.chunks(batch_size.max(1)) {
        let refs: Vec<&(Vec<u32>, Vec<u32>)> = chunk.iter().collect();
        let (src, tgt_in, tgt_out) = batch_of(&refs);
        let mut tape = Tape::new();
        let vars = ModelVars::register(&mut tape, params, false);
        let logits = forward_on_tape(cfg, &mut tape, &vars, &src, &tgt_in, &mut Dropout::eval())?;
        let (loss, n) = tape.cross_entropy_sum(logits, tgt_out.flat(), PAD_ID, label_smoothing)?;
        total += tape.value(loss).item()?;
        count += n;
    }
    if count == 0 {
        return Err(Error::DegenerateBatch);
    }
    Ok(total / count as f64)
}

/// Train a model and return the best checkpoint by validation loss.
///
/// Writes `best.ckpt` and an incrementally updated `train.log`
/// (`epoch\ttrain_loss\tvalid_loss\tlr\tseconds`) into
/// `train_cfg.checkpoint_dir`.
pub fn train(model_cfg: &ModelConfig, data: &TokenizedDataset, train_cfg: &TrainConfig) -> Result<TrainOutcome> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(Error::Config(
            "train and validation sets must be non-empty".into(),
        ));
    }
    check_vocab(model_cfg, data)?;

    std::fs::create_dir_all(&train_cfg.checkpoint_dir)
        .map_err(|e| Error::io(&train_cfg.checkpoint_dir, e))?;
    let log_path = train_cfg.checkpoint_dir.join("train.log");
    let mut log_file = std::fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;

    let mut params = Parameters::init(model_cfg, derive_seed(train_cfg.seed, "init"));
    let mut opt = OptimizerState::new(
        &params,
        train_cfg.adam_beta1,
        train_cfg.adam_beta2,
        train_cfg.adam_eps,
    );
    let mut dropout_rng = SplitMix64::new(derive_seed(train_cfg.seed, "dropout"));

    let mut best: Option<Checkpoint> = None;
    let mut log = Vec::with_capacity(train_cfg.epochs);
    let mut step = 0u64;

    for epoch in 1..=train_cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        let mut shuffle_rng = SplitMix64::new(derive_seed(train_cfg.seed, &format!("shuffle/{epoch}")));
        shuffle_rng.shuffle(&mut order);

        let mut epoch_loss_sum = 0.0;
        let mut epoch_tokens = 0usize;
        let mut lr_t = 0.0;
        for batch_idx in order.chunks(train_cfg.batch_size_sentences) {
            let pairs: Vec<&(Vec<u32>, Vec<u32>)> = batch_idx.iter().map(|&i| &data.train[i]).collect();
            let (src, tgt_in, tgt_out) = batch_of(&pairs);

            let mut tape = Tape::new();
            let vars = ModelVars::register(&mut tape, &params, true);
            let mut dropout = Dropout::train(model_cfg.dropout, &mut dropout_rng);
            let logits = forward_on_tape(model_cfg, &mut tape, &vars, &src, &tgt_in, &mut dropout)?;
            let (loss_sum, tokens) =
                tape.cross_entropy_sum(logits, tgt_out.flat(), PAD_ID, train_cfg.label_smoothing)?;
            let loss = tape.scale(loss_sum, 1.0 / tokens as f64);

            let loss_value = tape.value(loss).item()?;
            if !loss_value.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            epoch_loss_sum += loss_value * tokens as f64;
            epoch_tokens += tokens;

            let mut grads = tape.backward(loss)?;
            let mut grad_map = BTreeMap::new();
            for (name, var) in vars.iter() {
                if let Some(g) = grads.take(*var) {
                    grad_map.insert(name.clone(), g);
                }
            }
            step += 1;
            lr_t = train_cfg.learning_rate * lr_schedule(step, model_cfg.d_model, train_cfg.warmup_steps);
            adam_step(&mut params, &grad_map, &mut opt, lr_t)?;
        }

        let valid_loss = validation_loss(
            model_cfg,
            &params,
            &data.valid,
            train_cfg.batch_size_sentences,
            train_cfg.label_smoothing,
        )?;
        let improved = best
            .as_ref()
            .map_or(true, |b| valid_loss < b.validation_loss);
        if improved {
            let ckpt = Checkpoint {
                config: model_cfg.clone(),
                parameters: params.clone(),
                epoch: epoch as u32,
                validation_loss: valid_loss,
            };
            ckpt.save(train_cfg.checkpoint_dir.join("best.ckpt"))?;
            best = Some(ckpt);
        }

        let stats = EpochStats {
            epoch,
            train_loss: epoch_loss_sum / epoch_tokens.max(1) as f64,
            valid_loss,
            lr: lr_t,
            seconds: started.elapsed().as_secs_f64(),
        };
        writeln!(
            log_file,
            "{}\t{:.6}\t{:.6}\t{:.8}\t{:.3}",
            stats.epoch, stats.train_loss, stats.valid_loss, stats.lr, stats.seconds
        )
        .map_err(|e| Error::io(&log_path, e))?;
        log_file.flush().map_err(|e| Error::io(&log_path, e))?;
        log.push(stats);
    }

    Ok(TrainOutcome {
        checkpoint: best.expect("epochs >= 1 guarantees a checkpoint"),
        log,
    })
}
