//! Transformer encoder-decoder with post-norm residual blocks.
//!
//! The architecture follows the classic Base layout: scaled embeddings plus
//! sinusoidal positional encodings, `num_layers` encoder blocks (self
//! attention, add & norm, feed-forward, add & norm) and `num_layers`
//! decoder blocks (masked self attention, cross attention, feed-forward,
//! each with add & norm), then a projection to target vocabulary logits
//! that is weight-tied to the target embedding by default.
//!
//! All math is recorded on a [`Tape`], so training gradients and eval
//! forwards share one implementation.

mod checkpoint;

pub use checkpoint::Checkpoint;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bpe::PAD_ID;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{BoolMat, Tape, Tensor, Var};

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-6;

/// Transformer hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub num_heads: usize,
    pub max_seq_len: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub tie_output_embedding: bool,
}

impl ModelConfig {
    /// The "Base" configuration: 6 layers, d_model 512, feed-forward 2048,
    /// 8 heads, maximum sequence length 150.
    pub fn base(src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            num_layers: 6,
            d_model: 512,
            d_ff: 2048,
            num_heads: 8,
            max_seq_len: 150,
            src_vocab,
            tgt_vocab,
            dropout: 0.1,
            label_smoothing: 0.1,
            tie_output_embedding: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_architecture()?;
        if self.src_vocab <= PAD_ID as usize || self.tgt_vocab <= crate::bpe::EOS_ID as usize {
            return Err(Error::Config("vocabulary must cover the reserved ids".into()));
        }
        Ok(())
    }

    /// [`validate`](Self::validate) minus the vocabulary checks, for
    /// configs whose vocab sizes are filled in later from tokenizers.
    pub fn validate_architecture(&self) -> Result<()> {
        if self.num_heads == 0 || self.d_model % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.max_seq_len < 2 {
            return Err(Error::Config("max_seq_len must be at least 2".into()));
        }
        if self.num_layers == 0 || self.d_model == 0 || self.d_ff == 0 {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(
                "dropout and label_smoothing must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Canonical parameter listing (name, shape) in creation order. Drives
    /// initialization, counting, and checkpoint validation.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut shapes: Vec<(String, Vec<usize>)> = Vec::new();
        shapes.push(("src_embed.weight".into(), vec![self.src_vocab, d]));
        shapes.push(("tgt_embed.weight".into(), vec![self.tgt_vocab, d]));

        let attention = |shapes: &mut Vec<(String, Vec<usize>)>, prefix: &str| {
            for proj in ["wq", "wk", "wv", "wo"] {
                shapes.push((format!("{prefix}.{proj}.weight"), vec![d, d]));
                shapes.push((format!("{prefix}.{proj}.bias"), vec![d]));
            }
        };
        let norm = |shapes: &mut Vec<(String, Vec<usize>)>, name: String| {
            shapes.push((format!("{name}.gain"), vec![d]));
            shapes.push((format!("{name}.bias"), vec![d]));
        };
        let ffn = |shapes: &mut Vec<(String, Vec<usize>)>, prefix: &str| {
            shapes.push((format!("{prefix}.ffn.w1.weight"), vec![d, self.d_ff]));
            shapes.push((format!("{prefix}.ffn.w1.bias"), vec![self.d_ff]));
            shapes.push((format!("{prefix}.ffn.w2.weight"), vec![self.d_ff, d]));
            shapes.push((format!("{prefix}.ffn.w2.bias"), vec![d]));
        };

        for i in 0..self.num_layers {
            let p = format!("encoder.{i}");
            attention(&mut shapes, &format!("{p}.self_attn"));
            norm(&mut shapes, format!("{p}.norm1"));
            ffn(&mut shapes, &p);
            norm(&mut shapes, format!("{p}.norm2"));
        }
        for i in 0..self.num_layers {
            let p = format!("decoder.{i}");
            attention(&mut shapes, &format!("{p}.self_attn"));
            norm(&mut shapes, format!("{p}.norm1"));
            attention(&mut shapes, &format!("{p}.cross_attn"));
            norm(&mut shapes, format!("{p}.norm2"));
            ffn(&mut shapes, &p);
            norm(&mut shapes, format!("{p}.norm3"));
        }
        if !self.tie_output_embedding {
            shapes.push(("output.weight".into(), vec![d, self.tgt_vocab]));
        }
        shapes.push(("output.bias".into(), vec![self.tgt_vocab]));
        shapes
    }

    /// Total scalar parameter count as a pure function of the config.
    pub fn parameter_count(&self) -> usize {
        self.parameter_shapes()
            .iter()
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum()
    }
}

/// Named parameter tensors, ordered by name.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    map: BTreeMap<String, Tensor>,
}

impl Parameters {
    /// Seeded initialization: Xavier-uniform matrices, zero biases, unit
    /// layer-norm gains. Sampling follows [`ModelConfig::parameter_shapes`]
    /// order, so a config and seed fully determine every weight.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut map = BTreeMap::new();
        for (name, shape) in cfg.parameter_shapes() {
            let tensor = if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                let data = (0..shape[0] * shape[1])
                    .map(|_| rng.uniform(-limit, limit))
                    .collect();
                Tensor::new(shape, data).expect("consistent shape")
            } else if name.ends_with(".gain") {
                Tensor::new(shape.clone(), vec![1.0; shape[0]]).expect("consistent shape")
            } else {
                Tensor::zeros(shape)
            };
            map.insert(name, tensor);
        }
        Parameters { map }
    }

    pub fn from_map(map: BTreeMap<String, Tensor>) -> Self {
        Parameters { map }
    }

    pub fn get(&self, name: &str) -> &Tensor {
        &self.map[name]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.map.get_mut(name).expect("known parameter name")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn tensor_count(&self) -> usize {
        self.map.len()
    }

    /// Verify names and shapes exactly match what `cfg` generates.
    pub fn matches_config(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = cfg.parameter_shapes();
        if expected.len() != self.map.len() {
            return Err(Error::Data(format!(
                "parameter count mismatch: config generates {}, found {}",
                expected.len(),
                self.map.len()
            )));
        }
        for (name, shape) in expected {
            match self.map.get(&name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(Error::Data(format!(
                        "parameter {name} has shape {:?}, config expects {shape:?}",
                        t.shape()
                    )))
                }
                None => return Err(Error::Data(format!("missing parameter {name}"))),
            }
        }
        Ok(())
    }
}

/// Batch of token id rows padded to a common width.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u32>,
    lengths: Vec<usize>,
}

impl TokenMatrix {
    /// Pad `rows` with `PAD_ID` to the longest row.
    pub fn from_rows(rows: &[Vec<u32>]) -> Self {
        let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            data.extend_from_slice(row);
            data.resize(data.len() + cols - row.len(), PAD_ID);
        }
        TokenMatrix {
            rows: rows.len(),
            cols,
            data,
            lengths: rows.iter().map(Vec::len).collect(),
        }
    }

    /// Pre-padded rows with explicit per-row content lengths; the slots
    /// beyond a row's length are treated as padding whatever ids they
    /// hold.
    pub fn from_padded(rows: &[Vec<u32>], lengths: &[usize]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) || rows.len() != lengths.len() {
            return Err(Error::Shape("rows must share one width, one length each".into()));
        }
        if lengths.iter().any(|&l| l > cols) {
            return Err(Error::Shape("length exceeds row width".into()));
        }
        Ok(TokenMatrix {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
            lengths: lengths.to_vec(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn flat(&self) -> &[u32] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[u32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Attention masks for one batch (`true` = attend).
pub struct BatchMasks {
    /// B x S: true at non-pad source positions.
    pub src_keys: BoolMat,
    /// Per sentence S x S encoder self-attention mask.
    pub src_self: Vec<BoolMat>,
    /// Per sentence T x T causal-and-pad decoder self-attention mask.
    pub tgt_self: Vec<BoolMat>,
    /// Per sentence T x S decoder-to-encoder mask.
    pub cross: Vec<BoolMat>,
}

/// Build padding, causal, and cross masks. Padding positions are never
/// attended; decoder self-attention is lower-triangular and non-pad.
pub fn make_masks(
    src_lengths: &[usize],
    tgt_lengths: &[usize],
    max_s: usize,
    max_t: usize,
) -> BatchMasks {
    let batch = src_lengths.len();
    let mut src_keys = BoolMat::new(batch, max_s, false);
    let mut src_self = Vec::with_capacity(batch);
    let mut tgt_self = Vec::with_capacity(batch);
    let mut cross = Vec::with_capacity(batch);
    for b in 0..batch {
        let slen = src_lengths[b].min(max_s);
        let tlen = tgt_lengths.get(b).copied().unwrap_or(0).min(max_t);
        for c in 0..slen {
            src_keys.set(b, c, true);
        }
        let mut ss = BoolMat::new(max_s, max_s, false);
        for r in 0..max_s {
            for c in 0..slen {
                ss.set(r, c, true);
            }
        }
        src_self.push(ss);
        let mut ts = BoolMat::new(max_t, max_t, false);
        let mut cr = BoolMat::new(max_t, max_s, false);
        for r in 0..tlen {
            for c in 0..=r {
                ts.set(r, c, true);
            }
            for c in 0..slen {
                cr.set(r, c, true);
            }
        }
        tgt_self.push(ts);
        cross.push(cr);
    }
    BatchMasks {
        src_keys,
        src_self,
        tgt_self,
        cross,
    }
}

/// Sinusoidal positional encoding: `sin(pos / 10000^(2i/d_model))` for even
/// dimension `2i`, `cos` for odd `2i + 1`.
pub fn positional_encoding(pos: usize, dim_index: usize, d_model: usize) -> f64 {
    let i = (dim_index / 2) as f64;
    let angle = pos as f64 / 10000f64.powf(2.0 * i / d_model as f64);
    if dim_index % 2 == 0 {
        angle.sin()
    } else {
        angle.cos()
    }
}

fn positional_rows(batch: usize, seq_len: usize, d_model: usize) -> Tensor {
    let mut row_block = Vec::with_capacity(seq_len * d_model);
    for pos in 0..seq_len {
        for dim in 0..d_model {
            row_block.push(positional_encoding(pos, dim, d_model));
        }
    }
    let mut data = Vec::with_capacity(batch * seq_len * d_model);
    for _ in 0..batch {
        data.extend_from_slice(&row_block);
    }
    Tensor::new(vec![batch * seq_len, d_model], data).expect("consistent shape")
}

/// `softmax(Q K^T / sqrt(d_k)) V` with masked scores excluded; rows whose
/// mask is entirely false produce zero vectors.
pub fn scaled_dot_attention(q: &Tensor, k: &Tensor, v: &Tensor, mask: &BoolMat) -> Result<Tensor> {
    let d_k = match q.shape() {
        [_, d] => *d,
        other => return Err(Error::Shape(format!("queries must be a matrix, got {other:?}"))),
    };
    let mut tape = Tape::new();
    let qv = tape.constant(q.clone());
    let kv = tape.constant(k.clone());
    let vv = tape.constant(v.clone());
    let scores = tape.matmul_nt(qv, kv)?;
    let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
    let weights = tape.masked_softmax_rows(scaled, mask.clone())?;
    let out = tape.matmul(weights, vv)?;
    Ok(tape.value(out).clone())
}

/// Per-row layer normalization with biased variance.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let gv = tape.constant(gain.clone());
    let bv = tape.constant(bias.clone());
    let out = tape.layer_norm_rows(xv, gv, bv, eps)?;
    Ok(tape.value(out).clone())
}

/// Dropout context: `eval` is a no-op, `train` draws inverted-dropout masks
/// from the run RNG.
pub(crate) struct Dropout<'r> {
    p: f64,
    rng: Option<&'r mut SplitMix64>,
}

impl<'r> Dropout<'r> {
    pub fn eval() -> Dropout<'static> {
        Dropout { p: 0.0, rng: None }
    }

    pub fn train(p: f64, rng: &'r mut SplitMix64) -> Dropout<'r> {
        Dropout { p, rng: Some(rng) }
    }

    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_deref_mut() else {
            return Ok(x);
        };
        if self.p <= 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.p;
        let shape = tape.value(x).shape().to_vec();
        let data = (0..tape.value(x).len())
            .map(|_| if rng.next_f64() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        tape.mul_const(x, Tensor::new(shape, data)?)
    }
}

/// Parameter tensors registered on a tape.
pub(crate) struct ModelVars {
    map: BTreeMap<String, Var>,
}

impl ModelVars {
    pub fn register(tape: &mut Tape, params: &Parameters, trainable: bool) -> Self {
        let mut map = BTreeMap::new();
        for (name, tensor) in params.iter() {
            map.insert(name.clone(), tape.leaf(tensor.clone(), trainable));
        }
        ModelVars { map }
    }

    pub fn get(&self, name: &str) -> Var {
        *self
            .map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.map.iter()
    }
}

#[allow(clippy::too_many_arguments)]
fn multi_head_attention(
    cfg: &ModelConfig,
    tape: &mut Tape,
    vars: &ModelVars,
    prefix: &str,
    queries: Var,
    keys_values: Var,
    batch: usize,
    t_len: usize,
    s_len: usize,
    masks: &[BoolMat],
) -> Result<Var> {
    let d_k = cfg.d_model / cfg.num_heads;
    let project = |tape: &mut Tape, x: Var, name: &str| -> Result<Var> {
        let w = vars.get(&format!("{prefix}.{name}.weight"));
        let b = vars.get(&format!("{prefix}.{name}.bias"));
        let xw = tape.matmul(x, w)?;
        tape.add_bias(xw, b)
    };
    let q = project(tape, queries, "wq")?;
    let k = project(tape, keys_values, "wk")?;
    let v = project(tape, keys_values, "wv")?;

    let mut per_sentence = Vec::with_capacity(batch);
    for b in 0..batch {
        let qb = tape.slice_rows(q, b * t_len, (b + 1) * t_len)?;
        let kb = tape.slice_rows(k, b * s_len, (b + 1) * s_len)?;
        let vb = tape.slice_rows(v, b * s_len, (b + 1) * s_len)?;
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let qh = tape.slice_cols(qb, h * d_k, (h + 1) * d_k)?;
            let kh = tape.slice_cols(kb, h * d_k, (h + 1) * d_k)?;
            let vh = tape.slice_cols(vb, h * d_k, (h + 1) * d_k)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scaled = tape.scale(scores, 1.0 / (d_k as f64).sqrt());
            let weights = tape.masked_softmax_rows(scaled, masks[b].clone())?;
            heads.push(tape.matmul(weights, vh)?);
        }
        per_sentence.push(tape.concat_cols(&heads)?);
    }
    let context = tape.concat_rows(&per_sentence)?;
    project(tape, context, "wo")
}

fn feed_forward(tape: &mut Tape, vars: &ModelVars, prefix: &str, x: Var) -> Result<Var> {
    let w1 = vars.get(&format!("{prefix}.ffn.w1.weight"));
    let b1 = vars.get(&format!("{prefix}.ffn.w1.bias"));
    let w2 = vars.get(&format!("{prefix}.ffn.w2.weight"));
    let b2 = vars.get(&format!("{prefix}.ffn.w2.bias"));
    let h = tape.matmul(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.relu(h);
    let h = tape.matmul(h, w2)?;
    tape.add_bias(h, b2)
}

fn add_norm(
    tape: &mut Tape,
    vars: &ModelVars,
    norm: &str,
    x: Var,
    sublayer: Var,
    dropout: &mut Dropout,
) -> Result<Var> {
    let dropped = dropout.apply(tape, sublayer)?;
    let sum = tape.add(x, dropped)?;
    let gain = vars.get(&format!("{norm}.gain"));
    let bias = vars.get(&format!("{norm}.bias"));
    tape.layer_norm_rows(sum, gain, bias, LN_EPS)
}

fn embed_with_positions(
    cfg: &ModelConfig,
    tape: &mut Tape,
    vars: &ModelVars,
    table: &str,
    ids: &TokenMatrix,
    dropout: &mut Dropout,
) -> Result<Var> {
    let emb = tape.embed(vars.get(table), ids.flat())?;
    let scaled = tape.scale(emb, (cfg.d_model as f64).sqrt());
    let pe = positional_rows(ids.rows(), ids.cols(), cfg.d_model);
    let x = tape.add_const(scaled, pe)?;
    dropout.apply(tape, x)
}

pub(crate) fn encode_on_tape(
    cfg: &ModelConfig,
    tape: &mut Tape,
    vars: &ModelVars,
    src: &TokenMatrix,
    masks: &BatchMasks,
    dropout: &mut Dropout,
) -> Result<Var> {
    let (b, s) = (src.rows(), src.cols());
    let mut x = embed_with_positions(cfg, tape, vars, "src_embed.weight", src, dropout)?;
    for i in 0..cfg.num_layers {
        let p = format!("encoder.{i}");
        let attn = multi_head_attention(
            cfg,
            tape,
            vars,
            &format!("{p}.self_attn"),
            x,
            x,
            b,
            s,
            s,
            &masks.src_self,
        )?;
        x = add_norm(tape, vars, &format!("{p}.norm1"), x, attn, dropout)?;
        let ff = feed_forward(tape, vars, &p, x)?;
        x = add_norm(tape, vars, &format!("{p}.norm2"), x, ff, dropout)?;
    }
    Ok(x)
}

pub(crate) fn decode_on_tape(
    cfg: &ModelConfig,
    tape: &mut Tape,
    vars: &ModelVars,
    memory: Var,
    src_cols: usize,
    tgt_in: &TokenMatrix,
    masks: &BatchMasks,
    dropout: &mut Dropout,
) -> Result<Var> {
    let (b, t) = (tgt_in.rows(), tgt_in.cols());
    let mut y = embed_with_positions(cfg, tape, vars, "tgt_embed.weight", tgt_in, dropout)?;
    for i in 0..cfg.num_layers {
        let p = format!("decoder.{i}");
        let self_attn = multi_head_attention(
            cfg,
            tape,
            vars,
            &format!("{p}.self_attn"),
            y,
            y,
            b,
            t,
            t,
            &masks.tgt_self,
        )?;
        y = add_norm(tape, vars, &format!("{p}.norm1"), y, self_attn, dropout)?;
        let cross = multi_head_attention(
            cfg,
            tape,
            vars,
            &format!("{p}.cross_attn"),
            y,
            memory,
            b,
            t,
            src_cols,
            &masks.cross,
        )?;
        y = add_norm(tape, vars, &format!("{p}.norm2"), y, cross, dropout)?;
        let ff = feed_forward(tape, vars, &p, y)?;
        y = add_norm(tape, vars, &format!("{p}.norm3"), y, ff, dropout)?;
    }
    let raw = if cfg.tie_output_embedding {
        tape.matmul_nt(y, vars.get("tgt_embed.weight"))?
    } else {
        tape.matmul(y, vars.get("output.weight"))?
    };
    tape.add_bias(raw, vars.get("output.bias"))
}

fn validate_batch(cfg: &ModelConfig, src: &TokenMatrix, tgt_in: &TokenMatrix) -> Result<()> {
    if src.rows() == 0 || src.rows() != tgt_in.rows() {
        return Err(Error::Shape(format!(
            "batch sizes differ or are zero: {} source rows, {} target rows",
            src.rows(),
            tgt_in.rows()
        )));
    }
    if tgt_in.cols() == 0 {
        return Err(Error::Shape("decoder input must hold at least BOS".into()));
    }
    for (len, max) in [(src.cols(), cfg.max_seq_len), (tgt_in.cols(), cfg.max_seq_len)] {
        if len > max {
            return Err(Error::SequenceTooLong { got: len, max });
        }
    }
    for &id in src.flat() {
        if id as usize >= cfg.src_vocab {
            return Err(Error::VocabId {
                id,
                vocab: cfg.src_vocab,
            });
        }
    }
    for &id in tgt_in.flat() {
        if id as usize >= cfg.tgt_vocab {
            return Err(Error::VocabId {
                id,
                vocab: cfg.tgt_vocab,
            });
        }
    }
    Ok(())
}

/// Full teacher-forced forward on an existing tape; returns the
/// `(B*T, tgt_vocab)` logits node.
pub(crate) fn forward_on_tape(
    cfg: &ModelConfig,
    tape: &mut Tape,
    vars: &ModelVars,
    src: &TokenMatrix,
    tgt_in: &TokenMatrix,
    dropout: &mut Dropout,
) -> Result<Var> {
    validate_batch(cfg, src, tgt_in)?;
    let masks = make_masks(src.lengths(), tgt_in.lengths(), src.cols(), tgt_in.cols());
    let memory = encode_on_tape(cfg, tape, vars, src, &masks, dropout)?;
    decode_on_tape(cfg, tape, vars, memory, src.cols(), tgt_in, &masks, dropout)
}

/// Teacher-forced forward in eval mode (no dropout): logits of shape
/// `B x T x tgt_vocab`. Deterministic: identical inputs produce
/// bit-identical outputs.
pub fn forward(
    cfg: &ModelConfig,
    params: &Parameters,
    src: &TokenMatrix,
    tgt_in: &TokenMatrix,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params, false);
    let logits = forward_on_tape(cfg, &mut tape, &vars, src, tgt_in, &mut Dropout::eval())?;
    let value = tape.value(logits);
    Tensor::new(
        vec![tgt_in.rows(), tgt_in.cols(), cfg.tgt_vocab],
        value.data().to_vec(),
    )
}

/// Encoder output for one source sentence, reusable across decode steps.
pub struct EncodedSource {
    memory: Tensor,
    length: usize,
}

impl EncodedSource {
    pub fn length(&self) -> usize {
        self.length
    }
}

/// Run the encoder once for a single source sentence.
pub fn encode_source(cfg: &ModelConfig, params: &Parameters, src_ids: &[u32]) -> Result<EncodedSource> {
    if src_ids.len() > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            got: src_ids.len(),
            max: cfg.max_seq_len,
        });
    }
    for &id in src_ids {
        if id as usize >= cfg.src_vocab {
            return Err(Error::VocabId {
                id,
                vocab: cfg.src_vocab,
            });
        }
    }
    let src = TokenMatrix::from_rows(&[src_ids.to_vec()]);
    let masks = make_masks(src.lengths(), &[0], src.cols(), 0);
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params, false);
    let memory = encode_on_tape(cfg, &mut tape, &vars, &src, &masks, &mut Dropout::eval())?;
    Ok(EncodedSource {
        memory: tape.value(memory).clone(),
        length: src_ids.len(),
    })
}

/// Next-token logits for a batch of equal-length decoder prefixes sharing
/// one encoded source. Returns a `(prefixes, tgt_vocab)` tensor holding the
/// logits at each prefix's final position.
pub fn next_token_logits(
    cfg: &ModelConfig,
    params: &Parameters,
    source: &EncodedSource,
    prefixes: &[Vec<u32>],
) -> Result<Tensor> {
    let batch = prefixes.len();
    if batch == 0 {
        return Err(Error::Shape("no prefixes to score".into()));
    }
    let t = prefixes[0].len();
    if prefixes.iter().any(|p| p.len() != t) || t == 0 {
        return Err(Error::Shape("prefixes must share one non-zero length".into()));
    }
    if t > cfg.max_seq_len {
        return Err(Error::SequenceTooLong {
            got: t,
            max: cfg.max_seq_len,
        });
    }
    let tgt = TokenMatrix::from_rows(prefixes);
    let s = source.length;
    let masks = make_masks(&vec![s; batch], tgt.lengths(), s, t);

    // Tile the shared memory per prefix so the decoder sees a batch.
    let d = cfg.d_model;
    let mut mem_data = Vec::with_capacity(batch * s * d);
    for _ in 0..batch {
        mem_data.extend_from_slice(source.memory.data());
    }
    let mut tape = Tape::new();
    let vars = ModelVars::register(&mut tape, params, false);
    let memory = tape.constant(Tensor::new(vec![batch * s, d], mem_data)?);
    let logits = decode_on_tape(cfg, &mut tape, &vars, memory, s, &tgt, &masks, &mut Dropout::eval())?;
    let all = tape.value(logits);
    let v = cfg.tgt_vocab;
    let mut out = Vec::with_capacity(batch * v);
    for b in 0..batch {
        let row = (b * t + t - 1) * v;
        out.extend_from_slice(&all.data()[row..row + v]);
    }
    Tensor::new(vec![batch, v], out)
}
