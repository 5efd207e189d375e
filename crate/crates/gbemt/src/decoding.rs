//! Greedy and beam-search generation plus the text-level `translate`
//! entry point.
//!
//! Both searches run over a [`StepScorer`], which maps decoder prefixes to
//! next-token log-probabilities. The trained model implements it behind an
//! encoded source; tests drive the same search code with probability
//! tables. PAD and BOS are never proposed; EOS finishes a hypothesis and
//! is stripped from surfaced output.

use serde::{Deserialize, Serialize};

use crate::bpe::{BpeModel, BOS_ID, EOS_ID, PAD_ID};
use crate::corpus::LanguageTag;
use crate::error::{Error, Result};
use crate::model::{encode_source, next_token_logits, Checkpoint, EncodedSource};

/// Beam settings exposed on the CLI. The output budget for a source of
/// length `n` is `floor(max_len_factor * n) + max_len_offset` tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_len_factor: f64,
    pub max_len_offset: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 5,
            max_len_factor: 1.5,
            max_len_offset: 5,
        }
    }
}

impl DecodeConfig {
    pub fn max_output_len(&self, src_len: usize) -> usize {
        (self.max_len_factor * src_len as f64).floor() as usize + self.max_len_offset
    }

    /// One-line reproducibility summary carried on every score row.
    pub fn describe(&self, seed: u64) -> String {
        format!(
            "beam={} max_len={}*src+{} seed={}",
            self.beam_size, self.max_len_factor, self.max_len_offset, seed
        )
    }
}

/// A (partial) decode: generated token ids (EOS included when finished by
/// EOS), summed log-probability, and whether the hypothesis is complete.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub token_ids: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Average log-probability used for final ranking.
    pub fn normalized_score(&self) -> f64 {
        self.log_prob / self.token_ids.len().max(1) as f64
    }

    /// Token ids without the terminating EOS.
    pub fn surface_ids(&self) -> &[u32] {
        match self.token_ids.split_last() {
            Some((&EOS_ID, rest)) => rest,
            _ => &self.token_ids,
        }
    }
}

/// Next-token log-probabilities for a batch of equal-length prefixes
/// (generated ids only; implementations handle BOS themselves).
pub trait StepScorer {
    fn vocab_size(&self) -> usize;
    fn step(&self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>>;
}

/// Scorer backed by a checkpoint and one encoded source sentence.
pub struct CheckpointScorer<'a> {
    checkpoint: &'a Checkpoint,
    source: EncodedSource,
}

impl<'a> CheckpointScorer<'a> {
    pub fn new(checkpoint: &'a Checkpoint, src_ids: &[u32]) -> Result<Self> {
        let source = encode_source(&checkpoint.config, &checkpoint.parameters, src_ids)?;
        Ok(CheckpointScorer { checkpoint, source })
    }
}

impl StepScorer for CheckpointScorer<'_> {
    fn vocab_size(&self) -> usize {
        self.checkpoint.config.tgt_vocab
    }

    fn step(&self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
        let rows: Vec<Vec<u32>> = prefixes
            .iter()
            .map(|p| {
                let mut row = Vec::with_capacity(p.len() + 1);
                row.push(BOS_ID);
                row.extend_from_slice(p);
                row
            })
            .collect();
        let logits = next_token_logits(&self.checkpoint.config, &self.checkpoint.parameters, &self.source, &rows)?;
        let v = self.vocab_size();
        Ok((0..prefixes.len())
            .map(|b| log_softmax(&logits.data()[b * v..(b + 1) * v]))
            .collect())
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|&v| v - max - log_z).collect()
}

/// Iteratively append the argmax token (ties break to the lowest id) until
/// EOS or the length budget. The returned ids contain no BOS or EOS.
pub fn greedy_decode_with(scorer: &impl StepScorer, max_output_len: usize) -> Result<Vec<u32>> {
    let mut prefix: Vec<u32> = Vec::new();
    while prefix.len() < max_output_len {
        let log_probs = scorer.step(std::slice::from_ref(&prefix))?;
        let row = &log_probs[0];
        let mut best: Option<(f64, u32)> = None;
        for (tok, &lp) in row.iter().enumerate() {
            let tok = tok as u32;
            if tok == PAD_ID || tok == BOS_ID {
                continue;
            }
            if best.map_or(true, |(b, _)| lp > b) {
                best = Some((lp, tok));
            }
        }
        let (_, tok) = best.ok_or_else(|| Error::Config("vocabulary too small to decode".into()))?;
        if tok == EOS_ID {
            break;
        }
        prefix.push(tok);
    }
    Ok(prefix)
}

/// Length-normalized beam search.
///
/// Keeps the `beam_size` best continuations by summed log-probability each
/// step; hypotheses that emit EOS move to the finished set without their
/// beam slot being refilled, so `beam_size = 1` reproduces greedy decoding
/// exactly. Final ranking is by average log-probability per token.
pub fn beam_search_with(
    scorer: &impl StepScorer,
    beam_size: usize,
    max_output_len: usize,
) -> Result<Hypothesis> {
    if beam_size < 1 {
        return Err(Error::Config("beam size must be at least 1".into()));
    }
    if max_output_len == 0 {
        return Ok(Hypothesis {
            token_ids: Vec::new(),
            log_prob: 0.0,
            finished: true,
        });
    }

    let mut live: Vec<Hypothesis> = vec![Hypothesis {
        token_ids: Vec::new(),
        log_prob: 0.0,
        finished: false,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 0..max_output_len {
        if live.is_empty() {
            break;
        }
        let prefixes: Vec<Vec<u32>> = live.iter().map(|h| h.token_ids.clone()).collect();
        let scores = scorer.step(&prefixes)?;

        // (cumulative log-prob, token, parent), ranked by score then lowest
        // token id then parent order for full determinism.
        let mut candidates: Vec<(f64, u32, usize)> = Vec::new();
        for (parent, row) in scores.iter().enumerate() {
            for (tok, &lp) in row.iter().enumerate() {
                let tok = tok as u32;
                if tok == PAD_ID || tok == BOS_ID {
                    continue;
                }
                candidates.push((live[parent].log_prob + lp, tok, parent));
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        candidates.truncate(beam_size);

        let mut next_live = Vec::with_capacity(beam_size);
        for (log_prob, tok, parent) in candidates {
            let mut token_ids = live[parent].token_ids.clone();
            token_ids.push(tok);
            let hyp = Hypothesis {
                token_ids,
                log_prob,
                finished: tok == EOS_ID || step + 1 == max_output_len,
            };
            if hyp.finished {
                finished.push(hyp);
            } else {
                next_live.push(hyp);
            }
        }
        live = next_live;
    }

    finished
        .into_iter()
        .max_by(|a, b| {
            a.normalized_score()
                .partial_cmp(&b.normalized_score())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| b.token_ids.cmp(&a.token_ids))
        })
        .ok_or_else(|| Error::Config("beam search produced no hypothesis".into()))
}

/// Greedy decode from a checkpoint; BOS/EOS are stripped from the result.
pub fn greedy_decode(checkpoint: &Checkpoint, src_ids: &[u32], max_output_len: usize) -> Result<Vec<u32>> {
    let scorer = CheckpointScorer::new(checkpoint, src_ids)?;
    let capped = cap_output_len(checkpoint, max_output_len);
    greedy_decode_with(&scorer, capped)
}

/// Beam search from a checkpoint.
pub fn beam_search(
    checkpoint: &Checkpoint,
    src_ids: &[u32],
    beam_size: usize,
    max_output_len: usize,
) -> Result<Hypothesis> {
    let scorer = CheckpointScorer::new(checkpoint, src_ids)?;
    let capped = cap_output_len(checkpoint, max_output_len);
    beam_search_with(&scorer, beam_size, capped)
}

/// The decoder prefix includes BOS, so generation is capped one short of
/// the model's maximum sequence length.
fn cap_output_len(checkpoint: &Checkpoint, requested: usize) -> usize {
    requested.min(checkpoint.config.max_seq_len - 1)
}

/// Translate one sentence: optionally prepend the target-language tag,
/// BPE-encode, beam-decode, BPE-decode. Pure function of its inputs.
///
/// Sources longer than the model's maximum sequence length are truncated.
pub fn translate(
    checkpoint: &Checkpoint,
    src_bpe: &BpeModel,
    tgt_bpe: &BpeModel,
    text: &str,
    tag: Option<&LanguageTag>,
    decode: &DecodeConfig,
) -> Result<String> {
    let tagged;
    let input = match tag {
        Some(tag) => {
            if src_bpe.id_of(tag.token()).is_none() || !src_bpe.protected_tokens().contains(tag.token()) {
                return Err(Error::UnknownTag {
                    requested: tag.token().to_string(),
                    registered: src_bpe.registered_tags(),
                });
            }
            tagged = format!("{} {}", tag.token(), text);
            tagged.as_str()
        }
        None => text,
    };
    let mut src_ids = src_bpe.encode(input);
    src_ids.truncate(checkpoint.config.max_seq_len);
    let max_len = decode.max_output_len(src_ids.len());
    let hyp = beam_search(checkpoint, &src_ids, decode.beam_size, max_len)?;
    tgt_bpe.decode(hyp.surface_ids())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    /// Probability-table scorer: log-probs per prefix, with a uniform
    /// fallback for prefixes not in the table.
    pub struct TableScorer {
        pub vocab: usize,
        pub table: HashMap<Vec<u32>, Vec<f64>>,
    }

    impl TableScorer {
        fn uniform_row(&self) -> Vec<f64> {
            vec![(1.0 / self.vocab as f64).ln(); self.vocab]
        }
    }

    impl StepScorer for TableScorer {
        fn vocab_size(&self) -> usize {
            self.vocab
        }

        fn step(&self, prefixes: &[Vec<u32>]) -> Result<Vec<Vec<f64>>> {
            Ok(prefixes
                .iter()
                .map(|p| self.table.get(p).cloned().unwrap_or_else(|| self.uniform_row()))
                .collect())
        }
    }

    fn logp(probs: &[f64]) -> Vec<f64> {
        probs.iter().map(|&p| if p > 0.0 { p.ln() } else { -1e9 }).collect()
    }

    const A: u32 = 4;
    const B: u32 = 5;

    /// Greedy picks A first (0.6 > 0.4) but the B branch ends with a more
    /// probable EOS, so its average log-probability wins.
    fn greedy_trap() -> TableScorer {
        let mut table = HashMap::new();
        // ids: 0 PAD, 1 UNK, 2 BOS, 3 EOS, 4 A, 5 B.
        table.insert(vec![], logp(&[0.0, 0.001, 0.0, 0.004, 0.6, 0.395]));
        table.insert(vec![A], logp(&[0.0, 0.05, 0.0, 0.55, 0.2, 0.2]));
        table.insert(vec![B], logp(&[0.0, 0.02, 0.0, 0.9, 0.04, 0.04]));
        TableScorer { vocab: 6, table }
    }

    #[test]
    fn greedy_eos_first_gives_empty_output() {
        let mut table = HashMap::new();
        table.insert(vec![], logp(&[0.0, 0.1, 0.0, 0.8, 0.05, 0.05]));
        let scorer = TableScorer { vocab: 6, table };
        assert!(greedy_decode_with(&scorer, 10).unwrap().is_empty());
    }

    #[test]
    fn greedy_respects_length_budget() {
        let scorer = greedy_trap();
        assert_eq!(greedy_decode_with(&scorer, 1).unwrap(), vec![A]);
        assert_eq!(greedy_decode_with(&scorer, 0).unwrap(), Vec::<u32>::new());
    }

    #[test]
    fn greedy_breaks_ties_to_lowest_id() {
        let mut table = HashMap::new();
        table.insert(vec![], logp(&[0.0, 0.1, 0.0, 0.1, 0.4, 0.4]));
        table.insert(vec![A], logp(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        let scorer = TableScorer { vocab: 6, table };
        assert_eq!(greedy_decode_with(&scorer, 5).unwrap(), vec![A]);
    }

    #[test]
    fn beam_one_equals_greedy_on_tables() {
        let scorer = greedy_trap();
        let greedy = greedy_decode_with(&scorer, 8).unwrap();
        let beam = beam_search_with(&scorer, 1, 8).unwrap();
        assert_eq!(beam.surface_ids(), greedy.as_slice());
        assert!(beam.finished);
    }

    #[test]
    fn beam_two_recovers_greedy_suboptimal_sequence() {
        let scorer = greedy_trap();
        let greedy = greedy_decode_with(&scorer, 8).unwrap();
        assert_eq!(greedy, vec![A]);
        let beam = beam_search_with(&scorer, 2, 8).unwrap();
        assert_eq!(beam.surface_ids(), &[B]);
        // Exhaustive check over all sequences of length <= 3.
        let best = enumerate_best(&scorer, 3);
        assert_eq!(beam.surface_ids(), best.surface_ids());
    }

    #[test]
    fn beam_wider_than_vocab_matches_enumeration() {
        let scorer = greedy_trap();
        let best = enumerate_best(&scorer, 3);
        let at_vocab = beam_search_with(&scorer, 6, 3).unwrap();
        let wider = beam_search_with(&scorer, 11, 3).unwrap();
        assert_eq!(at_vocab.surface_ids(), best.surface_ids());
        assert_eq!(wider.surface_ids(), best.surface_ids());
        assert_eq!(at_vocab.token_ids, wider.token_ids);
    }

    /// Exhaustive search over every decode of bounded length, scored like
    /// the production ranking.
    pub fn enumerate_best(scorer: &impl StepScorer, max_len: usize) -> Hypothesis {
        fn recurse(
            scorer: &impl StepScorer,
            prefix: &mut Vec<u32>,
            log_prob: f64,
            max_len: usize,
            out: &mut Vec<Hypothesis>,
        ) {
            if prefix.len() == max_len {
                out.push(Hypothesis {
                    token_ids: prefix.clone(),
                    log_prob,
                    finished: true,
                });
                return;
            }
            let row = scorer.step(std::slice::from_ref(prefix)).unwrap().remove(0);
            for (tok, &lp) in row.iter().enumerate() {
                let tok = tok as u32;
                if tok == PAD_ID || tok == BOS_ID {
                    continue;
                }
                prefix.push(tok);
                if tok == EOS_ID {
                    out.push(Hypothesis {
                        token_ids: prefix.clone(),
                        log_prob: log_prob + lp,
                        finished: true,
                    });
                } else {
                    recurse(scorer, prefix, log_prob + lp, max_len, out);
                }
                prefix.pop();
            }
        }
        let mut all = Vec::new();
        recurse(scorer, &mut Vec::new(), 0.0, max_len, &mut all);
        all.into_iter()
            .max_by(|a, b| {
                a.normalized_score()
                    .partial_cmp(&b.normalized_score())
                    .unwrap()
                    .then_with(|| b.token_ids.cmp(&a.token_ids))
            })
            .unwrap()
    }

    #[test]
    fn repeated_calls_are_identical() {
        let scorer = greedy_trap();
        let a = beam_search_with(&scorer, 3, 6).unwrap();
        let b = beam_search_with(&scorer, 3, 6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_contains_no_structural_specials() {
        let scorer = greedy_trap();
        for k in 1..=4 {
            let hyp = beam_search_with(&scorer, k, 6).unwrap();
            for &tok in hyp.surface_ids() {
                assert!(tok != PAD_ID && tok != BOS_ID && tok != EOS_ID);
            }
        }
    }

    #[test]
    fn beam_normalized_score_widens_monotonically() {
        let scorer = greedy_trap();
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=6 {
            let hyp = beam_search_with(&scorer, k, 4).unwrap();
            let score = hyp.normalized_score();
            assert!(
                score >= prev - 1e-12,
                "beam {k} scored {score} below {prev}"
            );
            prev = score;
        }
    }
}
