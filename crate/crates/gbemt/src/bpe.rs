//! Byte-Pair Encoding: training, application, and the on-disk model format.
//!
//! Words are whitespace-split; each word is decomposed into its characters
//! followed by the word-end marker `</w>`. The marker is a boundary symbol:
//! it gets its own vocabulary id, is emitted after every word, and decodes
//! to a single space. Neither the marker nor protected tokens (such as
//! language tags) ever participate in merges, so merged symbols never span
//! word boundaries and protected tokens stay atomic.
//!
//! Training repeatedly merges the most frequent adjacent symbol pair; ties
//! break to the lexicographically smallest `(left, right)` pair and merging
//! stops once the vocabulary is full or no pair occurs at least twice.
//! Identical inputs therefore produce byte-identical model files.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const BOS_ID: u32 = 2;
pub const EOS_ID: u32 = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

/// Word-end marker symbol. Purely internal: it never appears in decoded
/// text and never merges with anything.
pub const WORD_END: &str = "</w>";

/// Text rendered for UNK ids when decoding.
pub const UNK_RENDERING: &str = "<unk>";

const SPECIALS: [&str; 4] = [PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN];

/// A trained BPE model: ordered merge table plus vocabulary.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    /// id -> token text, in id order.
    vocab: Vec<String>,
    /// token text -> smallest id carrying that text.
    token_ids: HashMap<String, u32>,
    protected: BTreeSet<String>,
    word_end_id: u32,
    vocab_size_cfg: usize,
}

impl BpeModel {
    /// Train a model on `lines` with at most `vocab_size` entries.
    ///
    /// `protected_tokens` enter the vocabulary atomically (ids right after
    /// the four specials, in sorted order) and are excluded from merging.
    pub fn train<I, S>(lines: I, vocab_size: usize, protected_tokens: &BTreeSet<String>) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        for token in protected_tokens {
            if token.chars().count() < 2 || token.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "protected token {token:?} must be at least two characters with no whitespace"
                )));
            }
        }

        // Count words, skipping protected tokens (they stay atomic).
        let mut word_counts: HashMap<String, u64> = HashMap::new();
        for line in lines {
            for word in line.as_ref().split_whitespace() {
                if !protected_tokens.contains(word) {
                    *word_counts.entry(word.to_string()).or_insert(0) += 1;
                }
            }
        }

        let mut alphabet: BTreeSet<String> = BTreeSet::new();
        for word in word_counts.keys() {
            for ch in word.chars() {
                alphabet.insert(ch.to_string());
            }
        }

        let base_size = SPECIALS.len() + protected_tokens.len() + 1 + alphabet.len();
        if vocab_size < base_size {
            return Err(Error::Config(format!(
                "vocab_size {vocab_size} too small: minimum feasible size is {base_size} \
                 ({} specials + {} protected + word-end marker + {} alphabet symbols)",
                SPECIALS.len(),
                protected_tokens.len(),
                alphabet.len()
            )));
        }

        // Texts no merge may produce.
        let mut reserved: BTreeSet<String> = protected_tokens.clone();
        reserved.extend(SPECIALS.iter().map(|s| s.to_string()));
        reserved.insert(WORD_END.to_string());

        // Word sequences: chars + trailing marker, weighted by count.
        // Sorted word order so merge application order is deterministic
        // (it does not affect results, but keeps iteration reproducible).
        let mut sorted_words: Vec<(&String, &u64)> = word_counts.iter().collect();
        sorted_words.sort_unstable_by(|a, b| a.0.cmp(b.0));
        let mut sequences: Vec<(Vec<String>, u64)> = sorted_words
            .into_iter()
            .map(|(word, &count)| {
                let mut symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
                symbols.push(WORD_END.to_string());
                (symbols, count)
            })
            .collect();

        let mut merges: Vec<(String, String)> = Vec::new();
        let max_merges = vocab_size - base_size;
        while merges.len() < max_merges {
            let mut pair_counts: HashMap<(&str, &str), u64> = HashMap::new();
            for (symbols, count) in &sequences {
                for pair in symbols.windows(2) {
                    let (left, right) = (pair[0].as_str(), pair[1].as_str());
                    if left == WORD_END || right == WORD_END {
                        continue;
                    }
                    *pair_counts.entry((left, right)).or_insert(0) += count;
                }
            }
            // Most frequent pair; ties to the lexicographically smallest.
            let best = pair_counts
                .iter()
                .filter(|((l, r), _)| !reserved.contains(&format!("{l}{r}")))
                .map(|(&(l, r), &c)| (c, l, r))
                .max_by(|a, b| a.0.cmp(&b.0).then_with(|| (b.1, b.2).cmp(&(a.1, a.2))));
            let Some((count, left, right)) = best else { break };
            if count < 2 {
                break;
            }
            let merge = (left.to_string(), right.to_string());
            for (symbols, _) in &mut sequences {
                apply_merge(symbols, &merge.0, &merge.1);
            }
            merges.push(merge);
        }

        Ok(Self::assemble(merges, alphabet, protected_tokens.clone(), vocab_size))
    }

    fn assemble(
        merges: Vec<(String, String)>,
        alphabet: BTreeSet<String>,
        protected: BTreeSet<String>,
        vocab_size_cfg: usize,
    ) -> Self {
        let mut vocab: Vec<String> = Vec::new();
        vocab.extend(SPECIALS.iter().map(|s| s.to_string()));
        vocab.extend(protected.iter().cloned());
        let word_end_id = vocab.len() as u32;
        vocab.push(WORD_END.to_string());
        vocab.extend(alphabet.iter().cloned());
        vocab.extend(merges.iter().map(|(l, r)| format!("{l}{r}")));

        let mut token_ids = HashMap::with_capacity(vocab.len());
        for (id, token) in vocab.iter().enumerate() {
            token_ids.entry(token.clone()).or_insert(id as u32);
        }
        BpeModel {
            merges,
            vocab,
            token_ids,
            protected,
            word_end_id,
            vocab_size_cfg,
        }
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab.len()
    }

    /// The vocab_size the model was trained with (upper bound on entries).
    pub fn configured_vocab_size(&self) -> usize {
        self.vocab_size_cfg
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.token_ids.get(token).copied()
    }

    pub fn token_of(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn word_end_id(&self) -> u32 {
        self.word_end_id
    }

    pub fn protected_tokens(&self) -> &BTreeSet<String> {
        &self.protected
    }

    /// Protected tokens shaped like language tags (`<2xxx>`).
    pub fn registered_tags(&self) -> Vec<String> {
        self.protected
            .iter()
            .filter(|t| crate::corpus::LanguageTag::parse(t).is_ok())
            .cloned()
            .collect()
    }

    /// Encode text to token ids. Unknown symbols map to UNK; protected
    /// tokens match atomically before character decomposition. Never emits
    /// PAD, BOS, or EOS.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            if self.protected.contains(word) {
                ids.push(self.token_ids[word]);
                ids.push(self.word_end_id);
                continue;
            }
            let mut symbols: Vec<String> = word.chars().map(|c| c.to_string()).collect();
            for (left, right) in &self.merges {
                apply_merge(&mut symbols, left, right);
            }
            for symbol in &symbols {
                ids.push(self.token_ids.get(symbol).copied().unwrap_or(UNK_ID));
            }
            ids.push(self.word_end_id);
        }
        ids
    }

    /// Decode ids back to text: word-end markers become single spaces (the
    /// final one is trimmed), PAD/BOS/EOS are dropped, UNK renders as
    /// [`UNK_RENDERING`].
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            if id as usize >= self.vocab.len() {
                return Err(Error::VocabId {
                    id,
                    vocab: self.vocab.len(),
                });
            }
            match id {
                PAD_ID | BOS_ID | EOS_ID => {}
                UNK_ID => out.push_str(UNK_RENDERING),
                _ if id == self.word_end_id => out.push(' '),
                _ => out.push_str(&self.vocab[id as usize]),
            }
        }
        if out.ends_with(' ') {
            out.pop();
        }
        Ok(out)
    }

    /// Serialize in the versioned text format:
    /// a `#bpe-v1` header, one merge per line, then the vocabulary.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "#bpe-v1 vocab_size={}", self.vocab_size_cfg)?;
        for (left, right) in &self.merges {
            writeln!(w, "{left} {right}")?;
        }
        writeln!(w, "#vocab")?;
        for (id, token) in self.vocab.iter().enumerate() {
            writeln!(w, "{token}\t{id}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|e| Error::io(path.as_ref(), e))?;
        std::fs::write(path.as_ref(), buf).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read_from(r: impl Read) -> Result<Self> {
        let reader = BufReader::new(r);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::Data(format!("bpe model read failed: {e}")))?
            .ok_or_else(|| Error::Data("bpe model file is empty".into()))?;
        let vocab_size_cfg: usize = header
            .strip_prefix("#bpe-v1 vocab_size=")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data(format!("bad bpe header: {header:?}")))?;

        let mut merges: Vec<(String, String)> = Vec::new();
        let mut vocab: Vec<String> = Vec::new();
        let mut in_vocab = false;
        for line in lines {
            let line = line.map_err(|e| Error::Data(format!("bpe model read failed: {e}")))?;
            if line == "#vocab" {
                in_vocab = true;
                continue;
            }
            if in_vocab {
                let (token, id_text) = line
                    .rsplit_once('\t')
                    .ok_or_else(|| Error::Data(format!("bad vocab line: {line:?}")))?;
                let id: usize = id_text
                    .parse()
                    .map_err(|_| Error::Data(format!("bad vocab id in line: {line:?}")))?;
                if id != vocab.len() {
                    return Err(Error::Data(format!(
                        "vocab ids must be dense and ascending, got {id} at position {}",
                        vocab.len()
                    )));
                }
                vocab.push(token.to_string());
            } else {
                let (left, right) = line
                    .split_once(' ')
                    .ok_or_else(|| Error::Data(format!("bad merge line: {line:?}")))?;
                merges.push((left.to_string(), right.to_string()));
            }
        }
        if vocab.len() < SPECIALS.len() + 1 {
            return Err(Error::Data("bpe vocab misses reserved entries".into()));
        }
        for (i, special) in SPECIALS.iter().enumerate() {
            if vocab[i] != *special {
                return Err(Error::Data(format!(
                    "vocab id {i} must be {special}, got {:?}",
                    vocab[i]
                )));
            }
        }

        // Reconstruct classes: merge outputs are derivable from the merge
        // list; single-character leftovers are the alphabet; every other
        // non-special, non-marker token is protected.
        let merge_outputs: BTreeSet<String> = merges.iter().map(|(l, r)| format!("{l}{r}")).collect();
        let mut protected = BTreeSet::new();
        let mut word_end_id = None;
        for (id, token) in vocab.iter().enumerate().skip(SPECIALS.len()) {
            if token == WORD_END {
                if word_end_id.is_some() {
                    return Err(Error::Data("duplicate word-end marker in vocab".into()));
                }
                word_end_id = Some(id as u32);
            } else if token.chars().count() >= 2 && !merge_outputs.contains(token) {
                protected.insert(token.clone());
            }
        }
        let word_end_id =
            word_end_id.ok_or_else(|| Error::Data("vocab misses the word-end marker".into()))?;

        let mut token_ids = HashMap::with_capacity(vocab.len());
        for (id, token) in vocab.iter().enumerate() {
            token_ids.entry(token.clone()).or_insert(id as u32);
        }
        Ok(BpeModel {
            merges,
            vocab,
            token_ids,
            protected,
            word_end_id,
            vocab_size_cfg,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::read_from(bytes.as_slice())
    }
}

/// Replace every adjacent `(left, right)` occurrence with the concatenated
/// symbol, scanning left to right.
fn apply_merge(symbols: &mut Vec<String>, left: &str, right: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            symbols[i] = format!("{left}{right}");
            symbols.remove(i + 1);
        } else {
            i += 1;
        }
    }
}
