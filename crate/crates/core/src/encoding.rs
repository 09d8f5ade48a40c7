//! Input encoding: a self-contained lowercasing tokenizer, vocabulary
//! construction, and the two sequence templates.
//!
//! Single-word instances encode as `[START] sentence [SEP] target [SEP]`;
//! MWE instances encode as `[START] target [SEP]` with the sentence
//! deliberately omitted. Sequences are capped at `max_len` by truncating
//! the sentence segment from the right; the target segment is preserved.
//!
//! The tokenizer splits on whitespace and punctuation boundaries, each
//! punctuation mark becoming its own token. Any tokenizer honoring this
//! contract (e.g. a subword tokenizer at full scale) can be swapped in
//! behind `Vocabulary::encode_tokens`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, Instance, Subtask};
use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "[PAD]";
pub const START_TOKEN: &str = "[START]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const UNK_TOKEN: &str = "[UNK]";

pub const DEFAULT_MAX_LEN: usize = 512;

/// Lowercases and splits text into tokens: alphanumeric runs plus
/// single-character punctuation tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Token/id mapping with four reserved entries; id 0 is always padding.
/// Serializes as the plain id-ordered token list so the representation
/// is canonical.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    id_to_token: Vec<String>,
    token_to_id: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocabulary {
    fn from(id_to_token: Vec<String>) -> Self {
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            id_to_token,
            token_to_id,
        }
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.id_to_token
    }
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const START_ID: usize = 1;
    pub const SEP_ID: usize = 2;
    pub const UNK_ID: usize = 3;

    fn with_reserved() -> Self {
        let id_to_token: Vec<String> = [PAD_TOKEN, START_TOKEN, SEP_TOKEN, UNK_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            id_to_token,
            token_to_id,
        }
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // reserved entries are always present
    }

    pub fn id(&self, token: &str) -> usize {
        self.token_to_id
            .get(token)
            .copied()
            .unwrap_or(Self::UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(|s| s.as_str())
    }

    /// Tokenizes text and maps each token to its id (or the unknown id).
    pub fn encode_tokens(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Writes `token<TAB>id` rows ordered by id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::new();
        for (id, token) in self.id_to_token.iter().enumerate() {
            out.push_str(token);
            out.push('\t');
            out.push_str(&id.to_string());
            out.push('\n');
        }
        crate::pipeline::write_atomic(path.as_ref(), out.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let fname = path.display().to_string();
        let mut entries: Vec<(String, usize)> = Vec::new();
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.is_empty() {
                continue;
            }
            let row = lineno + 1;
            let (token, id) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(&fname, row, "expected token<TAB>id"))?;
            let id: usize = id
                .parse()
                .map_err(|_| Error::parse(&fname, row, format!("unparseable id '{id}'")))?;
            entries.push((token.to_string(), id));
        }
        entries.sort_by_key(|(_, id)| *id);
        let mut id_to_token = Vec::with_capacity(entries.len());
        let mut token_to_id = HashMap::with_capacity(entries.len());
        for (expect, (token, id)) in entries.into_iter().enumerate() {
            if id != expect {
                return Err(Error::invalid(format!(
                    "{fname}: vocabulary ids not contiguous at id {id}"
                )));
            }
            if token_to_id.insert(token.clone(), id).is_some() {
                return Err(Error::invalid(format!(
                    "{fname}: duplicate vocabulary token '{token}'"
                )));
            }
            id_to_token.push(token);
        }
        let vocab = Vocabulary {
            id_to_token,
            token_to_id,
        };
        for (id, expect) in [
            (Self::PAD_ID, PAD_TOKEN),
            (Self::START_ID, START_TOKEN),
            (Self::SEP_ID, SEP_TOKEN),
            (Self::UNK_ID, UNK_TOKEN),
        ] {
            if vocab.token(id) != Some(expect) {
                return Err(Error::invalid(format!(
                    "{fname}: reserved token {expect} missing at id {id}"
                )));
            }
        }
        Ok(vocab)
    }
}

/// Builds a vocabulary from a training split: every token occurring at
/// least `min_count` times across sentences and targets, plus the four
/// reserved tokens. Deterministic: content tokens are id-ordered
/// lexicographically.
pub fn build_vocab(train: &Dataset, min_count: usize) -> Result<Vocabulary> {
    build_vocab_multi(&[train], min_count)
}

/// As `build_vocab`, counting across several splits (multi-step and
/// multi-task runs need one vocabulary covering every task's text).
pub fn build_vocab_multi(datasets: &[&Dataset], min_count: usize) -> Result<Vocabulary> {
    if datasets.iter().all(|d| d.is_empty()) {
        return Err(Error::invalid("cannot build a vocabulary from an empty dataset"));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for data in datasets {
        for inst in &data.instances {
            for token in tokenize(&inst.sentence).into_iter().chain(tokenize(&inst.target)) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
    }
    let mut kept: Vec<String> = counts
        .into_iter()
        .filter(|(_, c)| *c >= min_count)
        .map(|(t, _)| t)
        .collect();
    kept.sort();

    let mut vocab = Vocabulary::with_reserved();
    for token in kept {
        let id = vocab.id_to_token.len();
        vocab.token_to_id.insert(token.clone(), id);
        vocab.id_to_token.push(token);
    }
    Ok(vocab)
}

/// A bounded id sequence: starts with the start marker, contains at least
/// one separator, length capped at the encoding `max_len`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// True for non-padding positions.
    pub fn token_mask(&self) -> Vec<bool> {
        self.ids.iter().map(|&id| id != Vocabulary::PAD_ID).collect()
    }

    /// Appends padding up to `len` (used by tests exercising mask behavior).
    pub fn padded_to(&self, len: usize) -> TokenSequence {
        let mut ids = self.ids.clone();
        while ids.len() < len {
            ids.push(Vocabulary::PAD_ID);
        }
        TokenSequence { ids }
    }

    pub fn check_invariants(&self, max_len: usize) -> Result<()> {
        if self.ids.first() != Some(&Vocabulary::START_ID) {
            return Err(Error::invalid("sequence does not begin with the start marker"));
        }
        if !self.ids.contains(&Vocabulary::SEP_ID) {
            return Err(Error::invalid("sequence has no separator"));
        }
        if self.ids.len() > max_len {
            return Err(Error::invalid(format!(
                "sequence length {} exceeds max_len {max_len}",
                self.ids.len()
            )));
        }
        Ok(())
    }
}

/// `[START] sentence [SEP] target [SEP]`, sentence truncated from the
/// right when the sequence would exceed `max_len`; the target segment is
/// kept intact whenever it fits.
pub fn encode_single_word(inst: &Instance, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    debug_assert_eq!(inst.subtask, Subtask::SingleWord);
    let sentence = vocab.encode_tokens(&inst.sentence);
    let mut target = vocab.encode_tokens(&inst.target);
    // Pathological case: a target that cannot fit even with an empty
    // sentence is itself right-truncated so the cap still holds.
    if target.len() + 3 > max_len {
        target.truncate(max_len.saturating_sub(3));
    }
    let budget = max_len.saturating_sub(3 + target.len());
    let keep = sentence.len().min(budget);

    let mut ids = Vec::with_capacity(keep + target.len() + 3);
    ids.push(Vocabulary::START_ID);
    ids.extend_from_slice(&sentence[..keep]);
    ids.push(Vocabulary::SEP_ID);
    ids.extend_from_slice(&target);
    ids.push(Vocabulary::SEP_ID);
    TokenSequence { ids }
}

/// `[START] target [SEP]`; the sentence is omitted for MWE instances.
pub fn encode_mwe(inst: &Instance, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    debug_assert_eq!(inst.subtask, Subtask::Mwe);
    let mut target = vocab.encode_tokens(&inst.target);
    if target.len() + 2 > max_len {
        target.truncate(max_len.saturating_sub(2));
    }
    let mut ids = Vec::with_capacity(target.len() + 2);
    ids.push(Vocabulary::START_ID);
    ids.extend_from_slice(&target);
    ids.push(Vocabulary::SEP_ID);
    TokenSequence { ids }
}

/// Dispatches on the instance's subtask.
pub fn encode_instance(inst: &Instance, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    match inst.subtask {
        Subtask::SingleWord => encode_single_word(inst, vocab, max_len),
        Subtask::Mwe => encode_mwe(inst, vocab, max_len),
    }
}
