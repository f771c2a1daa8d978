//! Corpus ingestion: tokenization, vocabularies, id encoding, truncated-BPTT
//! batching, and corpus statistics.
//!
//! Corpus files are UTF-8 plain text, one sentence per line, whitespace
//! tokenized. Tokens are compared as sequences of Unicode scalar values,
//! never bytes.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved token string for out-of-vocabulary words.
pub const UNK_TOKEN: &str = "<unk>";
/// Reserved token string for end of sentence.
pub const EOS_TOKEN: &str = "<eos>";

/// Split a line into maximal runs of non-whitespace Unicode.
pub fn tokenize_line(line: &str) -> Vec<&str> {
    line.split_whitespace().collect()
}

/// Read and tokenize a corpus file. Returns one token vector per line.
///
/// Invalid UTF-8 is reported with the byte offset of the first bad byte.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let bytes = std::fs::read(path.as_ref())?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Decode {
        offset: e.valid_up_to(),
    })?;
    Ok(tokenize_text(text))
}

/// Tokenize already-decoded corpus text, one sentence per line.
pub fn tokenize_text(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|line| tokenize_line(line).into_iter().map(String::from).collect())
        .collect()
}

/// Bidirectional word↔id map with reserved UNK and EOS entries.
///
/// Content words occupy ids `0..size-2` in order of descending training
/// frequency (ties broken lexicographically); the two reserved ids follow.
/// If a corpus contains the literal reserved strings they are identified
/// with the reserved entries, keeping `id_of`/`token_of` mutual inverses.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    id_of: HashMap<String, u32>,
    token_of: Vec<String>,
    unk_id: u32,
    eos_id: u32,
}

impl Vocabulary {
    /// Build a vocabulary from tokenized training lines.
    pub fn build(lines: &[Vec<String>]) -> Result<Self> {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for line in lines {
            for tok in line {
                if tok != UNK_TOKEN && tok != EOS_TOKEN {
                    *counts.entry(tok.as_str()).or_insert(0) += 1;
                }
            }
        }
        if counts.is_empty() {
            return Err(Error::EmptyCorpus(
                "no tokens found while building vocabulary".into(),
            ));
        }
        let mut types: Vec<(&str, u64)> = counts.into_iter().collect();
        types.sort_by(|(ta, ca), (tb, cb)| cb.cmp(ca).then_with(|| ta.cmp(tb)));

        let mut token_of: Vec<String> = types.iter().map(|(t, _)| (*t).to_string()).collect();
        let unk_id = token_of.len() as u32;
        token_of.push(UNK_TOKEN.to_string());
        let eos_id = token_of.len() as u32;
        token_of.push(EOS_TOKEN.to_string());

        let id_of = token_of
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();

        Ok(Vocabulary {
            id_of,
            token_of,
            unk_id,
            eos_id,
        })
    }

    pub fn size(&self) -> usize {
        self.token_of.len()
    }

    pub fn unk_id(&self) -> u32 {
        self.unk_id
    }

    pub fn eos_id(&self) -> u32 {
        self.eos_id
    }

    /// Exact lookup; `None` for unknown tokens.
    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.id_of.get(token).copied()
    }

    /// Lookup mapping unknown tokens to the UNK id.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id_of(token).unwrap_or(self.unk_id)
    }

    pub fn token_of(&self, id: u32) -> &str {
        &self.token_of[id as usize]
    }

    /// Content words (reserved sentinels excluded), in id order.
    pub fn content_words(&self) -> impl Iterator<Item = &str> {
        self.token_of
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i as u32 != self.unk_id && *i as u32 != self.eos_id)
            .map(|(_, t)| t.as_str())
    }
}

/// A corpus flattened to vocabulary ids, one EOS appended per source line.
#[derive(Debug, Clone)]
pub struct EncodedCorpus {
    pub ids: Vec<u32>,
}

impl EncodedCorpus {
    pub fn token_count(&self) -> usize {
        self.ids.len()
    }
}

/// Encode tokenized lines against a vocabulary. Out-of-vocabulary tokens map
/// to UNK; each line is terminated by EOS.
pub fn encode(lines: &[Vec<String>], vocab: &Vocabulary) -> EncodedCorpus {
    let mut ids = Vec::new();
    for line in lines {
        for tok in line {
            ids.push(vocab.id_or_unk(tok));
        }
        ids.push(vocab.eos_id());
    }
    EncodedCorpus { ids }
}

/// Inverse of [`encode`] up to UNK replacement: lines are recovered by
/// splitting on EOS, and OoV tokens come back as the UNK token string.
pub fn decode(enc: &EncodedCorpus, vocab: &Vocabulary) -> Vec<Vec<String>> {
    let mut lines = Vec::new();
    let mut cur = Vec::new();
    for &id in &enc.ids {
        if id == vocab.eos_id() {
            lines.push(std::mem::take(&mut cur));
        } else {
            cur.push(vocab.token_of(id).to_string());
        }
    }
    if !cur.is_empty() {
        lines.push(cur);
    }
    lines
}

/// One truncated-BPTT step: `batch_size` rows of up to `bptt_len` positions,
/// stored row-major (`inputs[b * len + t]`). Each target is the successor of
/// its input within the row's substream.
#[derive(Debug, Clone)]
pub struct BatchStep {
    pub inputs: Vec<u32>,
    pub targets: Vec<u32>,
    pub len: usize,
}

/// The full sequence of BPTT steps over a corpus.
#[derive(Debug, Clone)]
pub struct BatchStream {
    pub batch_size: usize,
    pub bptt_len: usize,
    pub steps: Vec<BatchStep>,
}

/// Split an encoded corpus into `batch_size` contiguous equal-length
/// substreams and walk them in parallel windows of `bptt_len`. Tail tokens
/// that do not fill a full column are dropped.
pub fn batchify(enc: &EncodedCorpus, batch_size: usize, bptt_len: usize) -> Result<BatchStream> {
    if batch_size == 0 || bptt_len == 0 {
        return Err(Error::Config(
            "batch_size and bptt_len must be at least 1".into(),
        ));
    }
    let total = enc.ids.len();
    if total < batch_size * 2 {
        return Err(Error::CorpusTooSmall {
            tokens: total,
            required: batch_size * 2,
        });
    }
    let per_stream = total / batch_size;
    let mut steps = Vec::new();
    let mut pos = 0;
    // Positions per row: inputs at [pos, pos+len), targets shifted by one.
    while pos + 1 < per_stream {
        let len = bptt_len.min(per_stream - 1 - pos);
        let mut inputs = Vec::with_capacity(batch_size * len);
        let mut targets = Vec::with_capacity(batch_size * len);
        for b in 0..batch_size {
            let base = b * per_stream + pos;
            inputs.extend_from_slice(&enc.ids[base..base + len]);
            targets.extend_from_slice(&enc.ids[base + 1..base + 1 + len]);
        }
        steps.push(BatchStep {
            inputs,
            targets,
            len,
        });
        pos += len;
    }
    Ok(BatchStream {
        batch_size,
        bptt_len,
        steps,
    })
}

/// Corpus statistics in the shape reported for dataset tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorpusStats {
    pub token_count: usize,
    pub type_count: usize,
    pub type_token_ratio: f64,
    pub oov_rate: f64,
}

/// Compute training-side token/type counts and the evaluation-split OoV rate
/// against the training vocabulary. Reserved sentinels do not count as types.
pub fn corpus_stats(
    train: &[Vec<String>],
    eval_split: &[Vec<String>],
    vocab: &Vocabulary,
) -> CorpusStats {
    let mut token_count = 0usize;
    let mut types: HashMap<&str, ()> = HashMap::new();
    for line in train {
        for tok in line {
            token_count += 1;
            if tok != UNK_TOKEN && tok != EOS_TOKEN {
                types.insert(tok.as_str(), ());
            }
        }
    }
    let type_count = types.len();
    let type_token_ratio = if token_count > 0 {
        type_count as f64 / token_count as f64
    } else {
        0.0
    };

    let mut eval_tokens = 0usize;
    let mut oov = 0usize;
    for line in eval_split {
        for tok in line {
            eval_tokens += 1;
            if vocab.id_of(tok).is_none() {
                oov += 1;
            }
        }
    }
    let oov_rate = if eval_tokens > 0 {
        oov as f64 / eval_tokens as f64
    } else {
        0.0
    };

    CorpusStats {
        token_count,
        type_count,
        type_token_ratio,
        oov_rate,
    }
}
