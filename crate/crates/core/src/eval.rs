//! Perplexity evaluation, stem-sliced breakdowns, multi-seed aggregation,
//! and the randomized-stem control comparison.
//!
//! Evaluation walks the full encoded stream sequentially with one EOS
//! prepended as the initial context, so every corpus token is a scored
//! target. Contexts are never truncated; slicing only masks which targets
//! enter the mean.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedCorpus, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{mixws_compose_log, Model, StemClasses};
use crate::numerics::Graph;

/// Which target tokens enter the perplexity mean.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalFlags {
    pub include_unk: bool,
    pub include_eos: bool,
}

impl Default for EvalFlags {
    fn default() -> Self {
        EvalFlags {
            include_unk: true,
            include_eos: true,
        }
    }
}

/// Per-target log-probabilities over one evaluation stream.
#[derive(Debug, Clone)]
pub struct ScoredStream {
    /// Original target ids (before any stem mapping).
    pub targets: Vec<u32>,
    /// Log-probability assigned to each (possibly stem-mapped) target.
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PerplexityOutcome {
    pub perplexity: f64,
    /// Number of targets that entered the mean.
    pub token_count: usize,
}

const EVAL_WINDOW: usize = 128;

fn eval_inputs(enc: &EncodedCorpus, vocab: &Vocabulary) -> Result<Vec<u32>> {
    if enc.ids.is_empty() {
        return Err(Error::EmptyCorpus("evaluation corpus has no tokens".into()));
    }
    if let Some(&bad) = enc.ids.iter().find(|&&id| id as usize >= vocab.size()) {
        return Err(Error::VocabMismatch(format!(
            "corpus id {bad} is outside the vocabulary (size {})",
            vocab.size()
        )));
    }
    let mut inputs = Vec::with_capacity(enc.ids.len());
    inputs.push(vocab.eos_id());
    inputs.extend_from_slice(&enc.ids[..enc.ids.len() - 1]);
    Ok(inputs)
}

fn check_model_vocab(model: &Model, vocab: &Vocabulary) -> Result<()> {
    if model.config.vocab_size != vocab.size() {
        return Err(Error::VocabMismatch(format!(
            "model vocabulary {} != corpus vocabulary {}",
            model.config.vocab_size,
            vocab.size()
        )));
    }
    Ok(())
}

/// Score every target of the stream under the model's primary head.
/// `target_map` rewrites target ids before scoring (stem-target models).
pub fn score_stream(
    model: &Model,
    enc: &EncodedCorpus,
    vocab: &Vocabulary,
    target_map: Option<&[u32]>,
) -> Result<ScoredStream> {
    check_model_vocab(model, vocab)?;
    let inputs = eval_inputs(enc, vocab)?;
    let targets = &enc.ids;
    let mut state = model.init_state(1);
    let mut log_probs = Vec::with_capacity(targets.len());

    let mut pos = 0;
    while pos < targets.len() {
        let len = EVAL_WINDOW.min(targets.len() - pos);
        let mut g = Graph::new();
        let lp = model.window_log_probs(&mut g, &inputs[pos..pos + len], 1, len, &mut state)?;
        let t = g.value(lp);
        for i in 0..len {
            let target = targets[pos + i];
            let scored = match target_map {
                Some(map) => map[target as usize],
                None => target,
            };
            log_probs.push(t.get(i, scored as usize));
        }
        pos += len;
    }

    Ok(ScoredStream {
        targets: targets.clone(),
        log_probs,
    })
}

/// Score the stream under the composed word/stem model: the word mixture
/// `p_model` and stem mixture `q_model` run in parallel over the same
/// tokens, composing per position.
pub fn score_stream_mixws(
    p_model: &Model,
    q_model: &Model,
    enc: &EncodedCorpus,
    vocab: &Vocabulary,
    classes: &StemClasses,
) -> Result<ScoredStream> {
    check_model_vocab(p_model, vocab)?;
    check_model_vocab(q_model, vocab)?;
    if classes.vocab_size() != vocab.size() {
        return Err(Error::VocabMismatch(format!(
            "stem map covers {} ids, vocabulary has {}",
            classes.vocab_size(),
            vocab.size()
        )));
    }
    let inputs = eval_inputs(enc, vocab)?;
    let targets = &enc.ids;
    let mut p_state = p_model.init_state(1);
    let mut q_state = q_model.init_state(1);
    let mut log_probs = Vec::with_capacity(targets.len());

    let mut pos = 0;
    while pos < targets.len() {
        let len = EVAL_WINDOW.min(targets.len() - pos);
        let window = &inputs[pos..pos + len];
        let mut g = Graph::new();
        let p_lp = p_model.window_log_probs(&mut g, window, 1, len, &mut p_state)?;
        let q_lp = q_model.window_log_probs(&mut g, window, 1, len, &mut q_state)?;
        let (pt, qt) = (g.value(p_lp).clone(), g.value(q_lp).clone());
        for i in 0..len {
            let composed = mixws_compose_log(pt.row(i), qt.row(i), classes)?;
            log_probs.push(composed[targets[pos + i] as usize]);
        }
        pos += len;
    }

    Ok(ScoredStream {
        targets: targets.clone(),
        log_probs,
    })
}

/// Perplexity over the masked targets of a scored stream.
pub fn stream_perplexity(
    scored: &ScoredStream,
    vocab: &Vocabulary,
    flags: EvalFlags,
    slice: Option<(&BTreeSet<u32>, &StemClasses)>,
) -> Result<PerplexityOutcome> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &t) in scored.targets.iter().enumerate() {
        if !flags.include_unk && t == vocab.unk_id() {
            continue;
        }
        if !flags.include_eos && t == vocab.eos_id() {
            continue;
        }
        if let Some((set, classes)) = slice {
            if !set.contains(&classes.stem_of(t)) {
                continue;
            }
        }
        sum += scored.log_probs[i];
        count += 1;
    }
    if count == 0 {
        return if slice.is_some() {
            Err(Error::EmptySlice)
        } else {
            Err(Error::EmptyCorpus(
                "no evaluation targets after masking".into(),
            ))
        };
    }
    Ok(PerplexityOutcome {
        perplexity: (-sum / count as f64).exp(),
        token_count: count,
    })
}

/// Perplexity of a single model over a corpus.
pub fn perplexity(
    model: &Model,
    enc: &EncodedCorpus,
    vocab: &Vocabulary,
    flags: EvalFlags,
) -> Result<PerplexityOutcome> {
    perplexity_mapped(model, enc, vocab, flags, None)
}

/// Perplexity with an optional target rewrite (stem-target models).
pub fn perplexity_mapped(
    model: &Model,
    enc: &EncodedCorpus,
    vocab: &Vocabulary,
    flags: EvalFlags,
    target_map: Option<&[u32]>,
) -> Result<PerplexityOutcome> {
    let scored = score_stream(model, enc, vocab, target_map)?;
    stream_perplexity(&scored, vocab, flags, None)
}

/// Perplexity of the composed word/stem model.
pub fn perplexity_mixws(
    p_model: &Model,
    q_model: &Model,
    enc: &EncodedCorpus,
    vocab: &Vocabulary,
    classes: &StemClasses,
    flags: EvalFlags,
) -> Result<PerplexityOutcome> {
    let scored = score_stream_mixws(p_model, q_model, enc, vocab, classes)?;
    stream_perplexity(&scored, vocab, flags, None)
}

/// Stems whose class has at least `min_types` distinct word types and whose
/// class members total at least `min_tokens` occurrences in training data.
pub fn select_diverse_stems(
    classes: &StemClasses,
    train_enc: &EncodedCorpus,
    min_types: usize,
    min_tokens: usize,
) -> BTreeSet<u32> {
    let mut counts = vec![0usize; classes.vocab_size()];
    for &id in &train_enc.ids {
        if (id as usize) < counts.len() {
            counts[id as usize] += 1;
        }
    }
    let mut out = BTreeSet::new();
    for (stem, members) in classes.classes() {
        let types = members.len();
        let tokens: usize = members.iter().map(|&w| counts[w as usize]).sum();
        if types >= min_types && tokens >= min_tokens {
            out.insert(*stem);
        }
    }
    out
}

/// Perplexity restricted to targets whose stem is in `stem_set`; contexts
/// remain full.
pub fn slice_perplexity(
    scored: &ScoredStream,
    vocab: &Vocabulary,
    flags: EvalFlags,
    stem_set: &BTreeSet<u32>,
    classes: &StemClasses,
) -> Result<PerplexityOutcome> {
    if stem_set.is_empty() {
        return Err(Error::Config("stem set for slicing is empty".into()));
    }
    stream_perplexity(scored, vocab, flags, Some((stem_set, classes)))
}

/// One seed's test perplexity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub perplexity: f64,
}

/// Per-seed perplexities with their mean and sample standard deviation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub per_seed: Vec<SeedResult>,
    pub mean: f64,
    pub std_dev: f64,
}

/// Aggregate per-seed results; ordering of the input does not matter.
pub fn aggregate(results: Vec<(u64, f64)>) -> SeedAggregate {
    let mut per_seed: Vec<SeedResult> = results
        .into_iter()
        .map(|(seed, perplexity)| SeedResult { seed, perplexity })
        .collect();
    per_seed.sort_by_key(|r| r.seed);
    let n = per_seed.len();
    let mean = per_seed.iter().map(|r| r.perplexity).sum::<f64>() / n as f64;
    let std_dev = if n > 1 {
        let var = per_seed
            .iter()
            .map(|r| (r.perplexity - mean).powi(2))
            .sum::<f64>()
            / (n - 1) as f64;
        var.sqrt()
    } else {
        0.0
    };
    SeedAggregate {
        per_seed,
        mean,
        std_dev,
    }
}

/// Run one evaluation per seed (in parallel) and aggregate. Any failing
/// seed fails the aggregate, listing the failures.
pub fn multi_seed_run<F>(seeds: &[u64], run: F) -> Result<SeedAggregate>
where
    F: Fn(u64) -> Result<f64> + Sync,
{
    if seeds.len() < 2 {
        return Err(Error::Config(format!(
            "multi-seed runs need at least 2 seeds, got {}",
            seeds.len()
        )));
    }
    let results: Vec<(u64, Result<f64>)> =
        seeds.par_iter().map(|&seed| (seed, run(seed))).collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(ppl) => ok.push((seed, ppl)),
            Err(e) => failures.push((seed, e.to_string())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::FailedSeeds { failures });
    }
    Ok(aggregate(ok))
}

/// Paired aggregates for the true stem map and a size-preserving random
/// reassignment of words to stems.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ControlComparison {
    pub true_stems: SeedAggregate,
    pub shuffled_stems: SeedAggregate,
    pub shuffle_seed: u64,
}

/// Run the control experiment: each seed is evaluated once with the true
/// stem assignment and once with the shuffled one.
pub fn control_comparison<F>(seeds: &[u64], shuffle_seed: u64, run: F) -> Result<ControlComparison>
where
    F: Fn(u64, bool) -> Result<f64> + Sync,
{
    let true_stems = multi_seed_run(seeds, |s| run(s, false))?;
    let shuffled_stems = multi_seed_run(seeds, |s| run(s, true))?;
    Ok(ControlComparison {
        true_stems,
        shuffled_stems,
        shuffle_seed,
    })
}

/// Add-one-smoothed unigram perplexity of `eval_enc` under training counts,
/// with targets optionally rewritten (stem-target baseline).
pub fn unigram_perplexity(
    train_enc: &EncodedCorpus,
    eval_enc: &EncodedCorpus,
    vocab: &Vocabulary,
    flags: EvalFlags,
    target_map: Option<&[u32]>,
) -> Result<PerplexityOutcome> {
    let v = vocab.size();
    let mut counts = vec![0u64; v];
    let mut total = 0u64;
    for &id in &train_enc.ids {
        let mapped = match target_map {
            Some(map) => map[id as usize],
            None => id,
        };
        counts[mapped as usize] += 1;
        total += 1;
    }
    let denom = (total + v as u64) as f64;
    let mut sum = 0.0;
    let mut count = 0usize;
    for &t in &eval_enc.ids {
        if !flags.include_unk && t == vocab.unk_id() {
            continue;
        }
        if !flags.include_eos && t == vocab.eos_id() {
            continue;
        }
        let mapped = match target_map {
            Some(map) => map[t as usize],
            None => t,
        };
        sum += (((counts[mapped as usize] + 1) as f64) / denom).ln();
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyCorpus("no unigram evaluation targets".into()));
    }
    Ok(PerplexityOutcome {
        perplexity: (-sum / count as f64).exp(),
        token_count: count,
    })
}

/// One row of a results table: a model name with its seed aggregate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    pub aggregate: SeedAggregate,
}

/// Render rows-by-corpus TSV with `mean ±std` cells.
pub fn table_tsv(corpus_name: &str, rows: &[ReportRow]) -> String {
    let mut out = format!("model\t{corpus_name}\n");
    for row in rows {
        out.push_str(&format!(
            "{}\t{:.2} ±{:.2}\n",
            row.model, row.aggregate.mean, row.aggregate.std_dev
        ));
    }
    out
}

/// Plot-ready long format: one line per (model, seed) pair.
pub fn long_tsv(corpus_name: &str, rows: &[ReportRow]) -> String {
    let mut out = String::from("model\tcorpus\tseed\tperplexity\n");
    for row in rows {
        for r in &row.aggregate.per_seed {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                row.model, corpus_name, r.seed, r.perplexity
            ));
        }
    }
    out
}
