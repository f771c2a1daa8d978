//! Seeded synthetic corpora from a stem×suffix grammar.
//!
//! Words are `stem + suffix` over a fixed suffix inventory (the empty suffix
//! included, so bare stems occur as tokens). Sentences follow two coupled
//! Markov chains: stems move through a sparse Zipf-weighted transition
//! graph, and suffixes follow an agreement-style chain shared by all stems.
//! The result is a corpus with learnable sequential structure at both the
//! stem and the suffix level, suitable for desk-scale experiments.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stemmer::StemMap;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    pub n_stems: usize,
    pub n_suffixes: usize,
    pub zipf_exponent: f64,
    pub train_tokens: usize,
    pub dev_tokens: usize,
    pub test_tokens: usize,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            n_stems: 50,
            n_suffixes: 8,
            zipf_exponent: 1.1,
            train_tokens: 30_000,
            dev_tokens: 5_000,
            test_tokens: 5_000,
            seed: 7,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_stems < 2 || self.n_suffixes < 1 {
            return Err(Error::Config(
                "synthetic grammar needs at least 2 stems and 1 suffix".into(),
            ));
        }
        if self.train_tokens < 100 {
            return Err(Error::Config(
                "synthetic training split needs at least 100 tokens".into(),
            ));
        }
        if self.zipf_exponent < 0.0 {
            return Err(Error::Config("zipf exponent must be non-negative".into()));
        }
        Ok(())
    }
}

/// Generated splits plus the grammar's true word→stem assignment.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
    pub true_stems: StemMap,
}

const SUFFIX_INVENTORY: [&str; 12] = [
    "", "a", "i", "en", "ta", "in", "il", "us", "ne", "ko", "va", "li",
];
const CONSONANTS: [char; 8] = ['p', 't', 'k', 's', 'm', 'n', 'r', 'v'];
const VOWELS: [char; 4] = ['a', 'e', 'o', 'u'];

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        x -= w;
        if x <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

struct Grammar {
    stems: Vec<String>,
    suffixes: Vec<String>,
    stem_start: Vec<f64>,
    stem_trans: Vec<Vec<f64>>,
    suffix_start: Vec<f64>,
    suffix_trans: Vec<Vec<f64>>,
}

impl Grammar {
    fn build(params: &SynthParams, rng: &mut ChaCha8Rng) -> Result<Grammar> {
        let suffixes: Vec<String> = (0..params.n_suffixes)
            .map(|i| {
                SUFFIX_INVENTORY
                    .get(i)
                    .map(|s| s.to_string())
                    .unwrap_or_else(|| format!("x{i}"))
            })
            .collect();

        // Distinct stems; keep the family prefix-free and all stem+suffix
        // surface forms globally unique so affix mining sees clean classes.
        let mut stems: Vec<String> = Vec::with_capacity(params.n_stems);
        let mut words: HashSet<String> = HashSet::new();
        let mut attempts = 0;
        while stems.len() < params.n_stems {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::Config(
                    "could not generate a collision-free stem inventory".into(),
                ));
            }
            let syllables = 2 + (rng.random::<f64>() * 2.0) as usize; // 2..=3
            let mut stem = String::new();
            for _ in 0..syllables {
                stem.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())]);
                stem.push(VOWELS[rng.random_range(0..VOWELS.len())]);
            }
            let prefix_clash = stems
                .iter()
                .any(|s: &String| s.starts_with(&stem) || stem.starts_with(s.as_str()));
            if prefix_clash {
                continue;
            }
            let forms: Vec<String> = suffixes.iter().map(|s| format!("{stem}{s}")).collect();
            if forms.iter().any(|f| words.contains(f)) {
                continue;
            }
            words.extend(forms);
            stems.push(stem);
        }

        let zipf: Vec<f64> = (0..params.n_stems)
            .map(|i| 1.0 / ((i + 1) as f64).powf(params.zipf_exponent))
            .collect();

        // Sparse stem transitions: a handful of Zipf-weighted successors per
        // stem plus a small escape mass over everything.
        let successors = 5.min(params.n_stems);
        let escape = 0.05;
        let mut stem_trans = Vec::with_capacity(params.n_stems);
        for _ in 0..params.n_stems {
            let mut chosen: Vec<usize> = Vec::new();
            while chosen.len() < successors {
                let cand = sample_index(&zipf, rng);
                if !chosen.contains(&cand) {
                    chosen.push(cand);
                }
            }
            let local: f64 = chosen.iter().map(|&i| zipf[i]).sum();
            let total: f64 = zipf.iter().sum();
            let mut row: Vec<f64> = zipf.iter().map(|w| escape * w / total).collect();
            for &i in &chosen {
                row[i] += (1.0 - escape) * zipf[i] / local;
            }
            stem_trans.push(row);
        }

        // Suffix agreement chain: two dominant successors per suffix.
        let k = params.n_suffixes;
        let mut suffix_trans = Vec::with_capacity(k);
        for _ in 0..k {
            let main = rng.random_range(0..k);
            let second = rng.random_range(0..k);
            let mut row = vec![0.15 / k as f64; k];
            row[main] += 0.60;
            row[second] += 0.25;
            suffix_trans.push(row);
        }

        Ok(Grammar {
            stems,
            suffixes,
            stem_start: zipf,
            stem_trans,
            suffix_start: vec![1.0; k],
            suffix_trans,
        })
    }

    fn word(&self, stem: usize, suffix: usize) -> String {
        format!("{}{}", self.stems[stem], self.suffixes[suffix])
    }

    /// Emit sentences until `budget` tokens are reached (stopping at a
    /// sentence boundary).
    fn emit(&self, budget: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        let mut lines = Vec::new();
        let mut tokens = 0;
        while tokens < budget {
            let len = rng.random_range(5..=12);
            let mut stem = sample_index(&self.stem_start, rng);
            let mut suffix = sample_index(&self.suffix_start, rng);
            let mut sent = Vec::with_capacity(len);
            for _ in 0..len {
                sent.push(self.word(stem, suffix));
                stem = sample_index(&self.stem_trans[stem], rng);
                suffix = sample_index(&self.suffix_trans[suffix], rng);
            }
            tokens += sent.len();
            lines.push(sent.join(" "));
        }
        lines
    }
}

/// Generate train/dev/test splits from one seeded grammar.
pub fn generate(params: &SynthParams) -> Result<SynthCorpus> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let grammar = Grammar::build(params, &mut rng)?;

    let train = grammar.emit(params.train_tokens, &mut rng);
    let dev = grammar.emit(params.dev_tokens, &mut rng);
    let test = grammar.emit(params.test_tokens, &mut rng);

    let mut pairs = Vec::new();
    for (si, stem) in grammar.stems.iter().enumerate() {
        for (fi, _) in grammar.suffixes.iter().enumerate() {
            pairs.push((grammar.word(si, fi), stem.clone()));
        }
    }
    let true_stems = StemMap::from_pairs(pairs)?;

    Ok(SynthCorpus {
        train,
        dev,
        test,
        true_stems,
    })
}
