//! The multi-seed, multi-variant experiment sweep.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use stemlm_core::corpus::{encode, read_corpus, EncodedCorpus, Vocabulary};
use stemlm_core::error::{Error, Result};
use stemlm_core::eval::{self, ReportRow, SeedAggregate};
use stemlm_core::models::{self, EpochLog, Model, StemClasses, Variant};
use stemlm_core::stemmer::{derive_stem_map, StemMap};

use crate::config::RunConfig;

#[derive(Debug, Clone, Serialize)]
pub struct StemmerInfo {
    pub source: String,
    pub delta_s: Option<u64>,
    pub delta_p: Option<u64>,
    pub suffix_rule_count: Option<usize>,
    pub prefix_rule_count: Option<usize>,
    pub stem_class_count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Baselines {
    /// Uniform next-token baseline: the vocabulary size.
    pub uniform: f64,
    pub dev_unigram_word: f64,
    pub test_unigram_word: f64,
    pub dev_unigram_stem: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub model: String,
    pub seed: u64,
    pub test_perplexity: f64,
    pub final_dev_perplexity: f64,
    pub log: Vec<EpochLog>,
}

#[derive(Debug, Serialize)]
pub struct ExperimentReport {
    pub corpus: String,
    pub control: bool,
    pub rows: Vec<ReportRow>,
    pub control_comparison: Option<eval::ControlComparison>,
    pub baselines: Baselines,
    pub stemmer: Option<StemmerInfo>,
    pub runs: Vec<RunRecord>,
    pub config: RunConfig,
}

pub struct Prepared {
    pub vocab: Vocabulary,
    pub train_enc: EncodedCorpus,
    pub dev_enc: EncodedCorpus,
    pub test_enc: EncodedCorpus,
    pub classes: Option<StemClasses>,
    pub shuffled_classes: Option<StemClasses>,
    pub stemmer_info: Option<StemmerInfo>,
}

/// Load corpora and resolve the stem map (loading it when a path is given,
/// mining it otherwise). The mined map and rule dumps are written to
/// `out_dir` for provenance.
pub fn prepare(cfg: &RunConfig, need_stems: bool, control: bool, out_dir: &Path) -> Result<Prepared> {
    let train_path = RunConfig::require_file(&cfg.paths.train, "paths.train")?;
    let dev_path = RunConfig::require_file(&cfg.paths.dev, "paths.dev")?;
    let test_path = RunConfig::require_file(&cfg.paths.test, "paths.test")?;

    let train_lines = read_corpus(&train_path)?;
    let dev_lines = read_corpus(&dev_path)?;
    let test_lines = read_corpus(&test_path)?;
    let vocab = Vocabulary::build(&train_lines)?;
    let train_enc = encode(&train_lines, &vocab);
    let dev_enc = encode(&dev_lines, &vocab);
    let test_enc = encode(&test_lines, &vocab);

    let (classes, shuffled_classes, stemmer_info) = if need_stems {
        let (map, info) = match &cfg.paths.stem_map {
            Some(path) => {
                let map = StemMap::load(path, &vocab)?;
                let info = StemmerInfo {
                    source: format!("loaded from {}", path.display()),
                    delta_s: None,
                    delta_p: None,
                    suffix_rule_count: None,
                    prefix_rule_count: None,
                    stem_class_count: map.classes().len(),
                };
                (map, info)
            }
            None => {
                let words: Vec<String> = vocab.content_words().map(String::from).collect();
                let out = derive_stem_map(&words, &cfg.stemmer);
                let info = StemmerInfo {
                    source: "mined".into(),
                    delta_s: Some(out.delta_s),
                    delta_p: Some(out.delta_p),
                    suffix_rule_count: Some(out.suffix_rules.len()),
                    prefix_rule_count: Some(out.prefix_rules.len()),
                    stem_class_count: out.stem_map.classes().len(),
                };
                std::fs::create_dir_all(out_dir)?;
                out.stem_map.save(out_dir.join("stems.tsv"))?;
                std::fs::write(out_dir.join("rules_suffix.tsv"), out.suffix_rules.to_tsv())?;
                std::fs::write(out_dir.join("rules_prefix.tsv"), out.prefix_rules.to_tsv())?;
                (out.stem_map, info)
            }
        };
        let classes = StemClasses::new(map.to_id_map(&vocab)?)?;
        let shuffled = if control {
            let shuffled_map = map.shuffle(cfg.shuffle_seed);
            Some(StemClasses::new(shuffled_map.to_id_map(&vocab)?)?)
        } else {
            None
        };
        (Some(classes), shuffled, Some(info))
    } else {
        (None, None, None)
    };

    Ok(Prepared {
        vocab,
        train_enc,
        dev_enc,
        test_enc,
        classes,
        shuffled_classes,
        stemmer_info,
    })
}

/// Train one (variant, seed) run and score it on the test split.
fn run_job(
    cfg: &RunConfig,
    prepared: &Prepared,
    variant: Variant,
    seed: u64,
    shuffled: bool,
) -> Result<(Model, RunRecord)> {
    let classes = if shuffled {
        prepared.shuffled_classes.as_ref()
    } else {
        prepared.classes.as_ref()
    };
    let model_config = cfg
        .model
        .to_model_config(prepared.vocab.size(), variant, seed);
    let flags = cfg.eval.flags();
    let outcome = models::train(
        &model_config,
        variant,
        &cfg.train,
        &prepared.train_enc,
        &prepared.dev_enc,
        &prepared.vocab,
        classes,
        flags,
    )?;
    let target_map = if variant.primary_predicts_stems() {
        classes.map(|c| c.stem_ids())
    } else {
        None
    };
    let test = eval::perplexity_mapped(
        &outcome.model,
        &prepared.test_enc,
        &prepared.vocab,
        flags,
        target_map,
    )?;
    let label = if shuffled {
        format!("{variant}-shuffled")
    } else {
        variant.to_string()
    };
    let record = RunRecord {
        model: label,
        seed,
        test_perplexity: test.perplexity,
        final_dev_perplexity: outcome.log.last().map(|l| l.dev_ppl).unwrap_or(f64::NAN),
        log: outcome.log,
    };
    Ok((outcome.model, record))
}

/// Run the full sweep. When `control` is set, an extra stem-mixture arm is
/// trained per seed on the shuffled stem assignment and composed against
/// the same word mixtures.
pub fn run_experiment(cfg: &RunConfig, control: bool, out_dir: &Path) -> Result<ExperimentReport> {
    if cfg.seeds.len() < 2 {
        return Err(Error::Config(format!(
            "experiments need at least 2 seeds, got {}",
            cfg.seeds.len()
        )));
    }
    if cfg.variants.is_empty() {
        return Err(Error::Config("no variants configured".into()));
    }
    let has_mix_pair = cfg.variants.contains(&Variant::MixW) && cfg.variants.contains(&Variant::MixStem);
    if control && !has_mix_pair {
        return Err(Error::Config(
            "--control requires both mix-w and mix-stem among the variants".into(),
        ));
    }
    let need_stems = control || cfg.variants.iter().any(|v| v.needs_stem_map());
    let prepared = prepare(cfg, need_stems, control, out_dir)?;
    let flags = cfg.eval.flags();

    // Job list in deterministic order: configured variants × seeds, then the
    // shuffled control arm.
    let mut jobs: Vec<(Variant, u64, bool)> = Vec::new();
    for &variant in &cfg.variants {
        for &seed in &cfg.seeds {
            jobs.push((variant, seed, false));
        }
    }
    if control {
        for &seed in &cfg.seeds {
            jobs.push((Variant::MixStem, seed, true));
        }
    }

    use rayon::prelude::*;
    let results: Vec<Result<(Model, RunRecord)>> = jobs
        .par_iter()
        .map(|&(variant, seed, shuffled)| run_job(cfg, &prepared, variant, seed, shuffled))
        .collect();

    let mut models_by_run: BTreeMap<(String, u64), Model> = BTreeMap::new();
    let mut runs: Vec<RunRecord> = Vec::new();
    let mut failures: Vec<(u64, String)> = Vec::new();
    for (job, result) in jobs.iter().zip(results) {
        match result {
            Ok((model, record)) => {
                models_by_run.insert((record.model.clone(), record.seed), model);
                runs.push(record);
            }
            Err(e) => failures.push((job.1, e.to_string())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::FailedSeeds { failures });
    }

    // Per-variant aggregates in the configured order.
    let mut rows: Vec<ReportRow> = Vec::new();
    for &variant in &cfg.variants {
        let per_seed: Vec<(u64, f64)> = runs
            .iter()
            .filter(|r| r.model == variant.to_string())
            .map(|r| (r.seed, r.test_perplexity))
            .collect();
        rows.push(ReportRow {
            model: variant.to_string(),
            aggregate: eval::aggregate(per_seed),
        });
    }

    // Composed word/stem row whenever both mixtures were trained.
    let mut control_comparison = None;
    if has_mix_pair {
        let classes = prepared.classes.as_ref().expect("stems prepared");
        let compose_ppl = |stem_label: &str, seed: u64| -> Result<f64> {
            let p = models_by_run
                .get(&(Variant::MixW.to_string(), seed))
                .expect("word mixture trained");
            let q = models_by_run
                .get(&(stem_label.to_string(), seed))
                .expect("stem mixture trained");
            Ok(eval::perplexity_mixws(
                p,
                q,
                &prepared.test_enc,
                &prepared.vocab,
                classes,
                flags,
            )?
            .perplexity)
        };
        let mut true_arm: Vec<(u64, f64)> = Vec::new();
        for &seed in &cfg.seeds {
            true_arm.push((seed, compose_ppl("mix-stem", seed)?));
        }
        let true_agg = eval::aggregate(true_arm);
        rows.push(ReportRow {
            model: "mix-ws".into(),
            aggregate: true_agg.clone(),
        });

        if control {
            let mut shuffled_arm: Vec<(u64, f64)> = Vec::new();
            for &seed in &cfg.seeds {
                shuffled_arm.push((seed, compose_ppl("mix-stem-shuffled", seed)?));
            }
            let shuffled_agg: SeedAggregate = eval::aggregate(shuffled_arm);
            rows.push(ReportRow {
                model: "mix-ws-shuffled".into(),
                aggregate: shuffled_agg.clone(),
            });
            control_comparison = Some(eval::ControlComparison {
                true_stems: true_agg,
                shuffled_stems: shuffled_agg,
                shuffle_seed: cfg.shuffle_seed,
            });
        }
    }

    let dev_unigram_word = eval::unigram_perplexity(
        &prepared.train_enc,
        &prepared.dev_enc,
        &prepared.vocab,
        flags,
        None,
    )?
    .perplexity;
    let test_unigram_word = eval::unigram_perplexity(
        &prepared.train_enc,
        &prepared.test_enc,
        &prepared.vocab,
        flags,
        None,
    )?
    .perplexity;
    let dev_unigram_stem = match prepared.classes.as_ref() {
        Some(classes) => Some(
            eval::unigram_perplexity(
                &prepared.train_enc,
                &prepared.dev_enc,
                &prepared.vocab,
                flags,
                Some(classes.stem_ids()),
            )?
            .perplexity,
        ),
        None => None,
    };

    let corpus = cfg
        .paths
        .train
        .as_ref()
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());

    Ok(ExperimentReport {
        corpus,
        control,
        rows,
        control_comparison,
        baselines: Baselines {
            uniform: prepared.vocab.size() as f64,
            dev_unigram_word,
            test_unigram_word,
            dev_unigram_stem,
        },
        stemmer: prepared.stemmer_info,
        runs,
        config: cfg.clone(),
    })
}

/// Serialize the report and its table renderings into `out_dir`.
pub fn write_report(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("report.json"),
        serde_json::to_string_pretty(report)?,
    )?;
    std::fs::write(
        out_dir.join("table.tsv"),
        eval::table_tsv(&report.corpus, &report.rows),
    )?;
    std::fs::write(
        out_dir.join("long.tsv"),
        eval::long_tsv(&report.corpus, &report.rows),
    )?;
    let logs_dir = out_dir.join("logs");
    std::fs::create_dir_all(&logs_dir)?;
    for run in &report.runs {
        let mut text = String::new();
        for line in &run.log {
            text.push_str(&serde_json::to_string(line)?);
            text.push('\n');
        }
        std::fs::write(
            logs_dir.join(format!("{}-seed{}.jsonl", run.model, run.seed)),
            text,
        )?;
    }
    Ok(())
}
