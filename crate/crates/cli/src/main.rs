//! `stemlm`: stem-driven language modeling toolkit.
//!
//! Subcommands: `stats`, `stem`, `synth`, `train`, `eval`, `experiment`.
//! All commands are driven by an optional JSON config (`--config`); flags
//! override config fields. Exit codes: 0 success, 2 usage/config error,
//! 3 runtime/data error; errors are emitted as JSON on stderr.

mod config;
mod experiment;

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use stemlm_core::corpus::{self, read_corpus, Vocabulary};
use stemlm_core::error::{Error, Result};
use stemlm_core::eval as core_eval;
use stemlm_core::models::{
    self, load_checkpoint, save_checkpoint, Checkpoint, StemClasses, Variant,
};
use stemlm_core::stemmer::{derive_stem_map, StemMap};
use stemlm_core::synth;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "stemlm",
    version,
    about = "Stem-driven neural language models: stemming, training, and perplexity evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Overrides {
    /// Training corpus (one sentence per line, whitespace tokenized)
    #[arg(long)]
    train: Option<PathBuf>,
    /// Development corpus
    #[arg(long)]
    dev: Option<PathBuf>,
    /// Test corpus
    #[arg(long)]
    test: Option<PathBuf>,
    /// Stem-map TSV (word<TAB>stem per line)
    #[arg(long)]
    stem_map: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    bptt_len: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    num_layers: Option<usize>,
    #[arg(long)]
    k_mixtures: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    mtl_lambda: Option<f64>,
    #[arg(long)]
    s2w_switch_epoch: Option<usize>,
    #[arg(long)]
    delta_s: Option<u64>,
    #[arg(long)]
    delta_p: Option<u64>,
    #[arg(long)]
    max_suffix_len: Option<usize>,
    #[arg(long)]
    max_prefix_len: Option<usize>,
    /// Calibrate delta-s so the rule set has at most this many distinct suffixes
    #[arg(long)]
    target_suffix_count: Option<usize>,
    #[arg(long)]
    include_unk: Option<bool>,
    #[arg(long)]
    include_eos: Option<bool>,
}

impl Overrides {
    fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        if let Some(p) = &self.train {
            cfg.paths.train = Some(p.clone());
        }
        if let Some(p) = &self.dev {
            cfg.paths.dev = Some(p.clone());
        }
        if let Some(p) = &self.test {
            cfg.paths.test = Some(p.clone());
        }
        if let Some(p) = &self.stem_map {
            cfg.paths.stem_map = Some(p.clone());
        }
        set!(cfg.train.epochs, self.epochs);
        set!(cfg.train.batch_size, self.batch_size);
        set!(cfg.train.bptt_len, self.bptt_len);
        set!(cfg.train.optimizer.learning_rate, self.learning_rate);
        set!(cfg.train.optimizer.lr_decay, self.lr_decay);
        set!(cfg.train.clip_norm, self.clip_norm);
        set!(cfg.model.embed_dim, self.embed_dim);
        set!(cfg.model.hidden_dim, self.hidden_dim);
        set!(cfg.model.num_layers, self.num_layers);
        set!(cfg.model.k_mixtures, self.k_mixtures);
        set!(cfg.model.dropout, self.dropout);
        set!(cfg.model.mtl_lambda, self.mtl_lambda);
        set!(cfg.model.s2w_switch_epoch, self.s2w_switch_epoch);
        if self.delta_s.is_some() {
            cfg.stemmer.delta_s = self.delta_s;
        }
        if self.delta_p.is_some() {
            cfg.stemmer.delta_p = self.delta_p;
        }
        set!(cfg.stemmer.max_suffix_len, self.max_suffix_len);
        set!(cfg.stemmer.max_prefix_len, self.max_prefix_len);
        if self.target_suffix_count.is_some() {
            cfg.stemmer.target_suffix_count = self.target_suffix_count;
        }
        set!(cfg.eval.include_unk, self.include_unk);
        set!(cfg.eval.include_eos, self.include_eos);
    }
}

#[derive(Subcommand)]
enum Command {
    /// Corpus statistics: tokens, types, type/token ratio, OoV rate
    Stats {
        #[arg(long)]
        train: PathBuf,
        /// Evaluation split for the OoV rate
        #[arg(long)]
        eval: PathBuf,
        /// Output JSON file (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mine affix rules and write the stem map plus rule dumps
    Stem {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Generate a synthetic stem×suffix corpus
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stems: Option<usize>,
        #[arg(long)]
        suffixes: Option<usize>,
        #[arg(long)]
        zipf_exponent: Option<f64>,
        #[arg(long)]
        train_tokens: Option<usize>,
        #[arg(long)]
        dev_tokens: Option<usize>,
        #[arg(long)]
        test_tokens: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one model variant and write a checkpoint plus a JSON-lines log
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        variant: Variant,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output directory (overrides paths.out_dir)
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Evaluate a checkpoint, or compose word and stem mixtures
    Eval {
        /// Model checkpoint (the word mixture when composing)
        #[arg(long)]
        checkpoint: PathBuf,
        /// Stem-mixture checkpoint; enables word/stem composition
        #[arg(long)]
        stem_checkpoint: Option<PathBuf>,
        /// Training corpus; defines the vocabulary
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        stem_map: Option<PathBuf>,
        /// Also report perplexity restricted to frequent, diverse stems
        #[arg(long)]
        slice_diverse_stems: bool,
        #[arg(long)]
        min_types: Option<usize>,
        #[arg(long)]
        min_tokens: Option<usize>,
        #[arg(long)]
        include_unk: Option<bool>,
        #[arg(long)]
        include_eos: Option<bool>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Multi-seed, multi-variant sweep with aggregated reporting
    Experiment {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add the shuffled-stem control arm
        #[arg(long)]
        control: bool,
        /// Comma-separated seed list, e.g. 1,2,3,4,5
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Comma-separated variant list
        #[arg(long, value_delimiter = ',')]
        variants: Option<Vec<String>>,
        #[arg(long)]
        shuffle_seed: Option<u64>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn emit_error(kind: &str, message: &str) {
    eprintln!(
        "{}",
        serde_json::json!({"error": {"kind": kind, "message": message}})
    );
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            emit_error("usage", &e.to_string());
            std::process::exit(2);
        }
    };
    if let Err(e) = run(cli) {
        let (kind, code) = if e.is_config() {
            ("config", 2)
        } else {
            ("runtime", 3)
        };
        emit_error(kind, &e.to_string());
        std::process::exit(code);
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_or_print(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(path, text)?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { train, eval, out } => cmd_stats(train, eval, out),
        Command::Stem {
            config,
            out,
            overrides,
        } => cmd_stem(config, out, overrides),
        Command::Synth {
            config,
            out,
            stems,
            suffixes,
            zipf_exponent,
            train_tokens,
            dev_tokens,
            test_tokens,
            seed,
        } => {
            let mut cfg = load_config(&config)?;
            macro_rules! set {
                ($field:expr, $value:expr) => {
                    if let Some(v) = $value {
                        $field = v;
                    }
                };
            }
            set!(cfg.synth.n_stems, stems);
            set!(cfg.synth.n_suffixes, suffixes);
            set!(cfg.synth.zipf_exponent, zipf_exponent);
            set!(cfg.synth.train_tokens, train_tokens);
            set!(cfg.synth.dev_tokens, dev_tokens);
            set!(cfg.synth.test_tokens, test_tokens);
            set!(cfg.synth.seed, seed);
            cmd_synth(&cfg, out)
        }
        Command::Train {
            config,
            variant,
            seed,
            out,
            overrides,
        } => {
            let mut cfg = load_config(&config)?;
            overrides.apply(&mut cfg);
            if let Some(out) = out {
                cfg.paths.out_dir = Some(out);
            }
            cmd_train(&cfg, variant, seed)
        }
        Command::Eval {
            checkpoint,
            stem_checkpoint,
            train,
            test,
            stem_map,
            slice_diverse_stems,
            min_types,
            min_tokens,
            include_unk,
            include_eos,
            out,
        } => cmd_eval(EvalArgs {
            checkpoint,
            stem_checkpoint,
            train,
            test,
            stem_map,
            slice_diverse_stems,
            min_types,
            min_tokens,
            include_unk,
            include_eos,
            out,
        }),
        Command::Experiment {
            config,
            out,
            control,
            seeds,
            variants,
            shuffle_seed,
            overrides,
        } => {
            let mut cfg = load_config(&config)?;
            overrides.apply(&mut cfg);
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            if let Some(names) = variants {
                let mut parsed = Vec::new();
                for name in names {
                    parsed.push(name.parse::<Variant>()?);
                }
                cfg.variants = parsed;
            }
            if let Some(s) = shuffle_seed {
                cfg.shuffle_seed = s;
            }
            if let Some(out) = out {
                cfg.paths.out_dir = Some(out);
            }
            let out_dir = cfg
                .paths
                .out_dir
                .clone()
                .ok_or_else(|| Error::Config("missing output directory (--out)".into()))?;
            let report = experiment::run_experiment(&cfg, control, &out_dir)?;
            experiment::write_report(&report, &out_dir)?;
            print!("{}", core_eval::table_tsv(&report.corpus, &report.rows));
            Ok(())
        }
    }
}

fn cmd_stats(train: PathBuf, eval: PathBuf, out: Option<PathBuf>) -> Result<()> {
    let train_path = RunConfig::require_file(&Some(train), "train")?;
    let eval_path = RunConfig::require_file(&Some(eval), "eval")?;
    let train_lines = read_corpus(&train_path)?;
    let eval_lines = read_corpus(&eval_path)?;
    let vocab = Vocabulary::build(&train_lines)?;
    let stats = corpus::corpus_stats(&train_lines, &eval_lines, &vocab);
    write_or_print(&out, &serde_json::to_string_pretty(&stats)?)
}

fn cmd_stem(config: Option<PathBuf>, out: PathBuf, overrides: Overrides) -> Result<()> {
    let mut cfg = load_config(&config)?;
    overrides.apply(&mut cfg);
    let train_path = RunConfig::require_file(&cfg.paths.train, "paths.train (--train)")?;
    let train_lines = read_corpus(&train_path)?;
    let vocab = Vocabulary::build(&train_lines)?;
    let words: Vec<String> = vocab.content_words().map(String::from).collect();
    let mined = derive_stem_map(&words, &cfg.stemmer);

    std::fs::create_dir_all(&out)?;
    let full_map = mined
        .stem_map
        .with_identity_entries([corpus::UNK_TOKEN, corpus::EOS_TOKEN]);
    full_map.save(out.join("stems.tsv"))?;
    std::fs::write(out.join("rules_suffix.tsv"), mined.suffix_rules.to_tsv())?;
    std::fs::write(out.join("rules_prefix.tsv"), mined.prefix_rules.to_tsv())?;

    #[derive(Serialize)]
    struct StemSummary {
        vocab_size: usize,
        delta_s: u64,
        delta_p: u64,
        suffix_rules: usize,
        prefix_rules: usize,
        distinct_suffixes: usize,
        stem_classes: usize,
    }
    let summary = StemSummary {
        vocab_size: vocab.size(),
        delta_s: mined.delta_s,
        delta_p: mined.delta_p,
        suffix_rules: mined.suffix_rules.len(),
        prefix_rules: mined.prefix_rules.len(),
        distinct_suffixes: mined.suffix_rules.distinct_affixes().len(),
        stem_classes: full_map.classes().len(),
    };
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, out: PathBuf) -> Result<()> {
    let corpus = synth::generate(&cfg.synth)?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("train.txt"), corpus.train.join("\n") + "\n")?;
    std::fs::write(out.join("dev.txt"), corpus.dev.join("\n") + "\n")?;
    std::fs::write(out.join("test.txt"), corpus.test.join("\n") + "\n")?;
    corpus.true_stems.save(out.join("true_stems.tsv"))?;
    std::fs::write(
        out.join("params.json"),
        serde_json::to_string_pretty(&cfg.synth)?,
    )?;
    println!(
        "{}",
        serde_json::json!({
            "out": out,
            "train_lines": corpus.train.len(),
            "dev_lines": corpus.dev.len(),
            "test_lines": corpus.test.len(),
        })
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, variant: Variant, seed: u64) -> Result<()> {
    let train_path = RunConfig::require_file(&cfg.paths.train, "paths.train (--train)")?;
    let dev_path = RunConfig::require_file(&cfg.paths.dev, "paths.dev (--dev)")?;
    let out_dir = cfg
        .paths
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("missing output directory (--out)".into()))?;

    let train_lines = read_corpus(&train_path)?;
    let dev_lines = read_corpus(&dev_path)?;
    let vocab = Vocabulary::build(&train_lines)?;
    let train_enc = corpus::encode(&train_lines, &vocab);
    let dev_enc = corpus::encode(&dev_lines, &vocab);

    let classes = if variant.needs_stem_map() {
        let map_path = cfg.paths.stem_map.clone().ok_or_else(|| {
            Error::Config(format!(
                "variant {variant} requires a stem map (--stem-map or paths.stem_map)"
            ))
        })?;
        let map = StemMap::load(&map_path, &vocab)?;
        Some(StemClasses::new(map.to_id_map(&vocab)?)?)
    } else {
        None
    };

    let model_config = cfg.model.to_model_config(vocab.size(), variant, seed);
    let outcome = models::train(
        &model_config,
        variant,
        &cfg.train,
        &train_enc,
        &dev_enc,
        &vocab,
        classes.as_ref(),
        cfg.eval.flags(),
    )?;

    std::fs::create_dir_all(&out_dir)?;
    let ckpt_path = out_dir.join(format!("{variant}-seed{seed}.ckpt"));
    let log_path = out_dir.join(format!("{variant}-seed{seed}.log.jsonl"));
    let mut log_text = String::new();
    for line in &outcome.log {
        log_text.push_str(&serde_json::to_string(line)?);
        log_text.push('\n');
    }
    std::fs::write(&log_path, log_text)?;
    let final_dev = outcome.log.last().map(|l| l.dev_ppl);
    save_checkpoint(
        &Checkpoint {
            model: outcome.model,
            optimizer: outcome.optimizer,
            epoch: outcome.epochs_run,
        },
        &ckpt_path,
    )?;
    println!(
        "{}",
        serde_json::json!({
            "variant": variant.to_string(),
            "seed": seed,
            "final_dev_ppl": final_dev,
            "checkpoint": ckpt_path,
            "log": log_path,
        })
    );
    Ok(())
}

struct EvalArgs {
    checkpoint: PathBuf,
    stem_checkpoint: Option<PathBuf>,
    train: PathBuf,
    test: PathBuf,
    stem_map: Option<PathBuf>,
    slice_diverse_stems: bool,
    min_types: Option<usize>,
    min_tokens: Option<usize>,
    include_unk: Option<bool>,
    include_eos: Option<bool>,
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct SliceReport {
    stem_set_size: usize,
    slice_token_count: usize,
    slice_perplexity: f64,
}

#[derive(Serialize)]
struct EvalReport {
    model_id: String,
    mode: String,
    target: String,
    split: String,
    perplexity: f64,
    token_count: usize,
    include_unk: bool,
    include_eos: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    slice: Option<SliceReport>,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let train_path = RunConfig::require_file(&Some(args.train), "train")?;
    let test_path = RunConfig::require_file(&Some(args.test), "test")?;
    let train_lines = read_corpus(&train_path)?;
    let test_lines = read_corpus(&test_path)?;
    let vocab = Vocabulary::build(&train_lines)?;
    let train_enc = corpus::encode(&train_lines, &vocab);
    let test_enc = corpus::encode(&test_lines, &vocab);

    let mut flags = core_eval::EvalFlags::default();
    if let Some(v) = args.include_unk {
        flags.include_unk = v;
    }
    if let Some(v) = args.include_eos {
        flags.include_eos = v;
    }

    let classes = match &args.stem_map {
        Some(path) => {
            let map = StemMap::load(path, &vocab)?;
            Some(StemClasses::new(map.to_id_map(&vocab)?)?)
        }
        None => None,
    };

    let main_ckpt = load_checkpoint(&args.checkpoint)?;
    let (scored, mode, target, model_id) = match &args.stem_checkpoint {
        Some(stem_path) => {
            let stem_ckpt = load_checkpoint(stem_path)?;
            let classes = classes
                .as_ref()
                .ok_or_else(|| Error::Config("composition requires --stem-map".into()))?;
            let scored = core_eval::score_stream_mixws(
                &main_ckpt.model,
                &stem_ckpt.model,
                &test_enc,
                &vocab,
                classes,
            )?;
            let id = format!(
                "mix-ws({},{})",
                args.checkpoint.display(),
                stem_path.display()
            );
            (scored, "mix-ws", "word", id)
        }
        None => {
            let target_map = if main_ckpt.model.variant.primary_predicts_stems() {
                let classes = classes.as_ref().ok_or_else(|| {
                    Error::Config(
                        "a stem-target checkpoint needs --stem-map to score stem targets".into(),
                    )
                })?;
                Some(classes.stem_ids())
            } else {
                None
            };
            let scored = core_eval::score_stream(&main_ckpt.model, &test_enc, &vocab, target_map)?;
            let target = if target_map.is_some() { "stem" } else { "word" };
            (
                scored,
                "single",
                target,
                args.checkpoint.display().to_string(),
            )
        }
    };

    let full = core_eval::stream_perplexity(&scored, &vocab, flags, None)?;
    let slice = if args.slice_diverse_stems {
        let classes = classes
            .as_ref()
            .ok_or_else(|| Error::Config("--slice-diverse-stems requires --stem-map".into()))?;
        let stem_set: BTreeSet<u32> = core_eval::select_diverse_stems(
            classes,
            &train_enc,
            args.min_types.unwrap_or(10),
            args.min_tokens.unwrap_or(500),
        );
        let sliced = core_eval::slice_perplexity(&scored, &vocab, flags, &stem_set, classes)?;
        Some(SliceReport {
            stem_set_size: stem_set.len(),
            slice_token_count: sliced.token_count,
            slice_perplexity: sliced.perplexity,
        })
    } else {
        None
    };

    let report = EvalReport {
        model_id,
        mode: mode.to_string(),
        target: target.to_string(),
        split: test_path.display().to_string(),
        perplexity: full.perplexity,
        token_count: full.token_count,
        include_unk: flags.include_unk,
        include_eos: flags.include_eos,
        slice,
    };
    write_or_print(&args.out, &serde_json::to_string_pretty(&report)?)
}
