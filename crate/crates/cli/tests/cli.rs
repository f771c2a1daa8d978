//! Command-line behavior: outputs, exit codes, and the stderr error JSON.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stemlm"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn stemlm")
}

fn stderr_error_kind(out: &Output) -> String {
    let text = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value =
        serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr not JSON: {text}"));
    v["error"]["kind"].as_str().unwrap_or_default().to_string()
}

fn write(path: &Path, content: &str) {
    std::fs::write(path, content).unwrap();
}

struct Toy {
    _dir: tempfile::TempDir,
    train: PathBuf,
    eval: PathBuf,
}

fn toy_corpus() -> Toy {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    let eval = dir.path().join("eval.txt");
    write(&train, "a a b c\n");
    write(&eval, "a z\n");
    Toy {
        _dir: dir,
        train,
        eval,
    }
}

#[test]
fn stats_reports_hand_counted_values() {
    let toy = toy_corpus();
    let out = run(bin()
        .args(["stats", "--train"])
        .arg(&toy.train)
        .arg("--eval")
        .arg(&toy.eval));
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["token_count"], 4);
    assert_eq!(v["type_count"], 3);
    assert!((v["type_token_ratio"].as_f64().unwrap() - 0.75).abs() < 1e-12);
    assert!((v["oov_rate"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn missing_file_exits_2_with_json_error() {
    let toy = toy_corpus();
    let out = run(bin()
        .args(["stats", "--train", "/nonexistent/corpus.txt", "--eval"])
        .arg(&toy.eval));
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error_kind(&out), "config");
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/corpus.txt"));
}

#[test]
fn unknown_flag_exits_2_with_usage_error() {
    let out = run(bin().args(["stats", "--no-such-flag"]));
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error_kind(&out), "usage");
}

#[test]
fn stem_writes_the_derived_map_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    write(&train, "walk walks walked talk talks talked\n");

    let run_stem = |out_name: &str| -> PathBuf {
        let out_dir = dir.path().join(out_name);
        let out = run(bin()
            .args(["stem", "--train"])
            .arg(&train)
            .arg("--out")
            .arg(&out_dir)
            .args(["--delta-s", "2", "--delta-p", "100", "--max-suffix-len", "2"]));
        assert!(out.status.success());
        out_dir
    };
    let first = run_stem("stems1");
    let tsv = std::fs::read_to_string(first.join("stems.tsv")).unwrap();
    for (word, stem) in [
        ("walk", "walk"),
        ("walks", "walk"),
        ("walked", "walk"),
        ("talk", "talk"),
        ("talks", "talk"),
        ("talked", "talk"),
    ] {
        assert!(
            tsv.contains(&format!("{word}\t{stem}\n")),
            "missing {word}→{stem} in:\n{tsv}"
        );
    }
    let rules = std::fs::read_to_string(first.join("rules_suffix.tsv")).unwrap();
    assert!(rules.contains("suffix\ts\ted\t2"));
    assert!(rules.contains("suffix\tk\tks\t2"));

    // byte-identical on rerun
    let second = run_stem("stems2");
    for name in ["stems.tsv", "rules_suffix.tsv", "rules_prefix.tsv"] {
        assert_eq!(
            std::fs::read(first.join(name)).unwrap(),
            std::fs::read(second.join(name)).unwrap(),
            "{name} differs between identical runs"
        );
    }

    // thresholds above any support leave every word its own stem
    let out_dir = dir.path().join("identity");
    let out = run(bin()
        .args(["stem", "--train"])
        .arg(&train)
        .arg("--out")
        .arg(&out_dir)
        .args(["--delta-s", "1000", "--delta-p", "1000"]));
    assert!(out.status.success());
    let tsv = std::fs::read_to_string(out_dir.join("stems.tsv")).unwrap();
    for word in ["walk", "walks", "walked", "talk", "talks", "talked"] {
        assert!(tsv.contains(&format!("{word}\t{word}\n")));
    }
}

#[test]
fn synth_is_seed_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--train-tokens", "500", "--dev-tokens", "100", "--test-tokens", "100"];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out_dir in [&a, &b] {
        let out = run(bin().args(["synth", "--out"]).arg(out_dir).args(args));
        assert!(out.status.success());
    }
    for name in ["train.txt", "dev.txt", "test.txt", "true_stems.tsv"] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name} differs for identical seeds"
        );
    }
}

fn synth_small(dir: &Path) -> PathBuf {
    let corpus = dir.join("corpus");
    let out = run(bin().args(["synth", "--out"]).arg(&corpus).args([
        "--train-tokens",
        "1500",
        "--dev-tokens",
        "300",
        "--test-tokens",
        "300",
    ]));
    assert!(out.status.success());
    corpus
}

#[test]
fn train_writes_checkpoint_and_epoch_log() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_small(dir.path());
    let runs = dir.path().join("runs");
    let out = run(bin()
        .args(["train", "--variant", "base", "--seed", "1"])
        .arg("--train")
        .arg(corpus.join("train.txt"))
        .arg("--dev")
        .arg(corpus.join("dev.txt"))
        .arg("--out")
        .arg(&runs)
        .args([
            "--epochs", "2", "--embed-dim", "6", "--hidden-dim", "8", "--num-layers", "1",
            "--batch-size", "5", "--bptt-len", "10", "--learning-rate", "0.002",
        ]));
    assert!(out.status.success());
    assert!(runs.join("base-seed1.ckpt").is_file());
    let log = std::fs::read_to_string(runs.join("base-seed1.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);
}

#[test]
fn stem_variant_without_map_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_small(dir.path());
    let out = run(bin()
        .args(["train", "--variant", "mtl-s", "--seed", "1"])
        .arg("--train")
        .arg(corpus.join("train.txt"))
        .arg("--dev")
        .arg(corpus.join("dev.txt"))
        .arg("--out")
        .arg(dir.path().join("runs"))
        .args(["--epochs", "1"]));
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error_kind(&out), "config");
}

#[test]
fn eval_rejects_vocabulary_mismatch_with_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_small(dir.path());
    let runs = dir.path().join("runs");
    let out = run(bin()
        .args(["train", "--variant", "base", "--seed", "1"])
        .arg("--train")
        .arg(corpus.join("train.txt"))
        .arg("--dev")
        .arg(corpus.join("dev.txt"))
        .arg("--out")
        .arg(&runs)
        .args([
            "--epochs", "1", "--embed-dim", "6", "--hidden-dim", "8", "--num-layers", "1",
            "--batch-size", "5", "--bptt-len", "10",
        ]));
    assert!(out.status.success());

    // evaluating against a different vocabulary must fail
    let other = dir.path().join("other.txt");
    write(&other, "x y z x y\n");
    let out = run(bin()
        .args(["eval", "--checkpoint"])
        .arg(runs.join("base-seed1.ckpt"))
        .arg("--train")
        .arg(&other)
        .arg("--test")
        .arg(&other));
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error_kind(&out), "runtime");
}

#[test]
fn corrupted_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_small(dir.path());
    let runs = dir.path().join("runs");
    let out = run(bin()
        .args(["train", "--variant", "base", "--seed", "1"])
        .arg("--train")
        .arg(corpus.join("train.txt"))
        .arg("--dev")
        .arg(corpus.join("dev.txt"))
        .arg("--out")
        .arg(&runs)
        .args([
            "--epochs", "1", "--embed-dim", "6", "--hidden-dim", "8", "--num-layers", "1",
            "--batch-size", "5", "--bptt-len", "10",
        ]));
    assert!(out.status.success());
    let ckpt = runs.join("base-seed1.ckpt");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x11;
    std::fs::write(&ckpt, bytes).unwrap();
    let out = run(bin()
        .args(["eval", "--checkpoint"])
        .arg(&ckpt)
        .arg("--train")
        .arg(corpus.join("train.txt"))
        .arg("--test")
        .arg(corpus.join("test.txt")));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn cli_composition_matches_the_library_computation() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_small(dir.path());
    let stems_dir = dir.path().join("stems");
    assert!(run(bin()
        .args(["stem", "--train"])
        .arg(corpus.join("train.txt"))
        .arg("--out")
        .arg(&stems_dir)
        .args(["--delta-s", "5", "--delta-p", "50"]))
    .status
    .success());

    let runs = dir.path().join("runs");
    let common = [
        "--epochs", "2", "--embed-dim", "8", "--hidden-dim", "10", "--num-layers", "1",
        "--k-mixtures", "2", "--batch-size", "5", "--bptt-len", "10",
        "--learning-rate", "0.003",
    ];
    for variant in ["mix-w", "mix-stem"] {
        let mut cmd = bin();
        cmd.args(["train", "--variant", variant, "--seed", "2"])
            .arg("--train")
            .arg(corpus.join("train.txt"))
            .arg("--dev")
            .arg(corpus.join("dev.txt"))
            .arg("--out")
            .arg(&runs)
            .args(common);
        if variant == "mix-stem" {
            cmd.arg("--stem-map").arg(stems_dir.join("stems.tsv"));
        }
        assert!(run(&mut cmd).status.success());
    }

    let out = run(bin()
        .args(["eval", "--checkpoint"])
        .arg(runs.join("mix-w-seed2.ckpt"))
        .arg("--stem-checkpoint")
        .arg(runs.join("mix-stem-seed2.ckpt"))
        .arg("--stem-map")
        .arg(stems_dir.join("stems.tsv"))
        .arg("--train")
        .arg(corpus.join("train.txt"))
        .arg("--test")
        .arg(corpus.join("test.txt")));
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let cli_ppl = report["perplexity"].as_f64().unwrap();

    // recompute through the library on the same artifacts
    use stemlm_core::corpus::{encode, read_corpus, Vocabulary};
    use stemlm_core::eval as core_eval;
    use stemlm_core::models::{load_checkpoint, StemClasses};
    use stemlm_core::stemmer::StemMap;
    let train_lines = read_corpus(corpus.join("train.txt")).unwrap();
    let test_lines = read_corpus(corpus.join("test.txt")).unwrap();
    let vocab = Vocabulary::build(&train_lines).unwrap();
    let test_enc = encode(&test_lines, &vocab);
    let map = StemMap::load(stems_dir.join("stems.tsv"), &vocab).unwrap();
    let classes = StemClasses::new(map.to_id_map(&vocab).unwrap()).unwrap();
    let p = load_checkpoint(runs.join("mix-w-seed2.ckpt")).unwrap();
    let q = load_checkpoint(runs.join("mix-stem-seed2.ckpt")).unwrap();
    let lib_ppl = core_eval::perplexity_mixws(
        &p.model,
        &q.model,
        &test_enc,
        &vocab,
        &classes,
        core_eval::EvalFlags::default(),
    )
    .unwrap()
    .perplexity;
    assert_eq!(cli_ppl, lib_ppl);
}

#[test]
fn experiment_runs_two_by_two_and_controls_need_the_mix_pair() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = synth_small(dir.path());
    let out_dir = dir.path().join("exp");
    let out = run(bin()
        .args(["experiment"])
        .arg("--train")
        .arg(corpus.join("train.txt"))
        .arg("--dev")
        .arg(corpus.join("dev.txt"))
        .arg("--test")
        .arg(corpus.join("test.txt"))
        .arg("--out")
        .arg(&out_dir)
        .args([
            "--seeds", "1,2", "--variants", "base,mtl-w", "--epochs", "2",
            "--embed-dim", "6", "--hidden-dim", "8", "--num-layers", "1",
            "--batch-size", "5", "--bptt-len", "10",
        ]));
    assert!(out.status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap())
            .unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 4);
    assert_eq!(report["rows"].as_array().unwrap().len(), 2);
    let table = std::fs::read_to_string(out_dir.join("table.tsv")).unwrap();
    assert!(table.contains("base\t"));
    assert!(table.contains("mtl-w\t"));
    let long = std::fs::read_to_string(out_dir.join("long.tsv")).unwrap();
    assert_eq!(long.lines().count(), 5); // header + 4 runs

    // control without the mixture pair is a config error
    let out = run(bin()
        .args(["experiment", "--control"])
        .arg("--train")
        .arg(corpus.join("train.txt"))
        .arg("--dev")
        .arg(corpus.join("dev.txt"))
        .arg("--test")
        .arg(corpus.join("test.txt"))
        .arg("--out")
        .arg(dir.path().join("exp2"))
        .args(["--seeds", "1,2", "--variants", "base"]));
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error_kind(&out), "config");
}
