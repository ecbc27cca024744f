use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::{tempdir, TempDir};

const SMALL: &str = r#"{
  "data": {
    "hvg_num": 8,
    "generate": {
      "slides": 3, "spots_per_slide": 16, "gene_num": 12, "coord_max": 16,
      "image": {"kind": "patches", "c": 3, "h": 8, "w": 8}
    }
  },
  "encoder": {"d_embed": 8, "n_heads": 2, "conv_channels": [4], "proj_hidden": 8},
  "train": {"batch_size": 8, "epochs": 2},
  "inference": {"k": 5},
  "eval": {"pca_components": 3}
}"#;

fn stexp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stexp"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("STEXP_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = stexp(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

struct Env {
    dir: TempDir,
}

impl Env {
    fn new() -> Self {
        let dir = tempdir().unwrap();
        fs::write(dir.path().join("config.json"), SMALL).unwrap();
        Env { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

/// Every file except the config echo, which records the output path.
fn content(root: &Path) -> Vec<(String, Vec<u8>)> {
    tree(root)
        .into_iter()
        .filter(|(n, _)| n != "config.resolved.json")
        .collect()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(stexp(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(stexp(&["train", "--epochs", "x"]).status.code(), Some(1));
    assert_eq!(stexp(&["gen-data"]).status.code(), Some(1), "missing --out");
    let env = Env::new();
    fs::write(env.path("bad.json"), r#"{"train": {"lr": 1}}"#).unwrap();
    assert_eq!(
        stexp(&[
            "gen-data",
            "--config",
            &env.s("bad.json"),
            "--out",
            &env.s("o")
        ])
        .status
        .code(),
        Some(1)
    );
    assert_eq!(
        stexp(&["gen-data", "--signal", "1.5", "--out", &env.s("o")])
            .status
            .code(),
        Some(1)
    );
    assert!(!env.path("o").exists(), "failed runs leave no output");
}

#[test]
fn help_exits_with_zero() {
    assert_eq!(stexp(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_a_runtime_error() {
    let env = Env::new();
    let out = stexp(&["loocv", "--data", &env.s("nowhere"), "--out", &env.s("o")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_data_is_byte_identical_and_refuses_to_overwrite() {
    let env = Env::new();
    let cfg = env.s("config.json");
    ok(&[
        "gen-data",
        "--config",
        &cfg,
        "--seed",
        "4",
        "--out",
        &env.s("a"),
    ]);
    ok(&[
        "gen-data",
        "--config",
        &cfg,
        "--seed",
        "4",
        "--out",
        &env.s("b"),
    ]);
    assert_eq!(content(&env.path("a")), content(&env.path("b")));
    ok(&[
        "gen-data",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--out",
        &env.s("c"),
    ]);
    assert_ne!(content(&env.path("a")), content(&env.path("c")));
    assert_eq!(
        stexp(&["gen-data", "--config", &cfg, "--out", &env.s("a")])
            .status
            .code(),
        Some(1)
    );
    ok(&[
        "gen-data",
        "--config",
        &cfg,
        "--seed",
        "5",
        "--out",
        &env.s("a"),
        "--force",
    ]);
    assert_eq!(content(&env.path("a")), content(&env.path("c")));
}

#[test]
fn seed_comes_from_environment_when_not_given() {
    let env = Env::new();
    let cfg = env.s("config.json");
    ok(&[
        "gen-data",
        "--config",
        &cfg,
        "--seed",
        "9",
        "--out",
        &env.s("a"),
    ]);
    let out = Command::new(env!("CARGO_BIN_EXE_stexp"))
        .args(["gen-data", "--config", &cfg, "--out", &env.s("b")])
        .env("STEXP_SEED", "9")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(content(&env.path("a")), content(&env.path("b")));
}

#[test]
fn train_embed_predict_eval_pipeline() {
    let env = Env::new();
    let cfg = env.s("config.json");
    ok(&[
        "gen-data",
        "--config",
        &cfg,
        "--seed",
        "2",
        "--out",
        &env.s("data"),
    ]);
    for run in ["ckpt", "ckpt2"] {
        ok(&[
            "train",
            "--config",
            &cfg,
            "--seed",
            "2",
            "--data",
            &env.s("data"),
            "--hold-out",
            "slide_02",
            "--out",
            &env.s(run),
        ]);
    }
    assert_eq!(content(&env.path("ckpt")), content(&env.path("ckpt2")));
    let loss = fs::read_to_string(env.path("ckpt/loss.tsv")).unwrap();
    assert_eq!(loss.lines().count(), 3);

    ok(&[
        "embed",
        "--config",
        &cfg,
        "--checkpoint",
        &env.s("ckpt"),
        "--data",
        &env.s("data"),
        "--out",
        &env.s("index"),
    ]);
    let predict = |slide: &str, out: &str| {
        stexp(&[
            "predict",
            "--config",
            &cfg,
            "--checkpoint",
            &env.s("ckpt"),
            "--index",
            &env.s("index"),
            "--data",
            &env.s("data"),
            "--slide",
            slide,
            "--out",
            &env.s(out),
        ])
    };
    assert_eq!(
        predict("slide_00", "leak").status.code(),
        Some(1),
        "training slide must be refused"
    );
    assert!(predict("slide_02", "pred").status.success());

    ok(&[
        "eval",
        "--config",
        &cfg,
        "--pred",
        &env.s("pred"),
        "--checkpoint",
        &env.s("ckpt"),
        "--data",
        &env.s("data"),
        "--out",
        &env.s("eval"),
    ]);
    let metrics = fs::read_to_string(env.path("eval/metrics.tsv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "slide_id\tpcc_acg\tpcc_heg\tmse\tmae");
    assert!(lines[1].starts_with("slide_02\t"));
    assert_eq!(
        fs::read_to_string(env.path("eval/genes.tsv"))
            .unwrap()
            .lines()
            .count(),
        9
    );
    let labels = fs::read_to_string(env.path("eval/labels.tsv")).unwrap();
    assert_eq!(labels.lines().next(), Some("spot\tx\ty\tlabel\ttruth"));
    assert!(env.path("eval/config.resolved.json").is_file());
}

#[test]
fn loocv_writes_one_row_per_slide_plus_mean() {
    let env = Env::new();
    let cfg = env.s("config.json");
    ok(&[
        "loocv",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--out",
        &env.s("a"),
    ]);
    let metrics = fs::read_to_string(env.path("a/metrics.tsv")).unwrap();
    assert_eq!(metrics.lines().count(), 1 + 3 + 1);
    assert!(metrics.lines().last().unwrap().starts_with("mean\t"));
    for s in ["slide_00", "slide_01", "slide_02"] {
        assert!(env.path(&format!("a/genes_{s}.tsv")).is_file());
        assert!(env.path(&format!("a/loss_{s}.tsv")).is_file());
    }
    assert_eq!(
        fs::read_to_string(env.path("a/baselines.tsv"))
            .unwrap()
            .lines()
            .count(),
        5
    );
    ok(&[
        "loocv",
        "--config",
        &cfg,
        "--seed",
        "1",
        "--out",
        &env.s("b"),
    ]);
    assert_eq!(content(&env.path("a")), content(&env.path("b")));
}

#[test]
fn ablate_requires_a_variant_and_reports_each() {
    let env = Env::new();
    let cfg = env.s("config.json");
    assert_eq!(
        stexp(&["ablate", "--config", &cfg, "--out", &env.s("x")])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        stexp(&[
            "ablate",
            "--config",
            &cfg,
            "--toggle",
            "no_brain",
            "--out",
            &env.s("x")
        ])
        .status
        .code(),
        Some(1)
    );
    ok(&[
        "ablate",
        "--config",
        &cfg,
        "--toggle",
        "no_mhsa",
        "--toggle",
        "no_positional_encoding",
        "--k-sweep",
        "1,5",
        "--out",
        &env.s("ab"),
    ]);
    let table = fs::read_to_string(env.path("ab/ablation.tsv")).unwrap();
    let names: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(
        names,
        ["full", "no_mhsa", "no_positional_encoding", "k=1", "k=5"]
    );
}

#[test]
fn grad_check_passes_and_reports() {
    let env = Env::new();
    let out = ok(&["grad-check", "--seed", "3", "--out", &env.s("gc")]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("max relative error"));
    assert!(env.path("gc/gradcheck.tsv").is_file());
    let out = stexp(&["grad-check", "--seed", "3", "--tol", "1e-30"]);
    assert_eq!(out.status.code(), Some(2));
}
