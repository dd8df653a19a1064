//! End-to-end checks of the `mtpl` executable.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mtpl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtpl"))
        .args(args)
        .env_remove("MTPL_THREADS")
        .output()
        .expect("mtpl runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn error_kind(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().unwrap_or_default();
    let v: serde_json::Value = serde_json::from_str(last).expect("JSON error line");
    v["error"].as_str().unwrap_or_default().to_string()
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = mtpl(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = scratch("missing_seed");
    let out = mtpl(&["maze-gen", "--size", "7", "--out", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let out = mtpl(&["maze-eval", "--baseline", "--size", "7"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_threads_is_a_usage_error() {
    let out = mtpl(&["--threads", "0", "oracle", "--seed", "1", "--systems", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_with_default_seed_passes() {
    let out = mtpl(&["gradcheck"]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = String::from_utf8(out.stdout).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("suite,parameter,index,analytic,numeric,rel_error,tolerance,passed")
    );
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() > 100);
    assert!(rows.iter().all(|r| r.ends_with(",true")));
}

#[test]
fn maze_train_is_deterministic() {
    let run = |name: &str| {
        let dir = scratch(name);
        let out = mtpl(&[
            "maze-train",
            "--seed",
            "3",
            "--steps",
            "5",
            "--train-mazes",
            "8",
            "--quiet",
            "--out",
            dir.to_str().unwrap(),
        ]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        dir
    };
    let (a, b) = (run("train_a"), run("train_b"));
    for file in ["checkpoint.bin", "train_log.csv", "config.json"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let log = fs::read_to_string(a.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,loss"));
    assert_eq!(log.lines().count(), 6);

    let eval = mtpl(&[
        "maze-eval",
        "--run",
        a.to_str().unwrap(),
        "--size",
        "9",
        "--seed",
        "1",
        "--count",
        "4",
    ]);
    assert_eq!(
        eval.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&eval.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    let f1 = report["model"]["f1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f1));
}

#[test]
fn seeded_outputs_are_byte_identical() {
    for cmd in ["readout-dump", "objects-dump", "dynamics-diag", "maze-gen"] {
        let dirs: Vec<PathBuf> = ["a", "b"]
            .iter()
            .map(|s| {
                let dir = scratch(&format!("repeat_{cmd}_{s}"));
                let mut args = vec![cmd, "--seed", "7", "--out", dir.to_str().unwrap()];
                if cmd == "maze-gen" {
                    args.extend(["--size", "9", "--count", "3"]);
                }
                let out = mtpl(&args);
                assert_eq!(
                    out.status.code(),
                    Some(0),
                    "{cmd}: {}",
                    String::from_utf8_lossy(&out.stderr)
                );
                dir
            })
            .collect();
        let mut names: Vec<_> = fs::read_dir(&dirs[0])
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        assert!(!names.is_empty(), "{cmd}");
        for name in names {
            assert_eq!(
                fs::read(dirs[0].join(&name)).unwrap(),
                fs::read(dirs[1].join(&name)).unwrap(),
                "{cmd}: {name:?}"
            );
        }
    }
}

#[test]
fn shipped_configs_parse() {
    let dir = scratch("configs");
    let d = dir.to_str().unwrap();
    for cfg in ["maze_desk.json", "maze_full.json"] {
        let out = mtpl(&[
            "maze-train",
            "--seed",
            "0",
            "--config",
            &config(cfg),
            "--steps",
            "1",
            "--train-mazes",
            "2",
            "--quiet",
            "--out",
            d,
        ]);
        assert_eq!(
            out.status.code(),
            Some(0),
            "{cfg}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    let out = mtpl(&[
        "objects-dump",
        "--seed",
        "0",
        "--config",
        &config("sudoku_smoke.json"),
        "--out",
        d,
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let out = mtpl(&[
        "dynamics-diag",
        "--seed",
        "0",
        "--config",
        &config("dynamics.json"),
        "--out",
        d,
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(config("maze_transfer.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["eval_size"], 19);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = scratch("bad_config");
    let path = dir.join("bad.json");
    fs::write(&path, r#"{"steps": 3, "learning_rate": 0.1}"#).unwrap();
    let out = mtpl(&[
        "maze-train",
        "--seed",
        "0",
        "--config",
        path.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_kind(&out), "usage");
}

#[test]
fn baseline_eval_reports_f1() {
    let out = mtpl(&[
        "maze-eval",
        "--baseline",
        "--size",
        "9",
        "--seed",
        "0",
        "--count",
        "5",
    ]);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let f1 = report["baseline"]["f1"].as_f64().unwrap();
    assert!(f1 > 0.0 && f1 <= 1.0);
}
