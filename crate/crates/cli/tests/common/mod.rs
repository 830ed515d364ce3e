#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
[survival_net]
hidden = [16]
[survival_net.train]
epochs = 2
[classifier_net]
hidden = [16]
[classifier_net.train]
epochs = 2
[eval]
seeds = 2
episodes = 24
[sweep]
episodes = 32
alphas = [0.05, 0.3]
windows = [10, 30]
[rhythmic]
trials = 12
rounds = 5
";

pub fn rit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rit")).current_dir(dir).args(args).output().expect("spawn rit")
}

pub fn ok(dir: &Path, args: &[&str]) {
    let out = rit(dir, args);
    assert!(out.status.success(), "rit {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

pub const OUTPUTS: [&str; 13] = [
    "t.jsonl", "to.csv", "mw.json", "ft.json", "none.csv", "ft0.csv", "mw1.csv", "to1.csv", "sweep.csv", "rh.csv",
    "rh_ind.csv", "table.csv", "bars.csv",
];

/// Runs every subcommand once inside `dir`.
pub fn pipeline(dir: &Path) {
    std::fs::write(dir.join("small.toml"), SMALL).unwrap();
    let c = ["--config", "small.toml"];
    let run = |rest: &[&str]| ok(dir, &[&[rest[0]], &c[..], &rest[1..]].concat());
    run(&["collect", "--episodes", "300", "--seed", "5", "--out", "t.jsonl"]);
    run(&["train", "time-only", "--data", "t.jsonl", "--out", "to.csv"]);
    run(&["train", "survival", "--data", "t.jsonl", "--out", "mw.json"]);
    run(&["train", "classifier", "--data", "t.jsonl", "--out", "ft.json"]);
    run(&["eval-single", "--recovery", "off", "--seed", "9", "--out", "none.csv"]);
    run(&["eval-single", "--model", "ft.json", "--alpha", "0.1", "--seed", "9", "--out", "ft0.csv"]);
    run(&["eval-single", "--model", "mw.json", "--tf", "60", "--friction", "1", "--seed", "9", "--out", "mw1.csv"]);
    run(&["eval-single", "--model", "to.csv", "--friction", "1", "--seed", "9", "--out", "to1.csv"]);
    run(&["sweep", "--model", "mw.json", "--seed", "2", "--out", "sweep.csv"]);
    run(&["eval-rhythmic", "--model", "ft.json", "--seed", "4", "--label", "size-1", "--out", "rh.csv"]);
    run(&[
        "eval-rhythmic", "--recovery", "off", "--mode", "independent", "--seed", "4", "--label", "size-2", "--out",
        "rh_ind.csv",
    ]);
    ok(dir, &["report", "none.csv", "ft0.csv", "mw1.csv", "to1.csv", "--out", "table.csv"]);
    ok(dir, &["report", "rh.csv", "rh_ind.csv", "--out", "bars.csv"]);
}


/// Runs the pipeline in two fresh directories and lists the outputs that differ.
pub fn rerun_differences() -> Vec<String> {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    OUTPUTS
        .iter()
        .filter(|name| {
            let x = std::fs::read(a.path().join(name)).unwrap();
            x.is_empty() || x != std::fs::read(b.path().join(name)).unwrap()
        })
        .map(|name| name.to_string())
        .collect()
}
