#![allow(dead_code)]

use std::ffi::OsStr;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn run<S: AsRef<OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flfosr"))
        .args(args)
        .output()
        .expect("spawn flfosr")
}

pub fn run_ok<S: AsRef<OsStr>>(args: &[S]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "flfosr failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(path: &Path) -> String {
    path.to_str().expect("utf-8 path").to_owned()
}

/// Simulates into `dir/data` with the given size flags and returns that
/// directory.
pub fn simulate(dir: &Path, flags: &[&str]) -> PathBuf {
    let data = dir.join("data");
    let mut args = vec!["simulate".to_owned(), "--out".to_owned(), s(&data)];
    args.extend(flags.iter().map(|f| f.to_string()));
    run_ok(&args);
    data
}

pub const SMALL: [&str; 10] = ["--n", "6", "--m", "3", "--L", "2", "--T", "24", "--K0", "8"];

/// `fit` on a simulated directory, plus extra flags.
pub fn fit_args(data: &Path, out: &Path, flags: &[&str]) -> Vec<String> {
    let mut args = vec![
        "fit".to_owned(),
        "--curves".to_owned(),
        s(&data.join("curves.csv")),
        "--covariates".to_owned(),
        s(&data.join("covariates.csv")),
        "--grid".to_owned(),
        s(&data.join("grid.csv")),
        "--out".to_owned(),
        s(out),
    ];
    args.extend(flags.iter().map(|f| f.to_string()));
    args
}
