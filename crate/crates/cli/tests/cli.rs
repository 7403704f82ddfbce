mod common;

use std::fs;
use std::path::Path;

use common::{fit_args, run, run_ok, simulate, SMALL};
use flfosr::diagnostics::ess;
use flfosr::io::{draws_dir, read_basis, read_draws};
use flfosr::sampler::alpha_function_chain;
use flfosr_cli::{FitReport, RunMeta, BENCHMARK_HEADER};

fn read(path: &Path) -> Vec<u8> {
    fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn repeated_fit_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), &[&SMALL[..], &["--seed", "4"]].concat());
    let flags = ["--K0", "8", "--N", "200", "--burn", "50", "--seed", "4"];
    run_ok(&fit_args(&data, &dir.path().join("a"), &flags));
    run_ok(&fit_args(&data, &dir.path().join("b"), &flags));
    for f in ["summary.csv", "efficiency.csv", "draws/alpha_k.csv", "draws/variances.csv"] {
        assert_eq!(read(&dir.path().join("a").join(f)), read(&dir.path().join("b").join(f)), "{f}");
    }
}

#[test]
fn missing_covariates_exit_two_and_name_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), &SMALL);
    let missing = dir.path().join("no_such_covariates.csv");
    let mut args = fit_args(&data, &dir.path().join("fit"), &[]);
    let i = args.iter().position(|a| a == "--covariates").unwrap();
    args[i + 1] = missing.to_str().unwrap().to_owned();
    let out = run(&args);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(missing.to_str().unwrap()), "{stderr}");
    assert!(!dir.path().join("fit").exists());
}

#[test]
fn malformed_values_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), &SMALL);
    let path = data.join("curves.csv");
    let text = fs::read_to_string(&path).unwrap().replacen("\n1,1,0,", "\n1,1,0,NA", 1);
    fs::write(&path, text).unwrap();
    let out = run(&fit_args(&data, &dir.path().join("fit"), &["--K0", "8"]));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unwritable_output_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), &SMALL);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let out = run(&fit_args(&data, &blocker.join("out"), &["--K0", "8", "--N", "20", "--burn", "5"]));
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn meta_records_inputs_and_settings() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), &SMALL);
    let out = dir.path().join("fit");
    run_ok(&fit_args(&data, &out, &["--K0", "8", "--N", "30", "--burn", "10", "--seed", "9", "--thin", "2"]));
    let meta: RunMeta = flfosr::io::load_json(&out.join("meta.json")).unwrap();
    assert_eq!(meta.settings.sampler.seed, 9);
    assert_eq!(meta.settings.sampler.thin, 2);
    assert_eq!(meta.settings.basis.k0, 8);
    assert_eq!(meta.input_fingerprints.len(), 3);
    assert_eq!(meta.covariate_names, ["intercept", "x1", "x2"]);
    assert_eq!(meta.quantile_rule, "type7");

    // Re-running from the recorded settings reproduces the draws.
    let mut settings = meta.settings.clone();
    settings.out = Some(dir.path().join("again"));
    flfosr_cli::fit_with_settings(&settings).unwrap();
    assert_eq!(read(&out.join("summary.csv")), read(&dir.path().join("again/summary.csv")));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), &SMALL);
    let cfg = dir.path().join("fit.json");
    fs::write(&cfg, r#"{"basis": {"k0": 8}, "sampler": {"a":0.1,"b":0.1,"n_keep":40,"n_burn":10,"thin":1,"seed":3,"intercept_variance_sampled":true,"parallel_k":false,"retain_random_effects":false,"alpha_scheme":"auto"}}"#).unwrap();
    let out = dir.path().join("fit");
    run_ok(&fit_args(&data, &out, &["--config", cfg.to_str().unwrap(), "--N", "25"]));
    let meta: RunMeta = flfosr::io::load_json(&out.join("meta.json")).unwrap();
    assert_eq!(meta.settings.sampler.n_keep, 25);
    assert_eq!(meta.settings.sampler.seed, 3);
    assert_eq!(meta.settings.basis.k0, 8);
}

#[test]
fn summarize_reproduces_fit_reports() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), &SMALL);
    let fit = dir.path().join("fit");
    let truth = data.join("truth.csv");
    run_ok(&fit_args(&data, &fit, &["--K0", "8", "--N", "100", "--burn", "20", "--truth", truth.to_str().unwrap()]));
    let out = dir.path().join("sum");
    run_ok(&["summarize", "--draws", fit.to_str().unwrap(), "--out", out.to_str().unwrap(), "--truth", truth.to_str().unwrap()]);
    for f in ["summary.csv", "efficiency.csv", "accuracy.csv"] {
        assert_eq!(read(&fit.join(f)), read(&out.join(f)), "{f}");
    }
}

#[test]
fn f32_fit_runs() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), &SMALL);
    let fit = dir.path().join("fit");
    run_ok(&fit_args(&data, &fit, &["--K0", "8", "--N", "50", "--burn", "20", "--precision", "f32"]));
    let report: FitReport = flfosr::io::load_json(&fit.join("report.json")).unwrap();
    assert!(report.relative_efficiency.is_finite());
    let out = dir.path().join("sum");
    run_ok(&["summarize", "--draws", fit.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(read(&fit.join("summary.csv")), read(&out.join("summary.csv")));
}

/// Posterior mean and Monte Carlo standard error of every α̃_ℓ(τ_t).
fn means_and_se(fit: &Path) -> Vec<(f64, f64)> {
    let (draws, _) = read_draws(&draws_dir(fit)).unwrap();
    let basis = read_basis(&fit.join("basis")).unwrap();
    let mut out = Vec::new();
    for l in 0..draws.n_alpha() {
        let chain = alpha_function_chain(&draws, &basis, l).unwrap();
        for col in chain.column_iter() {
            let v: Vec<f64> = col.iter().copied().collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let n_eff = ess(&v).unwrap().n_eff;
            out.push((mean, (var / n_eff).sqrt()));
        }
    }
    out
}

// The full-conditional chain barely moves along basis directions with a
// large Gram weight unless the noise is comparable to it, so the noise
// variance is raised until both chains mix within 2e4 draws.
#[test]
fn naive_and_joint_samplers_agree() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(
        dir.path(),
        &["--n", "6", "--m", "3", "--L", "1", "--T", "16", "--K0", "6", "--sigma2-eps", "1e8", "--seed", "2"],
    );
    let common = ["--K0", "6", "--N", "20000", "--burn", "5000", "--seed", "5"];
    let joint = dir.path().join("joint");
    let naive = dir.path().join("naive");
    run_ok(&fit_args(&data, &joint, &[&common[..], &["--sampler", "flfosr"]].concat()));
    run_ok(&fit_args(&data, &naive, &[&common[..], &["--sampler", "naive"]].concat()));
    let a = means_and_se(&joint);
    let b = means_and_se(&naive);
    let worst = a
        .iter()
        .zip(&b)
        .map(|(x, y)| (x.0 - y.0).abs() / (x.1 * x.1 + y.1 * y.1).sqrt())
        .fold(0.0f64, f64::max);
    assert!(worst < 3.0, "largest standardized difference {worst}");
}

#[test]
fn one_cell_benchmark_matches_plain_fit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bench.json");
    fs::write(&cfg, r#"{"cells": [{"n": 6, "m": 3, "L": 2}], "design": {"t": 24, "k0": 8, "seed": 11}}"#).unwrap();
    let bench = dir.path().join("bench");
    run_ok(&[
        "benchmark", "--config", cfg.to_str().unwrap(), "--out", bench.to_str().unwrap(),
        "--N", "300", "--burn", "100", "--seed", "7",
    ]);
    let text = fs::read_to_string(bench.join("benchmark.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), BENCHMARK_HEADER.join(","));
    assert_eq!(BENCHMARK_HEADER.join(","), "n,m,L,s1000,releff,seconds");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..3], ["6", "3", "2"]);
    assert!(lines.next().is_none());

    let data = simulate(dir.path(), &[&SMALL[..], &["--seed", "11"]].concat());
    let fit = dir.path().join("fit");
    run_ok(&fit_args(&data, &fit, &["--K0", "8", "--N", "300", "--burn", "100", "--seed", "7"]));
    let report: FitReport = flfosr::io::load_json(&fit.join("report.json")).unwrap();
    let releff: f64 = row[4].parse().unwrap();
    assert_eq!(releff, report.relative_efficiency);
    let s1000: f64 = row[3].parse().unwrap();
    assert!(s1000 > 0.0 && s1000.is_finite());
}

#[test]
fn benchmark_records_failing_cells_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let bench = dir.path().join("bench");
    // A cell with zero replicates per subject cannot be simulated.
    run_ok(&[
        "benchmark", "--cells", "4x0x1,4x2x1", "--out", bench.to_str().unwrap(), "--N", "20", "--burn", "5",
    ]);
    let rows = fs::read_to_string(bench.join("benchmark.csv")).unwrap();
    assert_eq!(rows.lines().count(), 2);
    let fails = fs::read_to_string(bench.join("benchmark_failures.csv")).unwrap();
    assert_eq!(fails.lines().count(), 2);
    assert!(fails.lines().nth(1).unwrap().starts_with("4,0,1,0,"));
}
