//! CSV and JSON persistence for datasets, bases, draws and reports.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::basis::{build_bspline_basis, OrthoBasis};
use crate::data::{LongitudinalDataset, SubjectIndex, INTERCEPT_NAME};
use crate::diagnostics::{AccuracyReport, EffectTruth, EfficiencyReport, SummaryRow};
use crate::error::{Error, Result};
use crate::sampler::{PosteriorDraws, SamplerConfig, SamplerKind, Timing, VarianceState};
use crate::scalar::Scalar;

pub const CURVES_HEADER: [&str; 4] = ["subject_id", "replicate_id", "time_index", "value"];
pub const BASIS_MATRIX_FILE: &str = "basis_B.csv";
pub const BASIS_GRAM_FILE: &str = "basis_d.csv";
pub const BASIS_META_FILE: &str = "basis.json";
pub const QUANTILE_RULE: &str = "type7";
pub const ESS_RULE: &str = "geyer-initial-positive-sequence";

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn fmt_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), message: message.into() }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => io_err(path, source),
        other => fmt_err(path, format!("{other:?}")),
    }
}

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(headers)
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn finish(path: &Path, mut w: csv::Writer<File>) -> Result<()> {
    w.flush().map_err(|e| io_err(path, e))
}

fn parse_value(path: &Path, line: u64, field: &str) -> Result<f64> {
    if field.is_empty() || field.eq_ignore_ascii_case("na") {
        return Err(fmt_err(path, format!("line {line}: missing value")));
    }
    let v: f64 = field
        .parse()
        .map_err(|_| fmt_err(path, format!("line {line}: `{field}` is not a number")))?;
    if !v.is_finite() {
        return Err(fmt_err(path, format!("line {line}: non-finite value `{field}`")));
    }
    Ok(v)
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

/// Orders identifiers numerically when every one parses as a number,
/// lexically otherwise.
fn id_order(ids: &[String]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..ids.len()).collect();
    let nums: Option<Vec<f64>> = ids.iter().map(|s| s.parse::<f64>().ok()).collect();
    match nums {
        Some(n) => idx.sort_by(|&a, &b| n[a].total_cmp(&n[b]).then_with(|| ids[a].cmp(&ids[b]))),
        None => idx.sort_by(|&a, &b| ids[a].cmp(&ids[b])),
    }
    idx
}

/// Reads a grid file of T values, one per line, with an optional header.
pub fn read_grid(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = reader(path, false)?;
    let mut grid = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let field = rec.get(0).unwrap_or("");
        if i == 0 && field.parse::<f64>().is_err() {
            continue;
        }
        grid.push(parse_value(path, line_of(&rec), field)?);
    }
    if grid.is_empty() {
        return Err(fmt_err(path, "grid file has no values"));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(fmt_err(path, "grid values must be strictly increasing"));
    }
    Ok(grid)
}

pub fn write_grid(path: &Path, grid: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(["tau"]).map_err(e)?;
    for v in grid {
        w.write_record([v.to_string()]).map_err(e)?;
    }
    finish(path, w)
}

/// Reads curves and covariates in long CSV format and assembles a dataset
/// sorted by subject, then replicate. Without a grid file the grid is
/// equispaced on [0, 1] with T = 1 + max time index.
pub fn read_dataset<T: Scalar>(
    curves_path: &Path,
    covariates_path: &Path,
    grid_path: Option<&Path>,
) -> Result<LongitudinalDataset<T>> {
    let grid = grid_path.map(read_grid).transpose()?;

    let mut rdr = reader(covariates_path, true)?;
    let header = rdr.headers().map_err(|e| csv_err(covariates_path, e))?.clone();
    if header.len() < 2 || &header[0] != "subject_id" || &header[1] != "replicate_id" {
        return Err(fmt_err(covariates_path, "header must start with subject_id,replicate_id"));
    }
    let names: Vec<String> = header.iter().skip(2).map(str::to_string).collect();
    let mut keys: Vec<(String, String)> = Vec::new();
    let mut covs: Vec<Vec<f64>> = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(covariates_path, e))?;
        let line = line_of(&rec);
        if rec.len() != header.len() {
            return Err(fmt_err(covariates_path, format!("line {line}: expected {} fields", header.len())));
        }
        let key = (rec[0].to_string(), rec[1].to_string());
        if seen.insert(key.clone(), keys.len()).is_some() {
            return Err(fmt_err(covariates_path, format!("line {line}: duplicate row {}/{}", key.0, key.1)));
        }
        let vals = (2..rec.len())
            .map(|c| parse_value(covariates_path, line, &rec[c]))
            .collect::<Result<Vec<_>>>()?;
        keys.push(key);
        covs.push(vals);
    }
    if keys.is_empty() {
        return Err(fmt_err(covariates_path, "no covariate rows"));
    }

    let mut rdr = reader(curves_path, true)?;
    let header = rdr.headers().map_err(|e| csv_err(curves_path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != CURVES_HEADER {
        return Err(fmt_err(curves_path, format!("header must be {}", CURVES_HEADER.join(","))));
    }
    let mut points: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); keys.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(curves_path, e))?;
        let line = line_of(&rec);
        if rec.len() != 4 {
            return Err(fmt_err(curves_path, format!("line {line}: expected 4 fields")));
        }
        let key = (rec[0].to_string(), rec[1].to_string());
        let row = *seen.get(&key).ok_or_else(|| {
            fmt_err(curves_path, format!("line {line}: curve {}/{} has no covariate row", key.0, key.1))
        })?;
        let t: usize = rec[2]
            .parse()
            .map_err(|_| fmt_err(curves_path, format!("line {line}: bad time_index `{}`", &rec[2])))?;
        let v = parse_value(curves_path, line, &rec[3])?;
        if points[row].insert(t, v).is_some() {
            return Err(fmt_err(curves_path, format!("line {line}: duplicate time_index {t}")));
        }
    }
    let max_t = points.iter().filter_map(|p| p.keys().next_back().copied()).max();
    let t_len = match (&grid, max_t) {
        (Some(g), _) => g.len(),
        (None, Some(mt)) => mt + 1,
        (None, None) => return Err(fmt_err(curves_path, "no curve values")),
    };
    for (row, p) in points.iter().enumerate() {
        if p.len() != t_len || p.keys().next_back().is_some_and(|&t| t >= t_len) {
            return Err(fmt_err(
                curves_path,
                format!("curve {}/{} does not have exactly {t_len} time points", keys[row].0, keys[row].1),
            ));
        }
    }
    let grid = grid.unwrap_or_else(|| crate::basis::unit_grid(t_len));

    // Canonical order: subjects, then replicates within subject.
    let subj: Vec<String> = keys.iter().map(|k| k.0.clone()).collect();
    let mut subject_names: Vec<String> = Vec::new();
    let mut by_subject: HashMap<&str, Vec<usize>> = HashMap::new();
    for (row, s) in subj.iter().enumerate() {
        by_subject.entry(s.as_str()).or_insert_with(|| {
            subject_names.push(s.clone());
            Vec::new()
        });
        by_subject.get_mut(s.as_str()).unwrap().push(row);
    }
    let mut order = Vec::with_capacity(keys.len());
    let mut counts = Vec::new();
    let mut subject_ids = Vec::new();
    for si in id_order(&subject_names) {
        let name = &subject_names[si];
        let rows = &by_subject[name.as_str()];
        let reps: Vec<String> = rows.iter().map(|&r| keys[r].1.clone()).collect();
        order.extend(id_order(&reps).into_iter().map(|j| rows[j]));
        counts.push(rows.len());
        subject_ids.push(name.clone());
    }

    let m = order.len();
    let p = names.len() + 1;
    let curves = DMatrix::from_fn(t_len, m, |t, c| T::lit(points[order[c]][&t]));
    let x = DMatrix::from_fn(m, p, |r, c| if c == 0 { T::one() } else { T::lit(covs[order[r]][c - 1]) });
    let mut covariate_names = vec![INTERCEPT_NAME.to_string()];
    covariate_names.extend(names);
    let replicate_ids = order.iter().map(|&r| keys[r].1.clone()).collect();
    let groups = SubjectIndex::from_counts(&counts)?;
    LongitudinalDataset::new(grid, curves, groups, x, covariate_names)?.with_ids(subject_ids, replicate_ids)
}

pub fn write_curves<T: Scalar>(path: &Path, ds: &LongitudinalDataset<T>) -> Result<()> {
    let mut w = writer(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(CURVES_HEADER).map_err(e)?;
    for r in 0..ds.n_curves() {
        let s = &ds.subject_ids[ds.groups.subject_of()[r]];
        for t in 0..ds.n_points() {
            w.write_record([
                s.clone(),
                ds.replicate_ids[r].clone(),
                t.to_string(),
                ds.curves[(t, r)].as_f64().to_string(),
            ])
            .map_err(e)?;
        }
    }
    finish(path, w)
}

pub fn write_covariates<T: Scalar>(path: &Path, ds: &LongitudinalDataset<T>) -> Result<()> {
    let mut w = writer(path)?;
    let e = |err| csv_err(path, err);
    let mut header = vec!["subject_id".to_string(), "replicate_id".to_string()];
    header.extend(ds.covariate_names.iter().skip(1).cloned());
    w.write_record(&header).map_err(e)?;
    for r in 0..ds.n_curves() {
        let mut rec = vec![ds.subject_ids[ds.groups.subject_of()[r]].clone(), ds.replicate_ids[r].clone()];
        rec.extend((1..ds.x.ncols()).map(|c| ds.x[(r, c)].as_f64().to_string()));
        w.write_record(&rec).map_err(e)?;
    }
    finish(path, w)
}

fn write_matrix(path: &Path, header: Option<&[String]>, rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = writer(path)?;
    let e = |err| csv_err(path, err);
    if let Some(h) = header {
        w.write_record(h).map_err(e)?;
    }
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(e)?;
    }
    finish(path, w)
}

fn read_matrix(path: &Path, headers: bool) -> Result<Vec<Vec<f64>>> {
    let mut rdr = reader(path, headers)?;
    let mut rows = Vec::new();
    let mut width = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        let row = rec.iter().map(|f| parse_value(path, line, f)).collect::<Result<Vec<_>>>()?;
        if *width.get_or_insert(row.len()) != row.len() {
            return Err(fmt_err(path, format!("line {line}: ragged row")));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| fmt_err(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn read_json<V: DeserializeOwned>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| fmt_err(path, e.to_string()))
}

/// Public wrapper for JSON reports and configs.
pub fn save_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    write_json(path, value)
}

pub fn load_json<V: DeserializeOwned>(path: &Path) -> Result<V> {
    read_json(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisMeta {
    pub grid: Vec<f64>,
    pub degree: Option<usize>,
    pub k0: Option<usize>,
    pub penalty_order: Option<usize>,
    pub eig_tol: f64,
    pub k: usize,
}

/// Writes `basis_B.csv`, `basis_d.csv` and `basis.json` into `dir`.
pub fn write_basis(dir: &Path, basis: &OrthoBasis<f64>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_matrix(&dir.join(BASIS_MATRIX_FILE), None, basis.b.row_iter().map(|r| r.iter().copied().collect()))?;
    write_matrix(&dir.join(BASIS_GRAM_FILE), None, basis.d.iter().map(|&v| vec![v]))?;
    let raw = basis.source.as_ref();
    let meta = BasisMeta {
        grid: basis.grid.clone(),
        degree: raw.map(|r| r.degree),
        k0: raw.map(|r| r.k0),
        penalty_order: raw.and_then(|r| r.penalty_order),
        eig_tol: basis.eig_tol,
        k: basis.k(),
    };
    write_json(&dir.join(BASIS_META_FILE), &meta)
}

/// Reads a basis written by [`write_basis`]. B and d come back bit-exact; the
/// raw basis and its transform are rebuilt from the recorded settings.
pub fn read_basis(dir: &Path) -> Result<OrthoBasis<f64>> {
    let meta: BasisMeta = read_json(&dir.join(BASIS_META_FILE))?;
    let bpath = dir.join(BASIS_MATRIX_FILE);
    let rows = read_matrix(&bpath, false)?;
    if rows.len() != meta.grid.len() || rows.first().map_or(0, Vec::len) != meta.k {
        return Err(fmt_err(&bpath, format!("expected {} x {} values", meta.grid.len(), meta.k)));
    }
    let b = DMatrix::from_fn(meta.grid.len(), meta.k, |t, k| rows[t][k]);
    let dpath = dir.join(BASIS_GRAM_FILE);
    let d: Vec<f64> = read_matrix(&dpath, false)?.into_iter().flatten().collect();
    if d.len() != meta.k {
        return Err(fmt_err(&dpath, format!("expected {} values", meta.k)));
    }

    let mut source = None;
    let mut transform = None;
    if let (Some(k0), Some(degree)) = (meta.k0, meta.degree) {
        let mut raw = build_bspline_basis(&meta.grid, k0, degree)?;
        if let Some(order) = meta.penalty_order {
            raw = raw.with_difference_penalty(order)?;
        }
        if raw.b0.nrows() >= raw.b0.ncols() {
            let svd = raw.b0.clone().svd(true, true);
            transform = svd.solve(&b, 1e-12).ok();
        }
        source = Some(raw);
    }
    Ok(OrthoBasis {
        grid: meta.grid,
        b,
        d: DVector::from_vec(d),
        eig_tol: meta.eig_tol,
        source,
        transform,
    })
}

/// Everything about a run that is not a draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsMeta {
    pub sampler: SamplerKind,
    pub config: SamplerConfig,
    pub timing: Timing,
    pub clamp_events: u64,
    pub dataset_fingerprint: String,
    pub basis_fingerprint: String,
    pub n_draws: usize,
    pub n_alpha: usize,
    pub k: usize,
    pub n_subjects: usize,
    pub n_curves: usize,
    pub quantile_rule: String,
    pub ess_rule: String,
    /// Caller-supplied settings, such as input paths and basis options.
    #[serde(default)]
    pub run: serde_json::Value,
}

pub const DRAWS_META_FILE: &str = "meta.json";

/// Writes a draws directory: `variances.csv`, `alpha_k.csv`, optionally
/// `gamma.csv` and `omega.csv`, and `meta.json`.
pub fn write_draws<T: Scalar>(dir: &Path, draws: &PosteriorDraws<T>, run: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let p = draws.n_alpha();
    let k = draws.alpha.first().map_or(0, |a| a.ncols());
    let n_subjects = draws.variances.first().map_or(0, |v| v.sigma2_omega.len());
    let n_curves = draws.omega.as_ref().and_then(|o| o.first()).map_or(0, |o| o.nrows());

    let mut header = vec!["sigma2_eps".to_string()];
    header.extend((0..p).map(|l| format!("sigma2_alpha_{l}")));
    header.push("sigma2_gamma".into());
    header.extend((0..n_subjects).map(|i| format!("sigma2_omega_{i}")));
    write_matrix(
        &dir.join("variances.csv"),
        Some(&header),
        draws.variances.iter().map(|v| {
            let mut row = vec![v.sigma2_eps.as_f64()];
            row.extend(v.sigma2_alpha.iter().map(|x| x.as_f64()));
            row.push(v.sigma2_gamma.as_f64());
            row.extend(v.sigma2_omega.iter().map(|x| x.as_f64()));
            row
        }),
    )?;
    write_coef(&dir.join("alpha_k.csv"), "alpha", &draws.alpha)?;
    if let Some(g) = &draws.gamma {
        write_coef(&dir.join("gamma.csv"), "gamma", g)?;
    }
    if let Some(o) = &draws.omega {
        write_coef(&dir.join("omega.csv"), "omega", o)?;
    }
    let meta = DrawsMeta {
        sampler: draws.sampler,
        config: draws.config.clone(),
        timing: draws.timing,
        clamp_events: draws.clamp_events,
        dataset_fingerprint: draws.dataset_fingerprint.clone(),
        basis_fingerprint: draws.basis_fingerprint.clone(),
        n_draws: draws.len(),
        n_alpha: p,
        k,
        n_subjects,
        n_curves,
        quantile_rule: QUANTILE_RULE.into(),
        ess_rule: ESS_RULE.into(),
        run,
    };
    write_json(&dir.join(DRAWS_META_FILE), &meta)
}

/// One row per draw, row-major flattening of each matrix.
fn write_coef<T: Scalar>(path: &Path, name: &str, mats: &[DMatrix<T>]) -> Result<()> {
    let (r, c) = mats.first().map_or((0, 0), |m| m.shape());
    let header: Vec<String> = (0..r)
        .flat_map(|i| (0..c).map(move |k| format!("{name}_{i}_{k}")))
        .collect();
    write_matrix(
        path,
        Some(&header),
        mats.iter().map(|m| (0..r).flat_map(|i| (0..c).map(move |k| m[(i, k)].as_f64())).collect()),
    )
}

fn read_coef(path: &Path, rows: usize, cols: usize) -> Result<Vec<DMatrix<f64>>> {
    read_matrix(path, true)?
        .into_iter()
        .map(|v| {
            if v.len() != rows * cols {
                Err(fmt_err(path, format!("expected {} values per draw", rows * cols)))
            } else {
                Ok(DMatrix::from_row_slice(rows, cols, &v))
            }
        })
        .collect()
}

/// Reads a draws directory written by [`write_draws`].
pub fn read_draws(dir: &Path) -> Result<(PosteriorDraws<f64>, DrawsMeta)> {
    let meta: DrawsMeta = read_json(&dir.join(DRAWS_META_FILE))?;
    let alpha = read_coef(&dir.join("alpha_k.csv"), meta.n_alpha, meta.k)?;
    let vpath = dir.join("variances.csv");
    let variances = read_matrix(&vpath, true)?
        .into_iter()
        .map(|row| {
            let p = meta.n_alpha;
            if row.len() != 2 + p + meta.n_subjects {
                return Err(fmt_err(&vpath, "unexpected number of variance columns"));
            }
            Ok(VarianceState {
                sigma2_eps: row[0],
                sigma2_alpha: row[1..1 + p].to_vec(),
                sigma2_gamma: row[1 + p],
                sigma2_omega: row[2 + p..].to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let optional = |name: &str, rows: usize| -> Result<Option<Vec<DMatrix<f64>>>> {
        let path = dir.join(name);
        if path.exists() {
            read_coef(&path, rows, meta.k).map(Some)
        } else {
            Ok(None)
        }
    };
    let gamma = optional("gamma.csv", meta.n_subjects)?;
    let omega = optional("omega.csv", meta.n_curves)?;
    if alpha.len() != meta.n_draws || variances.len() != meta.n_draws {
        return Err(fmt_err(dir, "draw count differs from meta.json"));
    }
    let draws = PosteriorDraws {
        alpha,
        gamma,
        omega,
        variances,
        timing: meta.timing,
        clamp_events: meta.clamp_events,
        sampler: meta.sampler,
        config: meta.config.clone(),
        dataset_fingerprint: meta.dataset_fingerprint.clone(),
        basis_fingerprint: meta.basis_fingerprint.clone(),
    };
    Ok((draws, meta))
}

fn name_of(names: &[String], l: usize) -> String {
    names.get(l).cloned().unwrap_or_else(|| l.to_string())
}

/// `covariate,t,tau,mean,q025,q975`.
pub fn write_summary(path: &Path, rows: &[SummaryRow], names: &[String]) -> Result<()> {
    let mut w = writer(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(["covariate", "t", "tau", "mean", "q025", "q975"]).map_err(e)?;
    for r in rows {
        w.write_record([
            name_of(names, r.covariate),
            r.t.to_string(),
            r.tau.to_string(),
            r.mean.to_string(),
            r.q025.to_string(),
            r.q975.to_string(),
        ])
        .map_err(e)?;
    }
    finish(path, w)
}

/// Reads a summary table back, mapping covariate names to indices.
pub fn read_summary(path: &Path, names: &[String]) -> Result<Vec<SummaryRow>> {
    let mut rdr = reader(path, true)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = line_of(&rec);
        if rec.len() != 6 {
            return Err(fmt_err(path, format!("line {line}: expected 6 fields")));
        }
        let covariate = names
            .iter()
            .position(|n| n == &rec[0])
            .or_else(|| rec[0].parse().ok())
            .ok_or_else(|| fmt_err(path, format!("line {line}: unknown covariate `{}`", &rec[0])))?;
        let num = |i: usize| parse_value(path, line, &rec[i]);
        out.push(SummaryRow {
            covariate,
            t: rec[1].parse().map_err(|_| fmt_err(path, format!("line {line}: bad t")))?,
            tau: num(2)?,
            mean: num(3)?,
            q025: num(4)?,
            q975: num(5)?,
        });
    }
    Ok(out)
}

/// `covariate,t,n_eff,degenerate`.
pub fn write_efficiency(path: &Path, report: &EfficiencyReport, names: &[String]) -> Result<()> {
    let mut w = writer(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(["covariate", "t", "n_eff", "degenerate"]).map_err(e)?;
    for c in &report.cells {
        w.write_record([
            name_of(names, c.covariate),
            c.t.to_string(),
            c.n_eff.to_string(),
            c.degenerate.to_string(),
        ])
        .map_err(e)?;
    }
    finish(path, w)
}

/// `covariate,t,tau,mean,q025,q975,truth,covered`.
pub fn write_accuracy(path: &Path, report: &AccuracyReport, truth: &EffectTruth, names: &[String]) -> Result<()> {
    let mut w = writer(path)?;
    let e = |err| csv_err(path, err);
    w.write_record(["covariate", "t", "tau", "mean", "q025", "q975", "truth", "covered"])
        .map_err(e)?;
    for r in &report.bands {
        let a = truth.functions[(r.t, r.covariate)];
        w.write_record([
            name_of(names, r.covariate),
            r.t.to_string(),
            r.tau.to_string(),
            r.mean.to_string(),
            r.q025.to_string(),
            r.q975.to_string(),
            a.to_string(),
            (r.q025 <= a && a <= r.q975).to_string(),
        ])
        .map_err(e)?;
    }
    finish(path, w)
}

/// `t,tau,<names>`: true effect functions on the grid.
pub fn write_truth(path: &Path, truth: &EffectTruth, names: &[String]) -> Result<()> {
    let mut w = writer(path)?;
    let e = |err| csv_err(path, err);
    let mut header = vec!["t".to_string(), "tau".to_string()];
    header.extend((0..truth.functions.ncols()).map(|l| name_of(names, l)));
    w.write_record(&header).map_err(e)?;
    for (t, tau) in truth.grid.iter().enumerate() {
        let mut rec = vec![t.to_string(), tau.to_string()];
        rec.extend(truth.functions.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(e)?;
    }
    finish(path, w)
}

pub fn read_truth(path: &Path) -> Result<EffectTruth> {
    let rows = read_matrix(path, true)?;
    if rows.is_empty() || rows[0].len() < 3 {
        return Err(fmt_err(path, "truth file needs t, tau and at least one function"));
    }
    let grid = rows.iter().map(|r| r[1]).collect();
    let functions = DMatrix::from_fn(rows.len(), rows[0].len() - 2, |t, l| rows[t][l + 2]);
    Ok(EffectTruth { grid, functions })
}

/// Output locations inside a run directory.
pub fn draws_dir(out: &Path) -> PathBuf {
    out.join("draws")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::default_basis;
    use crate::simulate::{simulate_dataset, SimulationDesign};

    fn small() -> crate::simulate::Simulation {
        simulate_dataset(&SimulationDesign { n: 3, m: 2, l: 2, t: 12, k0: 6, seed: 5, ..Default::default() }).unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sim = small();
        let (c, x, g) = (dir.path().join("c.csv"), dir.path().join("x.csv"), dir.path().join("g.csv"));
        write_curves(&c, &sim.dataset).unwrap();
        write_covariates(&x, &sim.dataset).unwrap();
        write_grid(&g, &sim.dataset.grid).unwrap();
        let back: LongitudinalDataset<f64> = read_dataset(&c, &x, Some(&g)).unwrap();
        assert_eq!(back, sim.dataset);
        let no_grid: LongitudinalDataset<f64> = read_dataset(&c, &x, None).unwrap();
        assert_eq!(no_grid.grid, sim.dataset.grid);
    }

    #[test]
    fn rows_are_sorted_canonically() {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("c.csv");
        let x = dir.path().join("x.csv");
        fs::write(&x, "subject_id,replicate_id,age\n10,2,1.0\n9,1,2.0\n10,1,3.0\n").unwrap();
        let mut body = String::from("subject_id,replicate_id,time_index,value\n");
        for (s, r, v) in [("10", "2", 1.0), ("9", "1", 2.0), ("10", "1", 3.0)] {
            for t in 0..2 {
                body += &format!("{s},{r},{t},{}\n", v + t as f64);
            }
        }
        fs::write(&c, body).unwrap();
        let ds: LongitudinalDataset<f64> = read_dataset(&c, &x, None).unwrap();
        assert_eq!(ds.subject_ids, vec!["9", "10"]);
        assert_eq!(ds.replicate_ids, vec!["1", "1", "2"]);
        assert_eq!(ds.groups.counts(), vec![1, 2]);
        assert_eq!(ds.x.column(1).as_slice(), &[2.0, 3.0, 1.0]);
        assert_eq!(ds.curves[(1, 2)], 2.0);
    }

    #[test]
    fn missing_values_and_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = dir.path().join("c.csv");
        let x = dir.path().join("x.csv");
        fs::write(&x, "subject_id,replicate_id,age\n1,1,\n").unwrap();
        fs::write(&c, "subject_id,replicate_id,time_index,value\n1,1,0,1.0\n").unwrap();
        let err = read_dataset::<f64>(&c, &x, None).unwrap_err();
        assert!(err.to_string().contains("missing value"), "{err}");

        fs::write(&x, "subject_id,replicate_id,age\n1,1,0.5\n1,2,0.5\n").unwrap();
        assert!(read_dataset::<f64>(&c, &x, None).is_err());

        let gone = dir.path().join("nope.csv");
        let err = read_dataset::<f64>(&c, &gone, None).unwrap_err();
        assert_eq!(err.kind(), crate::error::ErrorKind::Io);
        assert!(err.to_string().contains("nope.csv"));
    }

    #[test]
    fn basis_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let grid = crate::basis::unit_grid(40);
        let basis = default_basis(&grid, 9, 3, 2, 1e-10).unwrap();
        write_basis(dir.path(), &basis).unwrap();
        let back = read_basis(dir.path()).unwrap();
        assert_eq!(back.b, basis.b);
        assert_eq!(back.d, basis.d);
        assert_eq!(back.grid, basis.grid);
        let pts = [0.05, 0.5, 0.93];
        let a = basis.evaluate(&pts).unwrap();
        let b = back.evaluate(&pts).unwrap();
        assert!((a - b).amax() < 1e-8 * basis.b.amax());
    }

    #[test]
    fn truth_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let sim = small();
        let path = dir.path().join("truth.csv");
        write_truth(&path, &sim.effect_truth(), &sim.dataset.covariate_names).unwrap();
        assert_eq!(read_truth(&path).unwrap(), sim.effect_truth());
    }
}
