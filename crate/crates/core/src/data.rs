//! Longitudinal functional datasets and the grouping structure.
//!
//! Curves sharing a subject are stored contiguously, so the random-intercept
//! design `Z = bdiag(1_{m_i})` never has to be materialized: `Z'v` is a
//! per-block sum and `Zu` a per-block repeat.

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::basis::OrthoBasis;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Contiguous subject blocks over the M curves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubjectIndex {
    offsets: Vec<usize>,
    subject_of: Vec<usize>,
}

impl SubjectIndex {
    /// Builds the index from replicate counts `m_i`, each at least one.
    pub fn from_counts(counts: &[usize]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidInput("at least one subject is required".into()));
        }
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InvalidInput(format!("subject {i} has no replicates")));
        }
        let mut offsets = Vec::with_capacity(counts.len() + 1);
        let mut subject_of = Vec::with_capacity(counts.iter().sum());
        offsets.push(0);
        for (i, &c) in counts.iter().enumerate() {
            subject_of.extend(std::iter::repeat_n(i, c));
            offsets.push(subject_of.len());
        }
        Ok(Self { offsets, subject_of })
    }

    /// Builds the index from a row-to-subject map, which must be
    /// nondecreasing and cover `0..n` without gaps.
    pub fn from_subject_of(subject_of: &[usize]) -> Result<Self> {
        if subject_of.first().copied() != Some(0) {
            return Err(Error::InvalidInput("subject map must start at subject 0".into()));
        }
        if subject_of
            .windows(2)
            .any(|w| !matches!(w[1].checked_sub(w[0]), Some(0 | 1)))
        {
            return Err(Error::InvalidInput(
                "subject map must be block-contiguous and nondecreasing".into(),
            ));
        }
        let mut counts = vec![0usize; subject_of[subject_of.len() - 1] + 1];
        for &s in subject_of {
            counts[s] += 1;
        }
        Self::from_counts(&counts)
    }

    pub fn n_subjects(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_rows(&self) -> usize {
        self.subject_of.len()
    }

    pub fn count(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn counts(&self) -> Vec<usize> {
        (0..self.n_subjects()).map(|i| self.count(i)).collect()
    }

    pub fn rows(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn subject_of(&self) -> &[usize] {
        &self.subject_of
    }

    /// `Z'v`: sums of `v` over each subject's rows.
    pub fn group_sum<T: Scalar>(&self, v: &[T]) -> Result<Vec<T>> {
        if v.len() != self.n_rows() {
            return Err(Error::Dimension(format!(
                "group_sum expects {} entries, got {}",
                self.n_rows(),
                v.len()
            )));
        }
        Ok((0..self.n_subjects())
            .map(|i| v[self.rows(i)].iter().fold(T::zero(), |acc, &x| acc + x))
            .collect())
    }

    /// `Zu`: repeats `u_i` over the rows of subject `i`.
    pub fn expand<T: Scalar>(&self, u: &[T]) -> Result<Vec<T>> {
        if u.len() != self.n_subjects() {
            return Err(Error::Dimension(format!(
                "expand expects {} entries, got {}",
                self.n_subjects(),
                u.len()
            )));
        }
        Ok(self.subject_of.iter().map(|&i| u[i]).collect())
    }

    /// Dense `Z`, for tests and the dense oracle only.
    pub fn dense_z<T: Scalar>(&self) -> DMatrix<T> {
        let mut z = DMatrix::zeros(self.n_rows(), self.n_subjects());
        for (row, &i) in self.subject_of.iter().enumerate() {
            z[(row, i)] = T::one();
        }
        z
    }
}

/// Curves on a common grid, grouped by subject, with a covariate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LongitudinalDataset<T: Scalar> {
    pub grid: Vec<f64>,
    /// T x M, one curve per column, ordered by subject then replicate.
    pub curves: DMatrix<T>,
    pub groups: SubjectIndex,
    /// M x (L+1); column 0 is the intercept.
    pub x: DMatrix<T>,
    /// L+1 labels, the first being the intercept.
    pub covariate_names: Vec<String>,
    pub subject_ids: Vec<String>,
    pub replicate_ids: Vec<String>,
}

pub const INTERCEPT_NAME: &str = "intercept";

impl<T: Scalar> LongitudinalDataset<T> {
    /// Validates shapes and invariants. `x` must already carry the intercept
    /// column.
    pub fn new(
        grid: Vec<f64>,
        curves: DMatrix<T>,
        groups: SubjectIndex,
        x: DMatrix<T>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let m = groups.n_rows();
        if curves.ncols() != m || x.nrows() != m {
            return Err(Error::Dimension(format!(
                "{} curves and {} covariate rows for {m} grouped rows",
                curves.ncols(),
                x.nrows()
            )));
        }
        if curves.nrows() != grid.len() {
            return Err(Error::Dimension(format!(
                "curves have {} points, grid has {}",
                curves.nrows(),
                grid.len()
            )));
        }
        if x.ncols() == 0 || x.column(0).iter().any(|&v| v != T::one()) {
            return Err(Error::InvalidInput("covariate column 0 must be all ones".into()));
        }
        if covariate_names.len() != x.ncols() {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} columns",
                covariate_names.len(),
                x.ncols()
            )));
        }
        if x.iter().chain(curves.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite value in curves or covariates".into()));
        }
        let subject_ids = (0..groups.n_subjects()).map(|i| (i + 1).to_string()).collect();
        let replicate_ids = (0..m)
            .map(|row| {
                let i = groups.subject_of()[row];
                (row - groups.rows(i).start + 1).to_string()
            })
            .collect();
        Ok(Self {
            grid,
            curves,
            groups,
            x,
            covariate_names,
            subject_ids,
            replicate_ids,
        })
    }

    pub fn with_ids(mut self, subject_ids: Vec<String>, replicate_ids: Vec<String>) -> Result<Self> {
        if subject_ids.len() != self.n_subjects() || replicate_ids.len() != self.n_curves() {
            return Err(Error::Dimension("identifier counts do not match the dataset".into()));
        }
        self.subject_ids = subject_ids;
        self.replicate_ids = replicate_ids;
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> LongitudinalDataset<U> {
        LongitudinalDataset {
            grid: self.grid.clone(),
            curves: self.curves.map(|v| U::lit(v.as_f64())),
            groups: self.groups.clone(),
            x: self.x.map(|v| U::lit(v.as_f64())),
            covariate_names: self.covariate_names.clone(),
            subject_ids: self.subject_ids.clone(),
            replicate_ids: self.replicate_ids.clone(),
        }
    }

    pub fn n_subjects(&self) -> usize {
        self.groups.n_subjects()
    }

    pub fn n_curves(&self) -> usize {
        self.groups.n_rows()
    }

    /// Number of non-intercept covariates L.
    pub fn n_covariates(&self) -> usize {
        self.x.ncols() - 1
    }

    pub fn n_points(&self) -> usize {
        self.grid.len()
    }

    /// Hex SHA-256 over grid, curves, covariates and grouping.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.grid {
            h.update(v.to_le_bytes());
        }
        for v in self.curves.iter().chain(self.x.iter()) {
            h.update(v.as_f64().to_le_bytes());
        }
        for &c in &self.groups.counts() {
            h.update((c as u64).to_le_bytes());
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hex SHA-256 of a byte string.
pub fn fingerprint_bytes(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex_digest(h)
}

/// Projected coefficients `y_k` for every curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedData<T: Scalar> {
    /// K x M.
    pub yk: DMatrix<T>,
}

impl<T: Scalar> ProjectedData<T> {
    pub fn new(ds: &LongitudinalDataset<T>, basis: &OrthoBasis<T>) -> Result<Self> {
        if ds.grid.len() != basis.t() {
            return Err(Error::Dimension(format!(
                "dataset grid has {} points, basis has {}",
                ds.grid.len(),
                basis.t()
            )));
        }
        Ok(Self {
            yk: basis.project(&ds.curves)?,
        })
    }
}

/// Affine map applied to one covariate column.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ColumnScaling {
    pub column: usize,
    pub mean: f64,
    pub scale: f64,
}

/// Centers and scales the selected covariate columns to mean 0 and sample
/// standard deviation 1 (denominator M-1).
pub fn standardize_covariates<T: Scalar>(
    ds: &LongitudinalDataset<T>,
    which: &[usize],
) -> Result<(LongitudinalDataset<T>, Vec<ColumnScaling>)> {
    let m = ds.n_curves();
    if m < 2 {
        return Err(Error::InvalidInput("standardization needs at least two rows".into()));
    }
    let mut out = ds.clone();
    let mut scalings = Vec::with_capacity(which.len());
    for &col in which {
        if col == 0 || col >= ds.x.ncols() {
            return Err(Error::InvalidInput(format!(
                "column {col} is not a standardizable covariate"
            )));
        }
        let values: Vec<f64> = ds.x.column(col).iter().map(|v| v.as_f64()).collect();
        let mean = values.iter().sum::<f64>() / m as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
        let scale = var.sqrt();
        if scale.is_nan() || scale <= 1e-12 * mean.abs().max(1.0) {
            return Err(Error::DegenerateColumn(ds.covariate_names[col].clone()));
        }
        for (dst, v) in out.x.column_mut(col).iter_mut().zip(&values) {
            *dst = T::lit((v - mean) / scale);
        }
        scalings.push(ColumnScaling { column: col, mean, scale });
    }
    Ok((out, scalings))
}

/// Inverse of [`standardize_covariates`] on the covariate matrix.
pub fn destandardize_covariates<T: Scalar>(
    ds: &LongitudinalDataset<T>,
    scalings: &[ColumnScaling],
) -> LongitudinalDataset<T> {
    let mut out = ds.clone();
    for s in scalings {
        for v in out.x.column_mut(s.column).iter_mut() {
            *v = T::lit(v.as_f64() * s.scale + s.mean);
        }
    }
    out
}

/// Maps fixed-effect coefficients (or functions), one row per covariate,
/// fitted on standardized columns back to the original covariate units.
pub fn back_map_effects<T: Scalar>(alpha: &DMatrix<T>, scalings: &[ColumnScaling]) -> DMatrix<T> {
    let mut out = alpha.clone();
    for s in scalings {
        let inv = T::lit(1.0 / s.scale);
        let shift = T::lit(s.mean / s.scale);
        for c in 0..alpha.ncols() {
            out[(s.column, c)] = alpha[(s.column, c)] * inv;
            out[(0, c)] -= alpha[(s.column, c)] * shift;
        }
    }
    out
}

/// Dense `Z' v` reference used by tests.
pub fn dense_group_sum<T: Scalar>(groups: &SubjectIndex, v: &[T]) -> DVector<T> {
    groups.dense_z::<T>().tr_mul(&DVector::from_column_slice(v))
}
