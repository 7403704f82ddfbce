use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::basis::OrthoBasis;
use crate::data::{hex_digest, LongitudinalDataset, SubjectIndex};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Everything the sampling loop needs that does not depend on Σ.
#[derive(Debug, Clone)]
pub struct FitContext<T: Scalar> {
    /// Projected coefficients, M x K (column k is `y_k`).
    pub y: DMatrix<T>,
    /// M x (L+1) design with intercept.
    pub x: DMatrix<T>,
    pub groups: SubjectIndex,
    /// Gram diagonal of the basis.
    pub d: DVector<T>,
    /// Per subject, `X_i' X_i`.
    pub subject_gram: Vec<DMatrix<T>>,
    /// n x (L+1), row i is `1' X_i`.
    pub subject_xsum: DMatrix<T>,
    /// Per subject, `X_i' Y_i` as (L+1) x K.
    pub subject_xty: Vec<DMatrix<T>>,
    /// n x K, entry (i, k) is `1' y_{k,i}`.
    pub subject_ysum: DMatrix<T>,
    /// `X'X`, used by initialization and the full-conditional sampler.
    pub xtx: DMatrix<T>,
    /// `sum_ij ||Y_ij - B y_ij||^2`, the part of the residual outside span(B).
    pub ss_outside: T,
    /// Grid length T.
    pub n_points: usize,
    pub dataset_fingerprint: String,
    pub basis_fingerprint: String,
}

impl<T: Scalar> FitContext<T> {
    pub fn k(&self) -> usize {
        self.d.len()
    }

    pub fn n_alpha(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_subjects(&self) -> usize {
        self.groups.n_subjects()
    }

    pub fn n_curves(&self) -> usize {
        self.groups.n_rows()
    }
}

/// Hex SHA-256 over the evaluated basis and its Gram diagonal.
pub fn basis_fingerprint<T: Scalar>(basis: &OrthoBasis<T>) -> String {
    let mut h = Sha256::new();
    for v in basis.b.iter().chain(basis.d.iter()) {
        h.update(v.as_f64().to_le_bytes());
    }
    hex_digest(h)
}

/// Projects the curves and hoists all Σ-independent sums out of the loop.
pub fn precompute<T: Scalar>(ds: &LongitudinalDataset<T>, basis: &OrthoBasis<T>) -> Result<FitContext<T>> {
    if ds.n_points() != basis.t() {
        return Err(Error::Dimension(format!(
            "dataset has {} grid points, basis has {}",
            ds.n_points(),
            basis.t()
        )));
    }
    let yk = basis.project(&ds.curves)?;
    let y = yk.transpose();
    let fitted = &basis.b * &yk;
    let ss_outside = (&ds.curves - fitted).norm_squared();

    let n = ds.n_subjects();
    let p = ds.x.ncols();
    let k = basis.k();
    let mut subject_gram = Vec::with_capacity(n);
    let mut subject_xty = Vec::with_capacity(n);
    let mut subject_xsum = DMatrix::zeros(n, p);
    let mut subject_ysum = DMatrix::zeros(n, k);
    for i in 0..n {
        let rows = ds.groups.rows(i);
        let xi = ds.x.rows(rows.start, rows.len());
        let yi = y.rows(rows.start, rows.len());
        subject_gram.push(xi.tr_mul(&xi));
        subject_xty.push(xi.tr_mul(&yi));
        for c in 0..p {
            subject_xsum[(i, c)] = xi.column(c).sum();
        }
        for c in 0..k {
            subject_ysum[(i, c)] = yi.column(c).sum();
        }
    }

    Ok(FitContext {
        xtx: ds.x.tr_mul(&ds.x),
        y,
        x: ds.x.clone(),
        groups: ds.groups.clone(),
        d: basis.d.clone(),
        subject_gram,
        subject_xsum,
        subject_xty,
        subject_ysum,
        ss_outside,
        n_points: ds.n_points(),
        dataset_fingerprint: ds.fingerprint(),
        basis_fingerprint: basis_fingerprint(basis),
    })
}
