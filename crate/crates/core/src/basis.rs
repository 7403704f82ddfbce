//! Penalized B-spline bases and their reparametrization to a diagonal Gram.
//!
//! A raw basis `B0` (T x K0) paired with a roughness penalty `P` induces the
//! prior covariance `B0 P^-1 B0'` on a function evaluated over the grid. The
//! reparametrized basis `B` (T x K) reproduces that covariance with iid unit
//! coefficients and satisfies `B'B = diag(d)`, which is what lets the sampler
//! factor over basis coefficients.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Relative ridge added to the penalty before inversion.
pub const PENALTY_RIDGE: f64 = 1e-8;
/// Default relative eigenvalue cutoff for [`orthogonalize`].
pub const DEFAULT_EIG_TOL: f64 = 1e-10;
pub const DEFAULT_K0: usize = 15;
pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_PENALTY_ORDER: usize = 2;

/// B-spline basis evaluated on a grid, with an optional difference penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBasis {
    pub grid: Vec<f64>,
    /// Full knot vector, `K0 + degree + 1` entries with clamped ends.
    pub knots: Vec<f64>,
    pub b0: DMatrix<f64>,
    pub penalty: Option<DMatrix<f64>>,
    pub penalty_order: Option<usize>,
    pub degree: usize,
    pub k0: usize,
}

impl RawBasis {
    /// Attaches an order-`order` difference penalty.
    pub fn with_difference_penalty(mut self, order: usize) -> Result<Self> {
        self.penalty = Some(build_difference_penalty(self.k0, order)?);
        self.penalty_order = Some(order);
        Ok(self)
    }

    /// Evaluates the raw B-splines at arbitrary points inside the knot range.
    pub fn evaluate(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        let lo = self.knots[0];
        let hi = self.knots[self.knots.len() - 1];
        if let Some(bad) = points.iter().find(|&&x| !(lo..=hi).contains(&x)) {
            return Err(Error::InvalidInput(format!(
                "point {bad} lies outside the basis range [{lo}, {hi}]"
            )));
        }
        Ok(evaluate_bsplines(&self.knots, self.degree, self.k0, points))
    }
}

/// Reparametrized basis with `B'B = diag(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrthoBasis<T: Scalar> {
    pub grid: Vec<f64>,
    /// T x K evaluated basis.
    pub b: DMatrix<T>,
    /// Gram diagonal, sorted descending, all positive.
    pub d: DVector<T>,
    pub eig_tol: f64,
    /// Raw basis this one was derived from, when known.
    pub source: Option<RawBasis>,
    /// K0 x K map with `b = source.b0 * transform`.
    pub transform: Option<DMatrix<f64>>,
}

impl<T: Scalar> OrthoBasis<T> {
    pub fn k(&self) -> usize {
        self.b.ncols()
    }

    pub fn t(&self) -> usize {
        self.b.nrows()
    }

    /// Converts the evaluated matrices to another scalar type.
    pub fn cast<U: Scalar>(&self) -> OrthoBasis<U> {
        OrthoBasis {
            grid: self.grid.clone(),
            b: self.b.map(|x| U::lit(x.as_f64())),
            d: self.d.map(|x| U::lit(x.as_f64())),
            eig_tol: self.eig_tol,
            source: self.source.clone(),
            transform: self.transform.clone(),
        }
    }

    /// `diag(d)^-1 B' Y` for a T x M matrix of curves (one per column).
    pub fn project(&self, y: &DMatrix<T>) -> Result<DMatrix<T>> {
        if y.nrows() != self.t() {
            return Err(Error::InvalidInput(format!(
                "projection expects {} rows, got {}",
                self.t(),
                y.nrows()
            )));
        }
        let mut out = self.b.tr_mul(y);
        for (k, mut row) in out.row_iter_mut().enumerate() {
            let inv = T::one() / self.d[k];
            row.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(out)
    }

    pub fn project_vector(&self, y: &DVector<T>) -> Result<DVector<T>> {
        let m = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
        Ok(self.project(&m)?.column(0).into_owned())
    }

    /// Basis evaluations on `points`. The training grid returns the stored
    /// matrix; other points need the raw basis and transform.
    pub fn evaluate(&self, points: &[f64]) -> Result<DMatrix<T>> {
        if points == self.grid.as_slice() {
            return Ok(self.b.clone());
        }
        match (&self.source, &self.transform) {
            (Some(raw), Some(transform)) => {
                let b0 = raw.evaluate(points)?;
                Ok((b0 * transform).map(T::lit))
            }
            _ => Err(Error::UnsupportedGrid),
        }
    }
}

/// Equally spaced grid of `t` points on `[0, 1]`.
pub fn unit_grid(t: usize) -> Vec<f64> {
    match t {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..t).map(|i| i as f64 / (t - 1) as f64).collect(),
    }
}

fn clamped_knots(lo: f64, hi: f64, k0: usize, degree: usize) -> Vec<f64> {
    let interior = k0 - degree - 1;
    let mut knots = Vec::with_capacity(k0 + degree + 1);
    knots.extend(std::iter::repeat_n(lo, degree + 1));
    for j in 1..=interior {
        knots.push(lo + (hi - lo) * j as f64 / (interior + 1) as f64);
    }
    knots.extend(std::iter::repeat_n(hi, degree + 1));
    knots
}

/// Index `s` of the knot span holding `x`, with `degree <= s < k0`.
fn find_span(knots: &[f64], degree: usize, k0: usize, x: f64) -> usize {
    if x >= knots[k0] {
        return k0 - 1;
    }
    let (mut lo, mut hi) = (degree, k0);
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if x < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

fn evaluate_bsplines(knots: &[f64], degree: usize, k0: usize, points: &[f64]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(points.len(), k0);
    let mut vals = vec![0.0; degree + 1];
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    for (row, &x) in points.iter().enumerate() {
        let span = find_span(knots, degree, k0, x);
        // Triangular de Boor scheme for the degree+1 nonzero functions.
        vals[0] = 1.0;
        for j in 1..=degree {
            left[j] = x - knots[span + 1 - j];
            right[j] = knots[span + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        for (r, &v) in vals.iter().enumerate() {
            out[(row, span - degree + r)] = v;
        }
    }
    out
}

/// Evaluates `k0` B-splines of the given degree on `grid`, with equally
/// spaced interior knots over the grid range and clamped boundary knots.
pub fn build_bspline_basis(grid: &[f64], k0: usize, degree: usize) -> Result<RawBasis> {
    if grid.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("grid contains non-finite values".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("grid must be strictly increasing".into()));
    }
    if k0 > grid.len() {
        return Err(Error::Dimension(format!(
            "K0 = {k0} exceeds the number of grid points T = {}",
            grid.len()
        )));
    }
    if k0 < degree + 2 {
        return Err(Error::Dimension(format!(
            "K0 = {k0} must be at least degree + 2 = {}",
            degree + 2
        )));
    }
    let knots = clamped_knots(grid[0], grid[grid.len() - 1], k0, degree);
    let b0 = evaluate_bsplines(&knots, degree, k0, grid);
    Ok(RawBasis {
        grid: grid.to_vec(),
        knots,
        b0,
        penalty: None,
        penalty_order: None,
        degree,
        k0,
    })
}

/// `D'D` for the `order`-th difference operator on `k0` coefficients.
pub fn build_difference_penalty(k0: usize, order: usize) -> Result<DMatrix<f64>> {
    if order == 0 || order >= k0 {
        return Err(Error::Dimension(format!(
            "difference order {order} must satisfy 1 <= order < K0 = {k0}"
        )));
    }
    let mut d = DMatrix::<f64>::identity(k0, k0);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        let mut next = DMatrix::zeros(rows, k0);
        for r in 0..rows {
            let diff = d.row(r + 1) - d.row(r);
            next.row_mut(r).copy_from(&diff);
        }
        d = next;
    }
    Ok(d.tr_mul(&d))
}

/// Ridge-stabilized penalty `P + eps * tr(P)/K0 * I`.
pub fn ridge_penalty(p: &DMatrix<f64>) -> DMatrix<f64> {
    let k0 = p.nrows();
    let scale = p.trace() / k0 as f64;
    let scale = if scale > 0.0 { scale } else { 1.0 };
    p + DMatrix::identity(k0, k0) * (PENALTY_RIDGE * scale)
}

/// `B0 Pr^-1 B0'`, the grid covariance induced by the raw basis and penalty.
pub fn induced_covariance(raw: &RawBasis) -> Result<DMatrix<f64>> {
    let p = raw
        .penalty
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("raw basis has no penalty".into()))?;
    let inv = ridge_penalty(p)
        .try_inverse()
        .ok_or_else(|| Error::Decomposition("ridge penalty is singular".into()))?;
    Ok(&raw.b0 * inv * raw.b0.transpose())
}

/// Spectral reparametrization of `(B0, P)` into a basis with diagonal Gram.
///
/// With `Pr^-1 = L L'` and `A = B0 L`, the nonzero eigenpairs of
/// `C = A A'` come from the thin SVD `A = U S V'`: `B = U S = A V` has
/// orthogonal columns with squared norms `S²`, and `B B' = C`.
pub fn orthogonalize(raw: &RawBasis, eig_tol: f64) -> Result<OrthoBasis<f64>> {
    if !(eig_tol > 0.0 && eig_tol < 1.0) {
        return Err(Error::InvalidInput(format!(
            "eig_tol = {eig_tol} must lie in (0, 1)"
        )));
    }
    let p = raw
        .penalty
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("raw basis has no penalty".into()))?;
    let pr = SymmetricEigen::new(ridge_penalty(p));
    if pr.eigenvalues.iter().any(|&v| v.is_nan() || v <= 0.0) {
        return Err(Error::Decomposition(
            "ridge-stabilized penalty is not positive definite".into(),
        ));
    }
    let mut root = pr.eigenvectors.clone();
    for (j, mut col) in root.column_iter_mut().enumerate() {
        col /= pr.eigenvalues[j].sqrt();
    }
    let a = &raw.b0 * &root;
    // Thin SVD of A rather than an eigensolve of A'A: the singular values
    // span many orders of magnitude and squaring would lose the small ones.
    let svd = a.svd(true, true);
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Decomposition("SVD of the scaled basis failed".into())),
    };
    let lambda: Vec<f64> = svd.singular_values.iter().map(|s| s * s).collect();
    let lambda_max = lambda.iter().copied().fold(0.0f64, f64::max);
    if !lambda_max.is_finite() || lambda_max <= 0.0 {
        return Err(Error::DegenerateBasis { cutoff: 0.0 });
    }
    let cutoff = eig_tol * lambda_max;
    let mut order: Vec<usize> = (0..lambda.len()).filter(|&j| lambda[j] > cutoff).collect();
    if order.is_empty() {
        return Err(Error::DegenerateBasis { cutoff });
    }
    order.sort_by(|&i, &j| lambda[j].total_cmp(&lambda[i]));

    let k0 = raw.k0;
    let mut v = DMatrix::zeros(k0, order.len());
    let mut b = DMatrix::zeros(raw.b0.nrows(), order.len());
    for (c, &j) in order.iter().enumerate() {
        v.set_column(c, &vt.row(j).transpose());
        b.set_column(c, &(u.column(j) * svd.singular_values[j]));
    }
    // Fix signs: largest-magnitude entry of each column positive.
    for (c, mut col) in b.column_iter_mut().enumerate() {
        let pivot = col.iter().copied().fold(0.0f64, |acc, x| {
            if x.abs() > acc.abs() {
                x
            } else {
                acc
            }
        });
        if pivot < 0.0 {
            col.neg_mut();
            v.column_mut(c).neg_mut();
        }
    }
    let d = DVector::from_iterator(b.ncols(), b.column_iter().map(|c| c.norm_squared()));
    let transform = root * v;
    Ok(OrthoBasis {
        grid: raw.grid.clone(),
        b,
        d,
        eig_tol,
        source: Some(raw.clone()),
        transform: Some(transform),
    })
}

/// Builds the default penalized cubic B-spline basis on `grid` and
/// orthogonalizes it.
pub fn default_basis(
    grid: &[f64],
    k0: usize,
    degree: usize,
    penalty_order: usize,
    eig_tol: f64,
) -> Result<OrthoBasis<f64>> {
    let raw = build_bspline_basis(grid, k0, degree)?.with_difference_penalty(penalty_order)?;
    orthogonalize(&raw, eig_tol)
}

/// Largest off-diagonal magnitude of `B'B` relative to `max(d)`.
pub fn gram_offdiag_ratio<T: Scalar>(basis: &OrthoBasis<T>) -> f64 {
    let gram = basis.b.tr_mul(&basis.b);
    let mut worst = 0.0f64;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            if i != j {
                worst = worst.max(gram[(i, j)].as_f64().abs());
            }
        }
    }
    worst / basis.d.max().as_f64()
}

/// `||B B' - C|| / ||C||` in Frobenius norm, against the raw source.
pub fn covariance_equivalence_error(basis: &OrthoBasis<f64>) -> Result<f64> {
    let raw = basis
        .source
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("basis carries no raw source".into()))?;
    let c = induced_covariance(raw)?;
    let bb = &basis.b * basis.b.transpose();
    Ok((bb - &c).norm() / c.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn degree_zero_is_interval_indicator() {
        let grid = unit_grid(8);
        let raw = build_bspline_basis(&grid, 4, 0).unwrap();
        let expected = [0, 0, 1, 1, 2, 2, 3, 3];
        for (t, &col) in expected.iter().enumerate() {
            for k in 0..4 {
                let want = if k == col { 1.0 } else { 0.0 };
                assert_eq!(raw.b0[(t, k)], want, "row {t} col {k}");
            }
        }
    }

    #[test]
    fn rows_partition_unity() {
        for (t, k0, degree) in [(30, 10, 3), (12, 5, 1), (50, 15, 2), (7, 7, 4)] {
            let raw = build_bspline_basis(&unit_grid(t), k0, degree).unwrap();
            for row in raw.b0.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn bspline_input_errors() {
        assert!(matches!(
            build_bspline_basis(&[0.0, 0.5, 0.5, 1.0], 3, 1),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            build_bspline_basis(&unit_grid(5), 6, 3),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            build_bspline_basis(&unit_grid(10), 4, 3),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn second_difference_penalty_entries() {
        let p = build_difference_penalty(4, 2).unwrap();
        assert_eq!(p[(0, 0)], 1.0);
        assert_eq!(p[(1, 1)], 5.0);
        assert_eq!(p[(0, 1)], -2.0);
        assert_eq!(p, p.transpose());
        let ones = DVector::from_element(4, 1.0);
        let linear = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(&p * ones, DVector::zeros(4));
        assert_eq!(&p * linear, DVector::zeros(4));
    }

    #[test]
    fn penalty_order_errors() {
        assert!(build_difference_penalty(3, 3).is_err());
        assert!(build_difference_penalty(3, 0).is_err());
        let p = build_difference_penalty(6, 3).unwrap();
        let quad = DVector::from_iterator(6, (0..6).map(|i| (i * i) as f64));
        assert!((&p * quad).amax() < 1e-12);
    }

    #[test]
    fn identity_basis_and_penalty() {
        let t = 6;
        let raw = RawBasis {
            grid: unit_grid(t),
            knots: vec![0.0, 1.0],
            b0: DMatrix::identity(t, t),
            penalty: Some(DMatrix::identity(t, t)),
            penalty_order: None,
            degree: 0,
            k0: t,
        };
        let ortho = orthogonalize(&raw, DEFAULT_EIG_TOL).unwrap();
        assert_eq!(ortho.k(), t);
        for k in 0..t {
            assert_relative_eq!(ortho.d[k], 1.0, epsilon = 1e-7);
        }
        // Repeated eigenvalue: B is orthogonal up to rotation, so check B B'.
        let bb = &ortho.b * ortho.b.transpose();
        assert!((bb - DMatrix::<f64>::identity(t, t)).amax() < 1e-7);
    }

    #[test]
    fn orthogonalize_properties_default() {
        let basis = default_basis(&unit_grid(144), 15, 3, 2, DEFAULT_EIG_TOL).unwrap();
        assert_eq!(basis.k(), 15);
        assert!(gram_offdiag_ratio(&basis) <= 1e-8);
        assert!(basis.d.iter().all(|&x| x > 0.0));
        assert!(basis.d.as_slice().windows(2).all(|w| w[0] >= w[1]));
        assert!(covariance_equivalence_error(&basis).unwrap() <= 1e-6);
        let rebuilt = &basis.source.as_ref().unwrap().b0 * basis.transform.as_ref().unwrap();
        assert!((rebuilt - &basis.b).amax() < 1e-8 * basis.b.amax());
    }

    #[test]
    fn orthogonalize_rejects_bad_tolerance() {
        let raw = build_bspline_basis(&unit_grid(20), 6, 3)
            .unwrap()
            .with_difference_penalty(2)
            .unwrap();
        assert!(orthogonalize(&raw, 0.0).is_err());
        assert!(orthogonalize(&raw, 1.0).is_err());
        let no_penalty = build_bspline_basis(&unit_grid(20), 6, 3).unwrap();
        assert!(orthogonalize(&no_penalty, 1e-10).is_err());
    }

    #[test]
    fn project_unit_vectors_and_zero() {
        let basis = default_basis(&unit_grid(40), 8, 3, 2, DEFAULT_EIG_TOL).unwrap();
        let coefs = basis.project(&basis.b).unwrap();
        assert!((coefs - DMatrix::<f64>::identity(8, 8)).amax() < 1e-10);
        let zero = basis.project(&DMatrix::zeros(40, 3)).unwrap();
        assert_eq!(zero, DMatrix::zeros(8, 3));
        assert!(basis.project(&DMatrix::zeros(39, 1)).is_err());
    }

    #[test]
    fn evaluate_off_grid_matches_on_grid() {
        let grid = unit_grid(30);
        let basis = default_basis(&grid, 10, 3, 2, DEFAULT_EIG_TOL).unwrap();
        let mut perturbed = grid.clone();
        perturbed.push(0.5);
        let b = basis.evaluate(&perturbed).unwrap();
        assert!((b.rows(0, 30) - &basis.b).amax() < 1e-8 * basis.b.amax());
        let mut bare = basis.clone();
        bare.source = None;
        assert!(matches!(bare.evaluate(&[0.5]), Err(Error::UnsupportedGrid)));
        assert!(basis.evaluate(&[1.5]).is_err());
    }

    #[test]
    fn cast_to_f32_projects() {
        let basis = default_basis(&unit_grid(30), 6, 3, 2, DEFAULT_EIG_TOL).unwrap();
        let b32: OrthoBasis<f32> = basis.cast();
        // The ridge spreads d over ~10 decades, beyond f32 precision for the
        // smallest coefficients, so compare in function space.
        let coefs = b32.project(&b32.b).unwrap();
        let recon = &b32.b * coefs;
        assert!((recon - &b32.b).amax() < 1e-4 * b32.b.amax());
    }
}
