//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// Relative eigenvalue floor used before inverting weighting/covariance matrices.
pub const EIGEN_FLOOR: f64 = 1e-10;

/// Relative singular-value threshold used for rank decisions.
pub const RANK_TOL: f64 = 1e-12;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Inverse of a symmetric matrix after flooring its eigenvalues at
/// `EIGEN_FLOOR * λ_max`.
pub fn spd_inverse_floored(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_power_floored(m, -1.0)
}

/// `m^p` of a symmetric matrix through its eigendecomposition, with the
/// eigenvalues floored at `EIGEN_FLOOR * λ_max` first.
pub fn spd_power_floored(m: &DMatrix<f64>, p: f64) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "spd_power_floored: square matrix",
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("matrix has non-finite entries".into()));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return Err(Error::Singular("matrix has no positive eigenvalue".into()));
    }
    let floor = EIGEN_FLOOR * max;
    let vals = eig.eigenvalues.map(|l| l.max(floor).powf(p));
    let v = &eig.eigenvectors;
    Ok(symmetrize(&(v * DMatrix::from_diagonal(&vals) * v.transpose())))
}

/// `R⁻¹` from the thin QR factorisation `a = QR`, together with `Q`.
pub fn qr_inverse_r(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let qr = a.clone().qr();
    let r_inv = qr
        .r()
        .solve_upper_triangular(&DMatrix::identity(a.ncols(), a.ncols()))
        .filter(|m| m.iter().all(|v| v.is_finite()))
        .ok_or_else(|| Error::Singular("triangular factor is singular".into()))?;
    Ok((qr.q(), r_inv))
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Numerical column rank via singular values relative to the largest one.
pub fn column_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

/// Solves `a x = b` for square `a` by LU; singular systems are errors.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    match lu.solve(b) {
        Some(x) if x.iter().all(|v| v.is_finite()) => Ok(x),
        _ => Err(Error::Singular("linear system".into())),
    }
}

/// Inverse of a general square matrix; singular or non-finite results are errors.
pub fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if column_rank(a) < a.ncols() {
        return Err(Error::Singular("matrix is rank deficient".into()));
    }
    match a.clone().try_inverse() {
        Some(inv) if inv.iter().all(|v| v.is_finite()) => Ok(inv),
        _ => Err(Error::Singular("matrix inverse".into())),
    }
}

/// Ordinary least squares coefficients of `y` on the columns of `x` (QR based).
pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch { context: "least_squares: rows", expected: x.nrows(), got: y.len() });
    }
    if x.nrows() < x.ncols() || column_rank(x) < x.ncols() {
        return Err(Error::Singular("regressor matrix is collinear".into()));
    }
    let qr = x.clone().qr();
    let qty = qr.q().transpose() * y;
    qr.r().solve_upper_triangular(&qty).ok_or_else(|| Error::Singular("triangular solve".into()))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}
