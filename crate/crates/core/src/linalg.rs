//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Matrices that cross the public API are flattened row-major.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub fn mat_from_row_major(d: usize, flat: &[f64]) -> DMatrix<f64> {
    debug_assert_eq!(flat.len(), d * d);
    DMatrix::from_row_slice(d, d, flat)
}

pub fn mat_to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Lower Cholesky factor with a scale-aware pivot check.
///
/// Fails when the smallest pivot `L_ii^2` is at most `1e-12 * trace / d`.
pub fn cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = m.nrows();
    if d == 0 || m.ncols() != d {
        return Err(Error::NotPositiveDefinite("non-square or empty matrix".into()));
    }
    let trace: f64 = (0..d).map(|i| m[(i, i)]).sum();
    if !trace.is_finite() || trace <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!("trace {trace}")));
    }
    let tol = 1e-12 * trace / d as f64;
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let mut pivot = m[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > tol) {
            return Err(Error::NotPositiveDefinite(format!("pivot {pivot:.3e} at index {j}")));
        }
        let ljj = pivot.sqrt();
        l[(j, j)] = ljj;
        for i in (j + 1)..d {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(l)
}

pub fn is_pd(m: &DMatrix<f64>) -> bool {
    cholesky(m).is_ok()
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = cholesky(m)?;
    let d = m.nrows();
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(d, d))
        .ok_or_else(|| Error::NotPositiveDefinite("singular factor".into()))?;
    Ok(symmetrize(&(linv.transpose() * linv)))
}

pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let l = cholesky(m)?;
    Ok(2.0 * (0..m.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>())
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = m.nrows();
    let mut idx: Vec<usize> = (0..d).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = DVector::from_iterator(d, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vecs = DMatrix::zeros(d, d);
    for (c, &i) in idx.iter().enumerate() {
        vecs.set_column(c, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Rebuild `V diag(f(λ)) Vᵀ`.
pub fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen(m);
    let fv = DMatrix::from_diagonal(&vals.map(f));
    symmetrize(&(&vecs * fv * vecs.transpose()))
}

pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_apply(m, |x| x.max(0.0).sqrt())
}

pub fn sym_inv_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, _) = sym_eigen(m);
    if vals[0] <= 0.0 {
        return Err(Error::NotPositiveDefinite(format!("smallest eigenvalue {:.3e}", vals[0])));
    }
    Ok(sym_apply(m, |x| 1.0 / x.sqrt()))
}

pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen(m);
    vals.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn frobenius(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
