use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = m.clone().try_inverse().ok_or_else(|| Error::Singular(what.to_string()))?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::Singular(what.to_string()))
    }
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn max_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

pub fn vec_max_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Raises every eigenvalue of a symmetric matrix to at least `floor`.
///
/// Returns the repaired matrix and whether any eigenvalue was lifted.
pub fn eigen_floor(m: &DMatrix<f64>, floor: f64) -> (DMatrix<f64>, bool) {
    let eig = symmetrize(m).symmetric_eigen();
    let mut lifted = false;
    let vals = eig.eigenvalues.map(|v| {
        if v < floor {
            lifted = true;
            floor
        } else {
            v
        }
    });
    let repaired = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    (symmetrize(&repaired), lifted)
}

pub fn outer(a: &DVector<f64>) -> DMatrix<f64> {
    a * a.transpose()
}

/// Flattens a matrix row-major, the layout used by the chunked reductions.
pub fn flatten(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn unflatten(v: &[f64], p: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(p, p, v)
}
