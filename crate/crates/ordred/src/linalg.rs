//! Dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Returns `(values, vectors)` with vectors in columns.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = symmetrize(m);
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("non-finite eigenvalue")
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// `(A + A^T) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn spd_power(m: &DMatrix<f64>, pow: f64, name: &str) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sym_eigen_desc(m);
    let min = vals[vals.len() - 1];
    if min <= 0.0 && pow < 0.0 {
        return Err(Error::SingularCovariance { min_eig: min }.with_context(name.to_string()));
    }
    let d = DMatrix::from_diagonal(&vals.map(|v| v.max(0.0).powf(pow)));
    Ok(&vecs * d * vecs.transpose())
}

/// Symmetric positive-definite square root.
pub fn sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_power(m, 0.5, "sqrt")
}

/// Symmetric positive-definite inverse square root.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spd_power(m, -0.5, "inverse sqrt")
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn inv_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::Numerical("cholesky of non-SPD matrix".into()))?;
    Ok(chol.inverse())
}

/// Orthonormal basis of the column span (thin QR). Requires full column rank.
pub fn orthonormalize(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (rows, cols) = m.shape();
    if cols == 0 {
        return Ok(DMatrix::zeros(rows, 0));
    }
    let svd = m.clone().svd(true, false);
    let max_sv = svd.singular_values.max();
    let rank = svd
        .singular_values
        .iter()
        .filter(|&&s| s > max_sv * 1e-12)
        .count();
    if rank < cols {
        return Err(Error::RankDeficient(format!(
            "{}x{} matrix has rank {}",
            rows, cols, rank
        )));
    }
    let u = svd.u.expect("svd with u");
    Ok(u.columns(0, cols).into_owned())
}

/// Orthonormal basis of the orthogonal complement of `span(m)` in R^p.
/// `m` must already have orthonormal columns.
pub fn orth_complement(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (p, d) = m.shape();
    if d == 0 {
        return DMatrix::identity(p, p);
    }
    if d >= p {
        return DMatrix::zeros(p, 0);
    }
    // Eigenvectors of I - M M^T with eigenvalue 1.
    let proj = DMatrix::identity(p, p) - m * m.transpose();
    let (vals, vecs) = sym_eigen_desc(&proj);
    let keep = vals.iter().filter(|&&v| v > 0.5).count();
    debug_assert_eq!(keep, p - d);
    vecs.columns(0, p - d).into_owned()
}

/// 2-norm condition number of a symmetric matrix.
pub fn sym_cond(m: &DMatrix<f64>) -> f64 {
    let (vals, _) = sym_eigen_desc(m);
    let max = vals.iter().cloned().fold(0.0_f64, |a, b| a.max(b.abs()));
    let min = vals.iter().cloned().fold(f64::INFINITY, |a, b| a.min(b.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `log |A|` for SPD `A` via Cholesky.
pub fn ln_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() == 0 {
        return Ok(0.0);
    }
    let chol = symmetrize(m)
        .cholesky()
        .ok_or_else(|| Error::Numerical("log-determinant of non-SPD matrix".into()))?;
    Ok(2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}
