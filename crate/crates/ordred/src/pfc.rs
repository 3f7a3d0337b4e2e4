//! Principal Fitted Components for continuous predictors.
//!
//! Used to initialize the EM estimator (applied naively to the raw codes)
//! and as the comparison baseline.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::BasisMatrix;

/// Result of a PFC fit.
#[derive(Debug, Clone)]
pub struct PfcFit {
    /// Semi-orthogonal p x d basis of the estimated reduction subspace.
    pub alpha: DMatrix<f64>,
    /// Sample marginal covariance of the (centered) predictors.
    pub sigma: DMatrix<f64>,
    /// Sample covariance of the fitted values of the regression on F.
    pub sigma_fit: DMatrix<f64>,
    /// Eigenvalues of the whitened fitted covariance, descending.
    pub eigenvalues: DVector<f64>,
    /// Regression coefficients Bhat (p x r) of X on the centered basis.
    pub coefficients: DMatrix<f64>,
}

/// Center the columns of a data matrix in place and return the means.
pub fn center_columns(data: &mut DMatrix<f64>) -> DVector<f64> {
    let n = data.nrows();
    let means = DVector::from_fn(data.ncols(), |j, _| data.column(j).sum() / n as f64);
    for j in 0..data.ncols() {
        for i in 0..n {
            data[(i, j)] -= means[j];
        }
    }
    means
}

/// Fit PFC with the default ridge guard on the marginal covariance.
pub fn fit_pfc(data: &DMatrix<f64>, f: &BasisMatrix, d: usize) -> Result<PfcFit> {
    fit_pfc_opts(data, f, d, true)
}

/// Fit PFC on an n x p real matrix against a centered basis matrix.
///
/// `alpha` spans `sigma^{-1/2}` times the top-d eigenspace of the whitened
/// fitted covariance, re-orthonormalized so `alpha' alpha = I_d`.
pub fn fit_pfc_opts(data: &DMatrix<f64>, f: &BasisMatrix, d: usize, ridge: bool) -> Result<PfcFit> {
    let n = data.nrows();
    let p = data.ncols();
    let r = f.r();
    if f.n() != n {
        return Err(Error::Invalid(format!(
            "basis has {} rows but data has {n}",
            f.n()
        )));
    }
    if d > r.min(p) {
        return Err(Error::Invalid(format!("d = {d} exceeds min(r, p) = {}", r.min(p))));
    }
    let mut x = data.clone();
    center_columns(&mut x);
    let mut sigma = x.transpose() * &x / n as f64;

    // Regression of X on F: Bhat = (F'F)^{-1} F'X, fitted values F Bhat.
    let fm = f.matrix();
    let ftf = fm.transpose() * fm;
    let ftx = fm.transpose() * &x;
    let chol = ftf
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateBasis("F'F is not positive definite".into()))?;
    let bhat = chol.solve(&ftx); // r x p
    let fitted = fm * &bhat;
    let sigma_fit = fitted.transpose() * &fitted / n as f64;

    let (eigs, _) = linalg::sym_eigen_desc(&sigma);
    let min_eig = eigs[p - 1];
    if min_eig < 1e-10 {
        if !ridge {
            return Err(Error::SingularCovariance { min_eig });
        }
        let eps = 1e-8 * sigma.trace() / p as f64;
        for j in 0..p {
            sigma[(j, j)] += eps;
        }
    }

    let w = linalg::inv_sqrt_spd(&sigma)?;
    let kernel = &w * &sigma_fit * &w;
    let (vals, vecs) = linalg::sym_eigen_desc(&kernel);
    let alpha = if d == 0 {
        DMatrix::zeros(p, 0)
    } else {
        let v = vecs.columns(0, d).into_owned();
        linalg::orthonormalize(&(&w * v))?
    };
    Ok(PfcFit {
        alpha,
        sigma,
        sigma_fit,
        eigenvalues: vals,
        coefficients: bhat.transpose(),
    })
}
