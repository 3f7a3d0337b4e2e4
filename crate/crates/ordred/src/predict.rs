//! Small prediction rules used by cross-validation and the evaluation
//! harness: brute-force k-NN regression/classification and least squares.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

fn k_nearest(train: &DMatrix<f64>, query: &[f64], k: usize) -> Vec<usize> {
    let n = train.nrows();
    let mut dist: Vec<(f64, usize)> = (0..n)
        .map(|i| {
            let mut d = 0.0;
            for j in 0..train.ncols() {
                let t = train[(i, j)] - query[j];
                d += t * t;
            }
            (d, i)
        })
        .collect();
    let k = k.min(n);
    dist.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
    dist[..k].sort_by(|a, b| a.partial_cmp(b).unwrap());
    dist[..k].iter().map(|&(_, i)| i).collect()
}

/// k-NN regression on a feature matrix. Zero-width feature spaces predict
/// the training mean.
pub fn knn_regress(
    train_x: &DMatrix<f64>,
    train_y: &[f64],
    test_x: &DMatrix<f64>,
    k: usize,
) -> Vec<f64> {
    let mean = train_y.iter().sum::<f64>() / train_y.len() as f64;
    (0..test_x.nrows())
        .map(|q| {
            if train_x.ncols() == 0 {
                return mean;
            }
            let query: Vec<f64> = (0..test_x.ncols()).map(|j| test_x[(q, j)]).collect();
            let idx = k_nearest(train_x, &query, k);
            idx.iter().map(|&i| train_y[i]).sum::<f64>() / idx.len() as f64
        })
        .collect()
}

/// k-NN majority-vote classification; ties break toward the smaller label.
pub fn knn_classify(
    train_x: &DMatrix<f64>,
    train_y: &[usize],
    test_x: &DMatrix<f64>,
    k: usize,
    n_classes: usize,
) -> Vec<usize> {
    let mut counts = vec![0usize; n_classes];
    for &c in train_y {
        counts[c] += 1;
    }
    let majority = counts
        .iter()
        .enumerate()
        .max_by_key(|&(c, &n)| (n, usize::MAX - c))
        .map(|(c, _)| c)
        .unwrap_or(0);
    (0..test_x.nrows())
        .map(|q| {
            if train_x.ncols() == 0 {
                return majority;
            }
            let query: Vec<f64> = (0..test_x.ncols()).map(|j| test_x[(q, j)]).collect();
            let idx = k_nearest(train_x, &query, k);
            let mut votes = vec![0usize; n_classes];
            for &i in &idx {
                votes[train_y[i]] += 1;
            }
            votes
                .iter()
                .enumerate()
                .max_by_key(|&(c, &v)| (v, usize::MAX - c))
                .map(|(c, _)| c)
                .unwrap()
        })
        .collect()
}

/// Ordinary least squares with intercept; returns fitted values and R^2.
pub fn ols_r2(x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
    let n = x.nrows();
    if y.len() != n || n < x.ncols() + 2 {
        return Err(Error::Invalid("ols: bad dimensions".into()));
    }
    let mut design = DMatrix::zeros(n, x.ncols() + 1);
    for i in 0..n {
        design[(i, 0)] = 1.0;
        for j in 0..x.ncols() {
            design[(i, j + 1)] = x[(i, j)];
        }
    }
    let yv = DVector::from_column_slice(y);
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * &yv;
    let chol = xtx
        .cholesky()
        .ok_or_else(|| Error::Numerical("ols: singular design".into()))?;
    let beta = chol.solve(&xty);
    let fitted = design * beta;
    let ybar = yv.sum() / n as f64;
    let ss_tot: f64 = yv.iter().map(|v| (v - ybar).powi(2)).sum();
    if ss_tot <= 0.0 {
        return Err(Error::ZeroVariance("ols response".into()));
    }
    let ss_res: f64 = (yv - fitted).iter().map(|v| v * v).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Default neighbor count: ceil(sqrt(n_train)).
pub fn default_k(n_train: usize) -> usize {
    (n_train as f64).sqrt().ceil() as usize
}
