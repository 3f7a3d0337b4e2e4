//! Group-lasso penalized estimation of alpha inside the M-step, giving
//! simultaneous variable selection and dimension reduction, plus selection
//! of the penalty weight along a path.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::em::{self, EStepSummary, FitOptions};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{BasisSpec, FittedModel, OrdinalDataset, Response};
use crate::predict;
use crate::reduce;

/// A penalized fit with its active set and the criterion path that chose it.
#[derive(Debug, Clone)]
pub struct RegularizedFit {
    pub model: FittedModel,
    pub lambda: f64,
    /// Predictors with nonzero alpha rows.
    pub active_set: Vec<usize>,
    /// `(lambda, criterion)` pairs over the searched grid; criterion is NaN
    /// where the penalty killed every row.
    pub criterion_trace: Vec<(f64, f64)>,
}

/// Rows of alpha with norm above the hard zero threshold.
pub fn active_rows(alpha: &DMatrix<f64>) -> Vec<usize> {
    (0..alpha.nrows())
        .filter(|&i| alpha.row(i).norm() > 0.0)
        .collect()
}

fn penalized_objective(alpha: &DMatrix<f64>, s_fit: &DMatrix<f64>, lambda: f64) -> f64 {
    let fit_term = -(alpha.transpose() * s_fit * alpha).trace();
    let penalty: f64 = (0..alpha.nrows()).map(|i| alpha.row(i).norm()).sum();
    fit_term + lambda * penalty
}

/// Row-norm scale at which the penalty dominates the unpenalized solution's
/// gradient; the default path runs down from here.
pub fn lambda_max(summary: &EStepSummary, d: usize) -> Result<f64> {
    let alpha0 = em::m_step(summary, d)?.alpha;
    let grad = 2.0 * &summary.s_fit * alpha0;
    Ok((0..grad.nrows())
        .map(|i| grad.row(i).norm())
        .fold(0.0, f64::max))
}

/// Default 30-point log-spaced grid from `1e-4 * lambda_max` to `lambda_max`.
pub fn default_grid(lambda_max: f64, len: usize) -> Vec<f64> {
    let lo = (1e-4 * lambda_max).ln();
    let hi = lambda_max.ln();
    (0..len)
        .map(|k| (lo + (hi - lo) * k as f64 / (len - 1) as f64).exp())
        .collect()
}

/// Minimize `-tr(alpha' S_fit alpha) + lambda sum_i ||alpha_i||_2` subject to
/// `alpha' S alpha = I_d`, by alternating a gradient step on the smooth term
/// in whitened coordinates, row-wise group soft-thresholding, and feasibility
/// restoration by S-orthonormalization.
///
/// Rows whose norm falls below 1e-8 at convergence are exactly zero in the
/// returned matrix, which is feasible and never worse (in penalized
/// objective) than the unpenalized solution it starts from.
pub fn fit_penalized_alpha(summary: &EStepSummary, d: usize, lambda: f64) -> Result<DMatrix<f64>> {
    const MAX_ITER: usize = 500;
    const REL_TOL: f64 = 1e-7;
    const HARD_ZERO: f64 = 1e-8;
    if !(lambda >= 0.0) {
        return Err(Error::Invalid(format!("lambda = {lambda} must be >= 0")));
    }
    let s = &summary.s;
    let s_fit = &summary.s_fit;
    let p = s.nrows();
    let s_half = linalg::sqrt_spd(s)?;
    let s_inv_half = linalg::inv_sqrt_spd(s)?;

    // Unpenalized solution, already feasible for alpha' S alpha = I.
    let kernel = linalg::symmetrize(&(&s_inv_half * s_fit * &s_inv_half));
    let (kernel_eigs, kernel_vecs) = linalg::sym_eigen_desc(&kernel);
    let alpha0 = &s_inv_half * kernel_vecs.columns(0, d).into_owned();
    if lambda == 0.0 {
        return Ok(alpha0);
    }
    let obj0 = penalized_objective(&alpha0, s_fit, lambda);

    // Step size from the whitened smooth term's curvature.
    let step = 1.0 / (2.0 * kernel_eigs[0].max(1e-12) + 1.0);

    let s_orthonormalize = |a: &DMatrix<f64>| -> Option<DMatrix<f64>> {
        let t = linalg::symmetrize(&(a.transpose() * s * a));
        let (vals, _) = linalg::sym_eigen_desc(&t);
        if !(vals[d - 1] > 1e-12 * vals[0].max(1e-300)) {
            return None;
        }
        let t_inv_half = linalg::inv_sqrt_spd(&t).ok()?;
        Some(a * t_inv_half)
    };

    let mut alpha = alpha0.clone();
    let mut obj = obj0;
    for _ in 0..MAX_ITER {
        // (a) ascent step on tr(beta' K beta) in whitened coordinates.
        let beta = &s_half * &alpha;
        let beta_new = &beta + 2.0 * step * &kernel * &beta;
        let mut cand = &s_inv_half * beta_new;
        // (b) row-wise group soft threshold in the original coordinates.
        for i in 0..p {
            let norm = cand.row(i).norm();
            let scale = if norm > step * lambda {
                1.0 - step * lambda / norm
            } else {
                0.0
            };
            if scale < 1.0 {
                let scaled = cand.row(i) * scale;
                cand.row_mut(i).copy_from(&scaled);
            }
        }
        // (c) restore feasibility.
        let restored = match s_orthonormalize(&cand) {
            Some(r) => r,
            None => return Err(Error::AllRowsKilled { lambda }),
        };
        let new_obj = penalized_objective(&restored, s_fit, lambda);
        let done = (new_obj - obj).abs() < REL_TOL * obj.abs().max(1e-12);
        alpha = restored;
        obj = new_obj;
        if done {
            break;
        }
    }

    // Freeze the zero pattern exactly, then restore feasibility once more.
    let norms: Vec<f64> = (0..p).map(|i| alpha.row(i).norm()).collect();
    if norms.iter().all(|&v| v < HARD_ZERO) {
        return Err(Error::AllRowsKilled { lambda });
    }
    for i in 0..p {
        if norms[i] < HARD_ZERO {
            alpha.row_mut(i).fill(0.0);
        }
    }
    let alpha = s_orthonormalize(&alpha).ok_or(Error::AllRowsKilled { lambda })?;

    // Certificate: never return a point worse than the unpenalized start.
    if penalized_objective(&alpha, s_fit, lambda) > obj0 + 1e-10 * obj0.abs() {
        return Ok(alpha0);
    }
    Ok(alpha)
}

/// Criterion used to pick the penalty weight.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    Bic,
    Cv { folds: usize },
}

/// Model complexity for the information criteria: `r d + d (p_eff - d) +
/// p_eff (p_eff + 3) / 2 + n_thresholds`.
pub fn h_theta(r: usize, d: usize, p_eff: usize, n_thresholds: usize) -> f64 {
    (r * d + d * (p_eff.saturating_sub(d)) + p_eff * (p_eff + 3) / 2 + n_thresholds) as f64
}

fn criterion_value(
    data: &OrdinalDataset,
    spec: &BasisSpec,
    d: usize,
    criterion: Criterion,
    fit: &FittedModel,
    opts: &FitOptions,
    lambda: f64,
) -> Result<f64> {
    let n_theta: usize = data.g().iter().map(|&g| g - 1).sum();
    let p_eff = active_rows(&fit.params.alpha).len();
    let r = spec.r();
    match criterion {
        Criterion::Aic | Criterion::Bic => {
            let q = *fit
                .q_trace
                .last()
                .ok_or_else(|| Error::Numerical("empty q trace".into()))?;
            let c = match criterion {
                Criterion::Aic => 2.0,
                Criterion::Bic => (data.n() as f64).ln(),
                _ => unreachable!(),
            };
            // Literal source convention; see dimension::ic_select.
            Ok(2.0 * q + c * h_theta(r, d, p_eff, n_theta))
        }
        Criterion::Cv { folds } => {
            cv_prediction_error(data, spec, d, folds, opts, Some(lambda))
        }
    }
}

/// Out-of-fold k-NN prediction error of the reduction fit with the given
/// options (MSE for continuous responses, misclassification otherwise).
pub fn cv_prediction_error(
    data: &OrdinalDataset,
    spec: &BasisSpec,
    d: usize,
    folds: usize,
    opts: &FitOptions,
    lambda: Option<f64>,
) -> Result<f64> {
    let errors = cv_fold_errors(data, spec, d, folds, opts, lambda)?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Per-fold out-of-sample errors; fold assignment is seed-deterministic and
/// invariant to fold relabeling.
pub fn cv_fold_errors(
    data: &OrdinalDataset,
    spec: &BasisSpec,
    d: usize,
    folds: usize,
    opts: &FitOptions,
    lambda: Option<f64>,
) -> Result<Vec<f64>> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    if folds < 2 {
        return Err(Error::Invalid("need at least 2 folds".into()));
    }
    let n = data.n();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(crate::numeric::derive_seed(
        opts.seed, 0x6376, 0,
    ));
    order.shuffle(&mut rng);
    let assignment: Vec<usize> = {
        let mut a = vec![0usize; n];
        for (rank, &i) in order.iter().enumerate() {
            a[i] = rank % folds;
        }
        a
    };
    let fold_errors: Result<Vec<f64>> = (0..folds)
        .into_par_iter()
        .map(|fold| {
            let train_idx: Vec<usize> = (0..n).filter(|&i| assignment[i] != fold).collect();
            let test_idx: Vec<usize> = (0..n).filter(|&i| assignment[i] == fold).collect();
            let train = subset(data, &train_idx)?;
            let fold_opts = FitOptions {
                lambda,
                ..opts.clone()
            };
            let fit = em::fit(&train, spec, d, &fold_opts)
                .map_err(|e| e.with_context(format!("cv fold {fold}")))?;
            let train_r = reduce::reduce_dataset(&train, &fit)?;
            let test = subset(data, &test_idx)?;
            let test_r = reduce::reduce_dataset(&test, &fit)?;
            let k = predict::default_k(train_idx.len());
            match (data.y(), &train.y()) {
                (Response::Continuous(all_y), Response::Continuous(train_y)) => {
                    let pred = predict::knn_regress(&train_r.r, train_y, &test_r.r, k);
                    let mse = test_idx
                        .iter()
                        .zip(pred.iter())
                        .map(|(&i, p)| (all_y[i] - p).powi(2))
                        .sum::<f64>()
                        / test_idx.len() as f64;
                    Ok(mse)
                }
                (Response::Categorical { codes: all_c, labels }, Response::Categorical { codes: train_c, .. }) => {
                    let pred = predict::knn_classify(&train_r.r, train_c, &test_r.r, k, labels.len());
                    let err = test_idx
                        .iter()
                        .zip(pred.iter())
                        .filter(|(&i, &p)| all_c[i] != p)
                        .count() as f64
                        / test_idx.len() as f64;
                    Ok(err)
                }
                _ => unreachable!("subset preserves response kind"),
            }
        })
        .collect();
    fold_errors
}

/// Row subset of a dataset (used by cross-validation).
pub fn subset(data: &OrdinalDataset, idx: &[usize]) -> Result<OrdinalDataset> {
    let rows: Vec<Vec<u32>> = idx.iter().map(|&i| data.row(i)).collect();
    let y = match data.y() {
        Response::Continuous(v) => Response::Continuous(idx.iter().map(|&i| v[i]).collect()),
        Response::Categorical { codes, labels } => Response::Categorical {
            codes: idx.iter().map(|&i| codes[i]).collect(),
            labels: labels.clone(),
        },
    };
    OrdinalDataset::from_codes(&rows, data.g().to_vec(), y)
}

/// Fit the penalized model over a grid of penalty weights and return the fit
/// minimizing the criterion.
pub fn select_lambda(
    data: &OrdinalDataset,
    spec: &BasisSpec,
    d: usize,
    grid: &[f64],
    criterion: Criterion,
    opts: &FitOptions,
) -> Result<RegularizedFit> {
    if grid.is_empty() {
        return Err(Error::Invalid("empty lambda grid".into()));
    }
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let results: Vec<(f64, Result<(FittedModel, f64)>)> = sorted
        .par_iter()
        .map(|&lambda| {
            let fit_opts = FitOptions {
                lambda: Some(lambda),
                ..opts.clone()
            };
            let out = em::fit(data, spec, d, &fit_opts).and_then(|fit| {
                let c = criterion_value(data, spec, d, criterion, &fit, opts, lambda)?;
                Ok((fit, c))
            });
            (lambda, out)
        })
        .collect();

    let mut best: Option<(f64, FittedModel, f64)> = None;
    let mut trace = Vec::with_capacity(results.len());
    let mut first_error: Option<Error> = None;
    for (lambda, res) in results {
        match res {
            Ok((fit, c)) => {
                trace.push((lambda, c));
                let better = best.as_ref().map(|(_, _, bc)| c < *bc).unwrap_or(true);
                if better {
                    best = Some((lambda, fit, c));
                }
            }
            Err(Error::AllRowsKilled { .. })
            | Err(Error::Context { .. }) => {
                // Extinct or failed path point; keep searching.
                trace.push((lambda, f64::NAN));
            }
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e.with_context(format!("lambda {lambda}")));
                }
                trace.push((lambda, f64::NAN));
            }
        }
    }
    match best {
        Some((lambda, model, _)) => {
            let active_set = active_rows(&model.params.alpha);
            Ok(RegularizedFit {
                model,
                lambda,
                active_set,
                criterion_trace: trace,
            })
        }
        None => Err(first_error.unwrap_or(Error::AllRowsKilled {
            lambda: sorted[0],
        })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    /// Build a synthetic, internally consistent summary with a known
    /// low-rank fitted structure.
    fn synthetic_summary(seed: u64, p: usize, active: usize) -> EStepSummary {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = 400;
        let r = 2;
        let f = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let mut k = DMatrix::zeros(p, r);
        for i in 0..active {
            for j in 0..r {
                k[(i, j)] = rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        let mut m = &f * k.transpose();
        for v in m.iter_mut() {
            *v += 0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        let ftf = f.transpose() * &f;
        let ftm = f.transpose() * &m;
        let proj = ftf.clone().cholesky().unwrap().solve(&ftm);
        let s_fit = crate::linalg::symmetrize(&(ftm.transpose() * &proj / n as f64));
        let mut s = &m.transpose() * &m / n as f64 + DMatrix::identity(p, p);
        s = crate::linalg::symmetrize(&s);
        let s_res = &s - &s_fit;
        EStepSummary {
            s,
            m,
            s_fit,
            s_res,
            ftm,
            ftf,
            n,
            nonconverged: 0,
        }
    }

    #[test]
    fn lambda_zero_matches_unpenalized_span() {
        let summary = synthetic_summary(1, 8, 3);
        // Closed form evaluated directly: span(S^{-1/2} x top-2 eigenvectors
        // of the whitened fitted covariance).
        let w = crate::linalg::inv_sqrt_spd(&summary.s).unwrap();
        let kernel = crate::linalg::symmetrize(&(&w * &summary.s_fit * &w));
        let (_, vecs) = crate::linalg::sym_eigen_desc(&kernel);
        let a0 = &w * vecs.columns(0, 2).into_owned();
        let ap = fit_penalized_alpha(&summary, 2, 0.0).unwrap();
        // Same span up to right-rotation.
        let qa = crate::linalg::orthonormalize(&a0).unwrap();
        let qb = crate::linalg::orthonormalize(&ap).unwrap();
        let svd = (qa.transpose() * qb).svd(false, false);
        let angle = svd.singular_values.min().clamp(-1.0, 1.0).acos().to_degrees();
        assert!(angle < 1e-6, "angle {angle}");
    }

    #[test]
    fn extinction_above_lambda_max() {
        let summary = synthetic_summary(2, 8, 3);
        let lmax = lambda_max(&summary, 2).unwrap();
        let err = fit_penalized_alpha(&summary, 2, 50.0 * lmax).unwrap_err();
        assert!(matches!(err, Error::AllRowsKilled { .. }));
    }

    #[test]
    fn penalized_point_is_feasible_and_certified() {
        let summary = synthetic_summary(3, 10, 4);
        let lmax = lambda_max(&summary, 2).unwrap();
        let lambda = 0.2 * lmax;
        let alpha = fit_penalized_alpha(&summary, 2, lambda).unwrap();
        // Feasibility.
        let t = alpha.transpose() * &summary.s * &alpha;
        assert!((t - DMatrix::identity(2, 2)).abs().max() < 1e-8);
        // Certificate against the unpenalized start.
        let a0 = em::m_step(&summary, 2).unwrap().alpha;
        // a0 is alpha'alpha = I; evaluate both under the same objective with
        // the S-feasible unpenalized point.
        let a0s = fit_penalized_alpha(&summary, 2, 0.0).unwrap();
        let j_pen = penalized_objective(&alpha, &summary.s_fit, lambda);
        let j0 = penalized_objective(&a0s, &summary.s_fit, lambda);
        assert!(j_pen <= j0 + 1e-9 * j0.abs());
        let _ = a0;
    }

    #[test]
    fn zero_pattern_roughly_nested_along_path() {
        let summary = synthetic_summary(4, 10, 4);
        let lmax = lambda_max(&summary, 2).unwrap();
        let grid = default_grid(lmax, 12);
        let mut prev_active = usize::MAX;
        for &l in grid.iter() {
            match fit_penalized_alpha(&summary, 2, l) {
                Ok(a) => {
                    let count = active_rows(&a).len();
                    assert!(
                        count <= prev_active.saturating_add(1),
                        "active {count} after {prev_active} at lambda {l}"
                    );
                    prev_active = count;
                }
                Err(Error::AllRowsKilled { .. }) => {
                    prev_active = 0;
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
    }

    #[test]
    fn strong_penalty_zeroes_inactive_rows() {
        let summary = synthetic_summary(5, 10, 3);
        let lmax = lambda_max(&summary, 2).unwrap();
        let alpha = fit_penalized_alpha(&summary, 2, 0.35 * lmax).unwrap();
        let active = active_rows(&alpha);
        assert!(active.len() < 10, "no row was zeroed");
        // Zeroed rows are exactly zero.
        for i in 0..10 {
            if !active.contains(&i) {
                assert_eq!(alpha.row(i).norm(), 0.0);
            }
        }
    }
}
