//! The iterative estimator: threshold search, E-step moment assembly,
//! closed-form M-step, Q evaluation, and the fit driver.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    build_basis, slice_assignments, BasisMatrix, BasisSpec, FittedModel, Mixture, MixtureSlice,
    ModelParams, OrdinalDataset, Response, ResponseKind, ThresholdSet,
};
use crate::normal;
use crate::numeric::{brent_root, derive_seed};
use crate::pfc;
use crate::tmvn::{Backend, ConditionalSolver, Rectangle};

/// Conditional-moment summaries assembled by the E-step.
#[derive(Debug, Clone)]
pub struct EStepSummary {
    /// `(1/n) sum_i E(z_i z_i' | x_i, y_i)`.
    pub s: DMatrix<f64>,
    /// Rows `E(z_i | x_i, y_i)'`.
    pub m: DMatrix<f64>,
    /// `n^{-1} M'F (F'F)^{-1} F'M`.
    pub s_fit: DMatrix<f64>,
    /// `S - S_fit`.
    pub s_res: DMatrix<f64>,
    /// `F'M` (r x p).
    pub ftm: DMatrix<f64>,
    /// `F'F` (r x r).
    pub ftf: DMatrix<f64>,
    pub n: usize,
    /// Observations whose moment recursion hit the sweep limit.
    pub nonconverged: usize,
}

/// Solve the threshold search equations: for each predictor j and level g,
/// the root of `#{i: x_ij <= g} - sum_i Phi((theta - (Psi fbar_i)_j)/sd_j)`.
pub fn estimate_thresholds(
    data: &OrdinalDataset,
    params: &ModelParams,
    f: &BasisMatrix,
) -> Result<ThresholdSet> {
    let n = data.n();
    let p = data.p();
    let means = f.matrix() * params.psi().transpose(); // n x p
    let mut cuts = Vec::with_capacity(p);
    for j in 0..p {
        let gj = data.g()[j];
        let sd = params.delta[(j, j)].sqrt();
        let col = data.column(j);
        // Cumulative counts over levels.
        let mut counts = vec![0usize; gj];
        for &c in col {
            counts[c as usize - 1] += 1;
        }
        let mcol: Vec<f64> = (0..n).map(|i| means[(i, j)]).collect();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &m in &mcol {
            lo = lo.min(m);
            hi = hi.max(m);
        }
        let (lo, hi) = (lo - 20.0 * sd, hi + 20.0 * sd);
        let mut cj = Vec::with_capacity(gj - 1);
        let mut cum = 0usize;
        for g in 0..gj - 1 {
            cum += counts[g];
            if cum == 0 || cum == n {
                return Err(Error::LevelNotObserved {
                    predictor: j,
                    level: g + 1,
                });
            }
            let target = cum as f64;
            let objective = |theta: f64| {
                let mut acc = 0.0;
                for &m in &mcol {
                    acc += normal::cdf((theta - m) / sd);
                }
                target - acc
            };
            // L is strictly decreasing; the widened bracket always straddles
            // the root.
            let root = brent_root(objective, lo, hi, 1e-12, 200);
            if let Some(&prev) = cj.last() {
                if !(root > prev) {
                    return Err(Error::Numerical(format!(
                        "threshold roots not increasing for predictor {j}: {prev} then {root}"
                    )));
                }
            }
            cj.push(root);
        }
        cuts.push(cj);
    }
    ThresholdSet::new(cuts)
}

/// Deterministic pairwise tree sum; the reduction order is fixed by the
/// element order, not by scheduling.
fn tree_sum(items: &mut Vec<DMatrix<f64>>) -> DMatrix<f64> {
    assert!(!items.is_empty());
    while items.len() > 1 {
        let half = items.len().div_ceil(2);
        for k in 0..items.len() / 2 {
            let hi = std::mem::replace(&mut items[half + k], DMatrix::zeros(0, 0));
            items[k] += hi;
        }
        items.truncate(half);
    }
    items.pop().unwrap()
}

/// One E-step: per-observation conditional moments mapped in parallel and
/// combined in a fixed order, so results are identical for any worker count.
pub fn e_step(
    data: &OrdinalDataset,
    params: &ModelParams,
    thresholds: &ThresholdSet,
    f: &BasisMatrix,
    backend: Backend,
    seed: u64,
) -> Result<EStepSummary> {
    let n = data.n();
    let p = data.p();
    let means = f.matrix() * params.psi().transpose(); // n x p rows = Psi fbar_i
    const OBS_TAG: u64 = 0x4d4f4d; // per-observation seed stream

    let per_obs: Result<Vec<(DVector<f64>, DMatrix<f64>, bool)>> = match backend {
        Backend::Approximate => {
            let solver = ConditionalSolver::new(&params.delta)?;
            (0..n)
                .into_par_iter()
                .map(|i| {
                    let x = data.row(i);
                    let rect = Rectangle::from_cell(&x, thresholds);
                    let mean = means.row(i).transpose();
                    let mom = solver
                        .moments(&rect, &mean)
                        .map_err(|e| e.with_context(format!("observation {i}")))?;
                    Ok((mom.m.clone(), mom.second_moment_matrix(), mom.converged))
                })
                .collect()
        }
        Backend::Exact { points } => (0..n)
            .into_par_iter()
            .map(|i| {
                let x = data.row(i);
                let rect = Rectangle::from_cell(&x, thresholds);
                let mean = means.row(i).transpose();
                let mom = crate::tmvn::exact_moments_for_rect(
                    &mean,
                    &params.delta,
                    &rect,
                    points,
                    derive_seed(seed, OBS_TAG, i as u64),
                )
                .map_err(|e| e.with_context(format!("observation {i}")))?;
                Ok((mom.m.clone(), mom.second_moment_matrix(), mom.converged))
            })
            .collect(),
    };
    let per_obs = per_obs?;

    let mut m = DMatrix::zeros(n, p);
    let mut mats = Vec::with_capacity(n);
    let mut nonconverged = 0usize;
    for (i, (mi, smat, conv)) in per_obs.into_iter().enumerate() {
        m.row_mut(i).copy_from(&mi.transpose());
        mats.push(smat);
        if !conv {
            nonconverged += 1;
        }
    }
    let s = linalg::symmetrize(&(tree_sum(&mut mats) / n as f64));

    let fm = f.matrix();
    let ftf = fm.transpose() * fm;
    let ftm = fm.transpose() * &m;
    let chol = ftf
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateBasis("F'F is not positive definite".into()))?;
    let proj = chol.solve(&ftm); // (F'F)^{-1} F'M, r x p
    let s_fit = linalg::symmetrize(&(ftm.transpose() * proj / n as f64));
    let s_res = &s - &s_fit;
    Ok(EStepSummary {
        s,
        m,
        s_fit,
        s_res,
        ftm,
        ftf,
        n,
        nonconverged,
    })
}

/// How the M-step computes alpha.
#[derive(Debug, Clone, Copy)]
pub enum AlphaSolver {
    /// Closed form: top-d eigenvectors of the whitened fitted covariance.
    Eigen,
    /// Group-lasso penalized update with the given penalty weight.
    Penalized { lambda: f64 },
}

/// Closed-form M-step given E-step summaries.
pub fn m_step(summary: &EStepSummary, d: usize) -> Result<ModelParams> {
    m_step_with(summary, d, AlphaSolver::Eigen)
}

pub fn m_step_with(summary: &EStepSummary, d: usize, solver: AlphaSolver) -> Result<ModelParams> {
    let p = summary.s.nrows();
    let r = summary.ftf.nrows();
    if d > r.min(p) {
        return Err(Error::Invalid(format!("d = {d} exceeds min(r, p) = {}", r.min(p))));
    }

    let alpha_raw = if d == 0 {
        DMatrix::zeros(p, 0)
    } else {
        match solver {
            AlphaSolver::Eigen => {
                let w = linalg::inv_sqrt_spd(&summary.s)?;
                let kernel = &w * &summary.s_fit * &w;
                let (_, vecs) = linalg::sym_eigen_desc(&kernel);
                let v = vecs.columns(0, d).into_owned();
                linalg::orthonormalize(&(&w * v))?
            }
            AlphaSolver::Penalized { lambda } => {
                let sparse = crate::regularize::fit_penalized_alpha(summary, d, lambda)?;
                linalg::orthonormalize(&sparse)?
            }
        }
    };

    // Delta^{-1} = S^{-1} + alpha (alpha'S_res alpha)^{-1} alpha'
    //            - alpha (alpha'S alpha)^{-1} alpha'.
    let s_inv = linalg::inv_spd(&summary.s)?;
    let delta_inv = if d == 0 {
        s_inv
    } else {
        let mut asa_res = linalg::symmetrize(&(alpha_raw.transpose() * &summary.s_res * &alpha_raw));
        let cond = linalg::sym_cond(&asa_res);
        if !cond.is_finite() || cond > 1e12 {
            let tr = asa_res.trace();
            if !(tr > 0.0) {
                return Err(Error::NearSingularResidual { cond });
            }
            let eps = 1e-12 * tr / d as f64;
            for k in 0..d {
                asa_res[(k, k)] += eps;
            }
        }
        let asa = linalg::symmetrize(&(alpha_raw.transpose() * &summary.s * &alpha_raw));
        let inv_res = linalg::inv_spd(&asa_res)?;
        let inv_asa = linalg::inv_spd(&asa)?;
        s_inv + &alpha_raw * (inv_res - inv_asa) * alpha_raw.transpose()
    };
    let delta_raw = linalg::inv_spd(&linalg::symmetrize(&delta_inv))?;

    // Rescale to unit diagonal and carry the scale change into alpha so the
    // reduction subspace Delta^{-1} span(Gamma) is preserved.
    let dvec = delta_raw.diagonal();
    let d_inv_half = DMatrix::from_diagonal(&dvec.map(|v| 1.0 / v.sqrt()));
    let d_half = DMatrix::from_diagonal(&dvec.map(|v| v.sqrt()));
    let mut delta = linalg::symmetrize(&(&d_inv_half * delta_raw * &d_inv_half));
    for j in 0..p {
        delta[(j, j)] = 1.0;
    }
    let alpha = if d == 0 {
        alpha_raw
    } else {
        linalg::orthonormalize(&(&d_half * &alpha_raw))?
    };

    // xi = (alpha' Delta alpha)^{-1} alpha' M'F (F'F)^{-1}.
    let xi = if d == 0 {
        DMatrix::zeros(0, r)
    } else {
        let ada = linalg::symmetrize(&(alpha.transpose() * &delta * &alpha));
        let mtf = summary.ftm.transpose(); // p x r
        let ftf_chol = summary
            .ftf
            .clone()
            .cholesky()
            .ok_or_else(|| Error::DegenerateBasis("F'F is not positive definite".into()))?;
        let rhs = ftf_chol.solve(&(alpha.transpose() * mtf).transpose()); // r x d
        linalg::inv_spd(&ada)? * rhs.transpose()
    };

    ModelParams::new(delta, alpha, xi)
}

/// The expected complete-data log-likelihood at `params` given the E-step
/// summaries.
pub fn q_value(summary: &EStepSummary, params: &ModelParams) -> Result<f64> {
    let n = summary.n as f64;
    let p = params.p() as f64;
    let delta_inv = linalg::inv_spd(&params.delta)?;
    let ln_det = linalg::ln_det_spd(&params.delta)?;
    let tr_s = (&delta_inv * &summary.s).trace();
    let axi = &params.alpha * &params.xi; // p x r
    let tr_cross = (&axi * &summary.ftm).trace();
    let tr_quad = (&axi * &summary.ftf * axi.transpose() * &params.delta).trace();
    Ok(-0.5 * p * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * n * ln_det
        - 0.5 * n * tr_s
        + tr_cross
        - 0.5 * tr_quad)
}

/// Partially maximized Q as a function of a semi-orthogonal `alpha` alone
/// (xi and Delta profiled out).
pub fn q_partial(s: &DMatrix<f64>, s_res: &DMatrix<f64>, alpha: &DMatrix<f64>, n: usize) -> Result<f64> {
    let p = s.nrows() as f64;
    let nf = n as f64;
    let const_term = -0.5 * p * nf * ((2.0 * std::f64::consts::PI).ln() + 1.0);
    let a_res = linalg::symmetrize(&(alpha.transpose() * s_res * alpha));
    let a_s = linalg::symmetrize(&(alpha.transpose() * s * alpha));
    Ok(const_term - 0.5 * nf * linalg::ln_det_spd(&a_res)? - 0.5 * nf * linalg::ln_det_spd(s)?
        + 0.5 * nf * linalg::ln_det_spd(&a_s)?)
}

/// Options of the fit driver.
#[derive(Debug, Clone)]
pub struct FitOptions {
    pub backend: Backend,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Group-lasso penalty on the rows of alpha; None = unpenalized.
    pub lambda: Option<f64>,
    /// Slice count for the reduction mixture on a continuous response.
    pub mixture_slices: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            backend: Backend::Approximate,
            tol: 1e-6,
            max_iter: 200,
            seed: 0,
            lambda: None,
            mixture_slices: 10,
        }
    }
}

/// Merge levels that never occur into their nearest observed neighbor.
/// Returns the recoded dataset and the per-predictor code maps.
fn merge_unobserved(data: &OrdinalDataset) -> (OrdinalDataset, Vec<Vec<u32>>, bool) {
    let observed = data.observed_levels();
    let mut any = false;
    let mut maps: Vec<Vec<u32>> = Vec::with_capacity(data.p());
    for seen in &observed {
        let gj = seen.len();
        let obs_levels: Vec<usize> = (0..gj).filter(|&g| seen[g]).collect();
        let mut map = vec![0u32; gj];
        if obs_levels.len() == gj {
            for (g, slot) in map.iter_mut().enumerate() {
                *slot = g as u32 + 1;
            }
        } else {
            any = true;
            // Rank of the nearest observed level, ties toward the lower one.
            for (g, slot) in map.iter_mut().enumerate() {
                let nearest = obs_levels
                    .iter()
                    .enumerate()
                    .min_by_key(|(_, &lvl)| {
                        let dist = lvl.abs_diff(g);
                        (dist, lvl)
                    })
                    .map(|(rank, _)| rank)
                    .unwrap();
                *slot = nearest as u32 + 1;
            }
        }
        maps.push(map);
    }
    if any {
        (data.recode(&maps), maps, true)
    } else {
        (data.clone(), maps, false)
    }
}

/// Fit the model by alternating threshold estimation and the EM update until
/// the relative change in Q falls below tolerance.
pub fn fit(
    data: &OrdinalDataset,
    spec: &BasisSpec,
    d: usize,
    opts: &FitOptions,
) -> Result<FittedModel> {
    let (data, merges, _merged) = merge_unobserved(data);
    let f = build_basis(data.y(), spec)?;
    let r = f.r();
    let p = data.p();
    if d > r.min(p) {
        return Err(Error::Invalid(format!("d = {d} exceeds min(r, p) = {}", r.min(p))));
    }

    // Step 0: initialize from PFC applied naively to the centered codes.
    let codes = data.codes_as_real();
    let pfc_fit = pfc::fit_pfc(&codes, &f, d).map_err(|e| e.with_context("initialization"))?;
    let corr = {
        let dg = pfc_fit.sigma.diagonal();
        let dih = DMatrix::from_diagonal(&dg.map(|v| 1.0 / v.sqrt()));
        let mut c = linalg::symmetrize(&(&dih * &pfc_fit.sigma * &dih));
        for j in 0..p {
            c[(j, j)] = 1.0;
        }
        c
    };
    let xi0 = if d == 0 {
        DMatrix::zeros(0, r)
    } else {
        let ada = linalg::symmetrize(&(pfc_fit.alpha.transpose() * &corr * &pfc_fit.alpha));
        linalg::inv_spd(&ada)? * pfc_fit.alpha.transpose() * &pfc_fit.coefficients
    };
    let mut params = ModelParams::new(corr, pfc_fit.alpha.clone(), xi0)
        .map_err(|e| e.with_context("initialization"))?;

    let solver = match opts.lambda {
        Some(lambda) => AlphaSolver::Penalized { lambda },
        None => AlphaSolver::Eigen,
    };

    let mut q_trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut last_summary: Option<EStepSummary> = None;
    for k in 1..=opts.max_iter {
        iterations = k;
        let ctx = |e: Error| e.with_context(format!("iteration {k}"));
        let thresholds = estimate_thresholds(&data, &params, &f).map_err(ctx)?;
        let summary = e_step(&data, &params, &thresholds, &f, opts.backend, opts.seed).map_err(ctx)?;
        params = m_step_with(&summary, d, solver).map_err(ctx)?;
        let q = q_value(&summary, &params).map_err(ctx)?;
        last_summary = Some(summary);
        if let Some(&prev) = q_trace.last() {
            if (q - prev).abs() < opts.tol * prev.abs() {
                q_trace.push(q);
                converged = true;
                break;
            }
        }
        q_trace.push(q);
    }
    let summary = last_summary.expect("at least one iteration");
    let thresholds = estimate_thresholds(&data, &params, &f)?;

    // Mixture slices for the Bayes-weight reduction.
    let h = match data.y() {
        Response::Categorical { labels, .. } => labels.len(),
        Response::Continuous(_) => opts.mixture_slices.min(data.n()),
    };
    let (assign, labels) = slice_assignments(data.y(), h)?;
    let mut slices = Vec::with_capacity(h);
    for s in 0..h {
        let members: Vec<usize> = (0..data.n()).filter(|&i| assign[i] == s).collect();
        let mut fbar = DVector::zeros(r);
        for &i in &members {
            fbar += f.row(i);
        }
        fbar /= members.len() as f64;
        slices.push(MixtureSlice {
            fbar,
            prior: members.len() as f64 / data.n() as f64,
            label: labels[s].clone(),
        });
    }

    let model = FittedModel {
        params,
        thresholds,
        basis: *spec,
        q_trace,
        converged,
        iterations,
        backend: opts.backend,
        seed: opts.seed,
        n: data.n(),
        s: summary.s.clone(),
        s_fit: summary.s_fit.clone(),
        merges,
        mixture: Mixture { slices },
        response_kind: if data.y().is_categorical() {
            ResponseKind::Categorical
        } else {
            ResponseKind::Continuous
        },
        names: data.names().to_vec(),
        labels: data.labels().to_vec(),
    };
    model.validate()?;
    Ok(model)
}
