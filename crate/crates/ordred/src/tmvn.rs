//! Truncated (multivariate) normal moments and rectangle probabilities.
//!
//! Three entry points back the E-step and the reduction:
//!
//! - [`trunc_moments_1d`]: closed-form first/second moments of a univariate
//!   truncated normal;
//! - [`approx_conditional_moments`]: the per-coordinate Gauss-Seidel
//!   recursion with delta-method plug-ins and cross-moment factorization;
//! - [`exact_conditional_moments`] / [`rect_prob`]: quasi Monte Carlo with
//!   the sequential conditional-sampling (separation of variables)
//!   transform, plus a plain rejection sampler kept for low-dimensional
//!   oracles.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::model::{ModelParams, ThresholdSet};
use crate::normal;
use crate::numeric::{derive_seed, halton, log_sum_exp};

/// Shared cache of Halton point blocks, keyed by (points, dims). The same
/// base block is reused by every observation and iteration; randomization
/// comes from per-batch shifts.
fn halton_block(points: usize, dims: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("halton cache poisoned");
    guard
        .entry((points, dims))
        .or_insert_with(|| {
            let mut block = vec![0.0; points * dims];
            let mut buf = vec![0.0; dims];
            for i in 0..points {
                halton(i as u64, &mut buf);
                block[i * dims..(i + 1) * dims].copy_from_slice(&buf);
            }
            Arc::new(block)
        })
        .clone()
}

/// Which E-step moment computation to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Backend {
    Approximate,
    Exact { points: usize },
}

impl Default for Backend {
    fn default() -> Self {
        Backend::Approximate
    }
}

impl Backend {
    pub fn exact_default() -> Self {
        Backend::Exact { points: 1 << 13 }
    }
}

/// Axis-aligned cell with extended-real bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Rectangle {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl Rectangle {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::Invalid("rectangle bound lengths differ".into()));
        }
        for j in 0..lower.len() {
            if !(lower[j] < upper[j]) {
                return Err(Error::Invalid(format!(
                    "rectangle bound {j}: lower {} !< upper {}",
                    lower[j], upper[j]
                )));
            }
            if lower[j].is_nan() || upper[j].is_nan() {
                return Err(Error::Invalid(format!("rectangle bound {j} is NaN")));
            }
        }
        Ok(Rectangle { lower, upper })
    }

    /// The latent cell `C(x, Theta)` of an observed code vector.
    pub fn from_cell(x: &[u32], thresholds: &ThresholdSet) -> Self {
        let p = x.len();
        let mut lower = DVector::zeros(p);
        let mut upper = DVector::zeros(p);
        for j in 0..p {
            let (lo, hi) = thresholds.bounds(j, x[j]);
            lower[j] = lo;
            upper[j] = hi;
        }
        Rectangle { lower, upper }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, z: &DVector<f64>) -> bool {
        (0..self.dim()).all(|j| self.lower[j] <= z[j] && z[j] < self.upper[j])
    }
}

/// How a [`ConditionalMoments`] value was computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentMethod {
    Approximate,
    ExactQmc,
    ExactRejection,
}

/// First and second conditional moments of the latent vector on one cell.
#[derive(Debug, Clone)]
pub struct ConditionalMoments {
    /// `E(z_j | x, y)`.
    pub m: DVector<f64>,
    /// `E(z_j^2 | x, y)`.
    pub s2: DVector<f64>,
    pub method: MomentMethod,
    /// Full second-moment matrix for sampling backends; the approximate
    /// backend factorizes cross moments instead.
    pub cross: Option<DMatrix<f64>>,
    /// Per-coordinate standard errors of `m` (sampling backends).
    pub std_err: Option<DVector<f64>>,
    /// False when the recursion hit its sweep limit before converging.
    pub converged: bool,
}

impl ConditionalMoments {
    /// `E(z z^T | x, y)`: the sampled matrix when available, otherwise the
    /// product factorization with exact diagonal.
    pub fn second_moment_matrix(&self) -> DMatrix<f64> {
        if let Some(c) = &self.cross {
            return c.clone();
        }
        let p = self.m.len();
        let mut out = &self.m * self.m.transpose();
        for j in 0..p {
            out[(j, j)] = self.s2[j];
        }
        out
    }
}

/// Mean and second moment of `N(mu, sd^2)` truncated to `[a, b)`.
pub fn trunc_moments_1d(mu: f64, sd: f64, a: f64, b: f64) -> Result<(f64, f64)> {
    if !(sd > 0.0) {
        return Err(Error::Invalid(format!("trunc_moments_1d: sd = {sd} must be > 0")));
    }
    if !(a < b) {
        return Err(Error::Invalid(format!("trunc_moments_1d: need a < b, got [{a}, {b}]")));
    }
    let a_std = (a - mu) / sd;
    let b_std = (b - mu) / sd;
    let (ac, bc) = normal::trunc_std_coeffs(a_std, b_std)
        .ok_or(Error::EmptyCell { lower: a, upper: b })?;
    let mean = mu + sd * ac;
    let second = mu * mu + sd * sd + 2.0 * ac * mu * sd + bc * sd * sd;
    // Guard roundoff at extreme cells: the mean lies in the cell and the
    // second moment dominates the squared mean.
    let mean = mean.clamp(a, b);
    let second = second.max(mean * mean);
    Ok((mean, second))
}

/// Precomputed conditional-regression quantities of a fixed covariance:
/// for each coordinate, the regression weights on the others and the
/// conditional standard deviation.
pub struct ConditionalSolver {
    /// Row j holds `Delta_{j,-j} (Delta_{-j,-j})^{-1}` scattered into a
    /// length-p vector with 0 at position j.
    weights: DMatrix<f64>,
    cond_sd: DVector<f64>,
    p: usize,
}

impl ConditionalSolver {
    pub fn new(delta: &DMatrix<f64>) -> Result<Self> {
        let p = delta.nrows();
        let precision = crate::linalg::inv_spd(delta)?;
        let mut weights = DMatrix::zeros(p, p);
        let mut cond_sd = DVector::zeros(p);
        for j in 0..p {
            let kjj = precision[(j, j)];
            if !(kjj > 0.0) {
                return Err(Error::Numerical("non-positive conditional precision".into()));
            }
            for k in 0..p {
                if k != j {
                    weights[(j, k)] = -precision[(j, k)] / kjj;
                }
            }
            cond_sd[j] = (1.0 / kjj).sqrt();
        }
        Ok(ConditionalSolver { weights, cond_sd, p })
    }

    /// Gauss-Seidel sweeps of the per-coordinate truncated-moment recursion,
    /// starting from clamped cell midpoints. `mean` is the unconditional
    /// mean vector (`Psi fbar_y`).
    pub fn moments(&self, rect: &Rectangle, mean: &DVector<f64>) -> Result<ConditionalMoments> {
        const MAX_SWEEPS: usize = 50;
        const TOL: f64 = 1e-6;
        let p = self.p;
        debug_assert_eq!(rect.dim(), p);

        let mut m = DVector::zeros(p);
        let mut s2 = DVector::zeros(p);
        for j in 0..p {
            let (lo, hi) = (rect.lower[j], rect.upper[j]);
            m[j] = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (false, true) => hi - 1.0,
                (true, false) => lo + 1.0,
                (false, false) => mean[j],
            };
            s2[j] = m[j] * m[j];
        }

        let mut converged = false;
        for _ in 0..MAX_SWEEPS {
            let mut max_change = 0.0_f64;
            for j in 0..p {
                // Conditional mean at the current plug-in point.
                let mut c = mean[j];
                let mut extra = 0.0;
                for k in 0..p {
                    let w = self.weights[(j, k)];
                    if w != 0.0 {
                        c += w * (m[k] - mean[k]);
                        extra += w * w * (s2[k] - m[k] * m[k]).max(0.0);
                    }
                }
                let (mj, s2_base) = trunc_moments_1d(c, self.cond_sd[j], rect.lower[j], rect.upper[j])?;
                max_change = max_change.max((mj - m[j]).abs());
                m[j] = mj;
                s2[j] = s2_base + extra;
            }
            if max_change < TOL {
                converged = true;
                break;
            }
        }
        Ok(ConditionalMoments {
            m,
            s2,
            method: MomentMethod::Approximate,
            cross: None,
            std_err: None,
            converged,
        })
    }
}

/// Approximate conditional moments of the latent vector given the observed
/// codes and the response basis value.
pub fn approx_conditional_moments(
    x: &[u32],
    fbar_y: &DVector<f64>,
    params: &ModelParams,
    thresholds: &ThresholdSet,
) -> Result<ConditionalMoments> {
    let solver = ConditionalSolver::new(&params.delta)?;
    let mean = params.psi() * fbar_y;
    let rect = Rectangle::from_cell(x, thresholds);
    solver.moments(&rect, &mean)
}

/// Pooled output of the separation-of-variables QMC accumulation.
struct SovResult {
    ln_prob: f64,
    prob: f64,
    prob_se: f64,
    /// Weighted mean of z per batch (flattened), for moment pooling.
    m: DVector<f64>,
    m_se: DVector<f64>,
    cross: DMatrix<f64>,
}

const SOV_BATCHES: usize = 8;

/// Core QMC accumulator: randomized Halton batches pushed through the
/// sequential conditional-sampling transform. Weights are handled in the
/// log domain.
fn sov_run(
    mean: &DVector<f64>,
    chol_l: &DMatrix<f64>,
    rect: &Rectangle,
    points: usize,
    seed: u64,
    want_moments: bool,
) -> SovResult {
    let p = mean.len();
    let per_batch = (points / SOV_BATCHES).max(1);
    let mut batch_ln_prob = Vec::with_capacity(SOV_BATCHES);
    let mut batch_mean: Vec<DVector<f64>> = Vec::with_capacity(SOV_BATCHES);
    let mut total_w = 0.0;
    let mut total_wz = DVector::zeros(p);
    let mut total_wzz = DMatrix::zeros(p, p);

    let block = halton_block(per_batch * SOV_BATCHES, p);
    let mut w = DVector::zeros(p);
    let mut z = DVector::zeros(p);

    for b in 0..SOV_BATCHES {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x534f56, b as u64));
        let shift: Vec<f64> = (0..p).map(|_| rng.gen::<f64>()).collect();
        let mut ln_ws = Vec::with_capacity(per_batch);
        let mut b_wz = DVector::zeros(p);
        let mut b_w_lin = 0.0_f64;
        let b_shift_ref: f64 = -(p as f64); // reference log scale for linear accumulation
        for i in 0..per_batch {
            let u = &block[(b * per_batch + i) * p..(b * per_batch + i + 1) * p];
            let mut ln_w = 0.0;
            for k in 0..p {
                let uk = {
                    let v = u[k] + shift[k];
                    let v = v - v.floor();
                    v.clamp(1e-15, 1.0 - 1e-15)
                };
                let mut cond = mean[k];
                for t in 0..k {
                    cond += chol_l[(k, t)] * w[t];
                }
                let l_kk = chol_l[(k, k)];
                let lo = (rect.lower[k] - cond) / l_kk;
                let hi = (rect.upper[k] - cond) / l_kk;
                let c_lo = if lo == f64::NEG_INFINITY { 0.0 } else { normal::cdf(lo) };
                let c_hi = if hi == f64::INFINITY { 1.0 } else { normal::cdf(hi) };
                let width = c_hi - c_lo;
                if width > 1e-300 {
                    ln_w += width.ln();
                    let t = c_lo + uk * width;
                    w[k] = normal::inv_cdf(t.clamp(1e-300, 1.0 - 1e-16));
                } else {
                    ln_w += normal::ln_cdf_interval(lo.min(hi - 1e-12), hi);
                    // Degenerate slab: pin to the nearest representable bound.
                    w[k] = if lo.is_finite() { lo } else { hi };
                }
                // Keep the sample strictly inside the slab.
                w[k] = w[k].clamp(
                    if lo.is_finite() { lo } else { -1e10 },
                    if hi.is_finite() { hi } else { 1e10 },
                );
            }
            ln_ws.push(ln_w);
            let w_lin = (ln_w - b_shift_ref).exp();
            if want_moments && w_lin > 0.0 {
                for k in 0..p {
                    let mut zk = mean[k];
                    for t in 0..=k {
                        zk += chol_l[(k, t)] * w[t];
                    }
                    z[k] = zk;
                }
                b_wz.axpy(w_lin, &z, 1.0);
                total_wz.axpy(w_lin, &z, 1.0);
                total_wzz.ger(w_lin, &z, &z, 1.0);
                b_w_lin += w_lin;
                total_w += w_lin;
            } else if !want_moments {
                b_w_lin += w_lin;
                total_w += w_lin;
            }
        }
        let lp = log_sum_exp(&ln_ws) - (per_batch as f64).ln();
        batch_ln_prob.push(lp);
        if b_w_lin > 0.0 {
            batch_mean.push(b_wz / b_w_lin);
        }
    }

    let ln_prob = log_sum_exp(&batch_ln_prob) - (SOV_BATCHES as f64).ln();
    let prob = ln_prob.exp();
    let probs: Vec<f64> = batch_ln_prob.iter().map(|l| l.exp()).collect();
    let pb_mean = probs.iter().sum::<f64>() / SOV_BATCHES as f64;
    let pb_var = probs.iter().map(|q| (q - pb_mean).powi(2)).sum::<f64>()
        / (SOV_BATCHES as f64 - 1.0);
    let prob_se = (pb_var / SOV_BATCHES as f64).sqrt();

    let (m, m_se, cross) = if want_moments && total_w > 0.0 {
        let m = &total_wz / total_w;
        let mut cross = &total_wzz / total_w;
        cross = crate::linalg::symmetrize(&cross);
        let se = if batch_mean.len() > 1 {
            let k = batch_mean.len() as f64;
            let mut avg = DVector::zeros(p);
            for bm in &batch_mean {
                avg += bm;
            }
            avg /= k;
            let mut var = DVector::zeros(p);
            for bm in &batch_mean {
                for j in 0..p {
                    var[j] += (bm[j] - avg[j]).powi(2);
                }
            }
            var.map(|v: f64| (v / (k - 1.0) / k).sqrt())
        } else {
            DVector::zeros(p)
        };
        (m, se, cross)
    } else {
        (DVector::zeros(p), DVector::zeros(p), DMatrix::zeros(p, p))
    };

    SovResult {
        ln_prob,
        prob,
        prob_se,
        m,
        m_se,
        cross,
    }
}

/// Exact-backend conditional moments via QMC with the separation-of-variables
/// transform. Reports standard errors across randomized batches.
pub fn exact_conditional_moments(
    x: &[u32],
    fbar_y: &DVector<f64>,
    params: &ModelParams,
    thresholds: &ThresholdSet,
    points: usize,
    seed: u64,
) -> Result<ConditionalMoments> {
    let mean = params.psi() * fbar_y;
    let rect = Rectangle::from_cell(x, thresholds);
    exact_moments_for_rect(&mean, &params.delta, &rect, points, seed)
}

/// QMC moments for an explicit mean/covariance/cell triple.
pub fn exact_moments_for_rect(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rect: &Rectangle,
    points: usize,
    seed: u64,
) -> Result<ConditionalMoments> {
    let chol = crate::linalg::symmetrize(cov)
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance is not SPD".into()))?;
    let l = chol.l();
    let res = sov_run(mean, &l, rect, points, seed, true);
    if !res.ln_prob.is_finite() {
        return Err(Error::EmptyCell {
            lower: rect.lower.min(),
            upper: rect.upper.max(),
        });
    }
    let p = mean.len();
    let mut s2 = DVector::zeros(p);
    for j in 0..p {
        s2[j] = res.cross[(j, j)].max(res.m[j] * res.m[j]);
    }
    let mut cross = res.cross;
    for j in 0..p {
        cross[(j, j)] = s2[j];
    }
    Ok(ConditionalMoments {
        m: res.m,
        s2,
        method: MomentMethod::ExactQmc,
        cross: Some(cross),
        std_err: Some(res.m_se),
        converged: true,
    })
}

/// Rejection-sampling moments; unbiased, kept as a low-dimensional oracle.
pub fn rejection_conditional_moments(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    rect: &Rectangle,
    budget: usize,
    seed: u64,
) -> Result<ConditionalMoments> {
    let p = mean.len();
    let chol = crate::linalg::symmetrize(cov)
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance is not SPD".into()))?;
    let l = chol.l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = 0usize;
    let mut sum_z = DVector::zeros(p);
    let mut sum_zz = DMatrix::zeros(p, p);
    let mut z = DVector::zeros(p);
    let mut eps = DVector::zeros(p);
    for _ in 0..budget {
        for k in 0..p {
            eps[k] = rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        z.copy_from(mean);
        for k in 0..p {
            let mut acc = 0.0;
            for t in 0..=k {
                acc += l[(k, t)] * eps[t];
            }
            z[k] += acc;
        }
        if rect.contains(&z) {
            kept += 1;
            sum_z += &z;
            sum_zz.ger(1.0, &z, &z, 1.0);
        }
    }
    let rate = kept as f64 / budget as f64;
    if rate < 1e-6 {
        return Err(Error::BudgetExhausted { rate });
    }
    let m = &sum_z / kept as f64;
    let cross = crate::linalg::symmetrize(&(&sum_zz / kept as f64));
    let mut s2 = DVector::zeros(p);
    for j in 0..p {
        s2[j] = cross[(j, j)];
    }
    // Crude per-coordinate standard error from the sample variance.
    let se = DVector::from_fn(p, |j, _| {
        ((s2[j] - m[j] * m[j]).max(0.0) / kept as f64).sqrt()
    });
    Ok(ConditionalMoments {
        m,
        s2,
        method: MomentMethod::ExactRejection,
        cross: Some(cross),
        std_err: Some(se),
        converged: true,
    })
}

/// Rectangle probability estimate with standard error.
#[derive(Debug, Clone)]
pub struct RectProb {
    pub prob: f64,
    pub ln_prob: f64,
    pub std_err: f64,
    /// Set when the requested precision was not reached within the budget.
    pub budget_exhausted: bool,
}

/// `P(Z in cell)` for `Z ~ N(mean, cov)`.
///
/// Diagonal covariances and the full-space cell short-circuit to closed
/// forms; everything else runs the QMC accumulator.
pub fn rect_prob(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    cell: &Rectangle,
    points: usize,
    seed: u64,
) -> Result<RectProb> {
    let p = mean.len();
    if cell.dim() != p || cov.nrows() != p {
        return Err(Error::Invalid("rect_prob dimension mismatch".into()));
    }
    if (0..p).all(|j| cell.lower[j] == f64::NEG_INFINITY && cell.upper[j] == f64::INFINITY) {
        return Ok(RectProb {
            prob: 1.0,
            ln_prob: 0.0,
            std_err: 0.0,
            budget_exhausted: false,
        });
    }
    let off_diag = (0..p).any(|i| (0..p).any(|j| i != j && cov[(i, j)] != 0.0));
    if !off_diag {
        let mut ln_p = 0.0;
        for j in 0..p {
            let sd = cov[(j, j)].sqrt();
            let lo = (cell.lower[j] - mean[j]) / sd;
            let hi = (cell.upper[j] - mean[j]) / sd;
            ln_p += match (lo == f64::NEG_INFINITY, hi == f64::INFINITY) {
                (true, true) => 0.0,
                _ => normal::ln_cdf_interval(lo, hi),
            };
        }
        return Ok(RectProb {
            prob: ln_p.exp(),
            ln_prob: ln_p,
            std_err: 0.0,
            budget_exhausted: false,
        });
    }
    let chol = crate::linalg::symmetrize(cov)
        .cholesky()
        .ok_or_else(|| Error::Numerical("covariance is not SPD".into()))?;
    let res = sov_run(mean, &chol.l(), cell, points, seed, false);
    Ok(RectProb {
        prob: res.prob,
        ln_prob: res.ln_prob,
        std_err: res.prob_se,
        budget_exhausted: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Gauss-Legendre truncated-moment oracle, independent of the closed
    /// forms above: integrates z^k phi((z-mu)/sd)/sd over the clipped cell.
    fn quad_moments(mu: f64, sd: f64, a: f64, b: f64) -> (f64, f64) {
        let lo = a.max(mu - 40.0 * sd);
        let hi = b.min(mu + 40.0 * sd);
        let panels = 400;
        // 10-point Gauss-Legendre nodes/weights on [-1, 1].
        let nodes = [
            -0.973_906_528_517_171_7,
            -0.865_063_366_688_984_5,
            -0.679_409_568_299_024_4,
            -0.433_395_394_129_247_2,
            -0.148_874_338_981_631_2,
            0.148_874_338_981_631_2,
            0.433_395_394_129_247_2,
            0.679_409_568_299_024_4,
            0.865_063_366_688_984_5,
            0.973_906_528_517_171_7,
        ];
        let weights = [
            0.066_671_344_308_688_14,
            0.149_451_349_150_580_6,
            0.219_086_362_515_982_04,
            0.269_266_719_309_996_35,
            0.295_524_224_714_752_87,
            0.295_524_224_714_752_87,
            0.269_266_719_309_996_35,
            0.219_086_362_515_982_04,
            0.149_451_349_150_580_6,
            0.066_671_344_308_688_14,
        ];
        let mut z0 = 0.0;
        let mut z1 = 0.0;
        let mut z2 = 0.0;
        let h = (hi - lo) / panels as f64;
        for i in 0..panels {
            let c = lo + (i as f64 + 0.5) * h;
            for (x, w) in nodes.iter().zip(weights.iter()) {
                let z = c + 0.5 * h * x;
                let dens = crate::normal::pdf((z - mu) / sd) / sd;
                let wd = w * 0.5 * h * dens;
                z0 += wd;
                z1 += wd * z;
                z2 += wd * z * z;
            }
        }
        (z1 / z0, z2 / z0)
    }

    #[test]
    fn half_normal_closed_form() {
        let (mean, second) = trunc_moments_1d(0.0, 1.0, 0.0, f64::INFINITY).unwrap();
        assert_abs_diff_eq!(mean, (2.0 / std::f64::consts::PI).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(second, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_cell_against_quadrature() {
        let (mean, second) = trunc_moments_1d(0.0, 1.0, -1.0, 1.0).unwrap();
        assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-12);
        let (qm, qs) = quad_moments(0.0, 1.0, -1.0, 1.0);
        assert_abs_diff_eq!(mean, qm, epsilon = 1e-8);
        assert_abs_diff_eq!(second, qs, epsilon = 1e-8);
        // Frozen from the quadrature oracle.
        assert_abs_diff_eq!(second, 0.291_125_2, epsilon = 2e-6);
    }

    #[test]
    fn untruncated_matches_normal_moments() {
        let (mean, second) =
            trunc_moments_1d(3.0, 2.0, f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert_abs_diff_eq!(mean, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(second, 13.0, epsilon = 1e-12);
    }

    #[test]
    fn grid_against_quadrature() {
        let mut cases = 0;
        for &mu in &[-1.5, 0.0, 2.0] {
            for &sd in &[0.5, 1.0, 2.0] {
                for &a in &[f64::NEG_INFINITY, -2.0, -0.3, 1.0] {
                    for &b in &[-1.0, 0.4, 2.5, f64::INFINITY] {
                        if !(a < b) {
                            continue;
                        }
                        let (m, s) = trunc_moments_1d(mu, sd, a, b).unwrap();
                        let (qm, qs) = quad_moments(mu, sd, a, b);
                        assert_abs_diff_eq!(m, qm, epsilon = 1e-8);
                        assert_abs_diff_eq!(s, qs, epsilon = 1e-8);
                        cases += 1;
                    }
                }
            }
        }
        assert!(cases > 80);
    }

    /// Tensor Gauss-Legendre oracle for MVN moments on a p=2/3 cell.
    fn grid_moments(
        mean: &DVector<f64>,
        cov: &DMatrix<f64>,
        rect: &Rectangle,
        nodes_per_dim: usize,
    ) -> (DVector<f64>, DMatrix<f64>, f64) {
        let p = mean.len();
        let prec = crate::linalg::inv_spd(cov).unwrap();
        let norm = ((2.0 * std::f64::consts::PI).powi(p as i32) * cov.determinant()).sqrt();
        // Clip infinite bounds at +-9 marginal sd.
        let mut lo = vec![0.0; p];
        let mut hi = vec![0.0; p];
        for j in 0..p {
            let sd = cov[(j, j)].sqrt();
            lo[j] = rect.lower[j].max(mean[j] - 9.0 * sd);
            hi[j] = rect.upper[j].min(mean[j] + 9.0 * sd);
        }
        // Gauss-Legendre nodes on [0,1].
        let m = nodes_per_dim;
        let (gx, gw) = gauss_legendre_01(m);
        let mut z0 = 0.0;
        let mut z1 = DVector::zeros(p);
        let mut z2 = DMatrix::zeros(p, p);
        let mut idx = vec![0usize; p];
        let mut point = DVector::zeros(p);
        loop {
            let mut w = 1.0;
            for j in 0..p {
                point[j] = lo[j] + (hi[j] - lo[j]) * gx[idx[j]];
                w *= gw[idx[j]] * (hi[j] - lo[j]);
            }
            let d = &point - mean;
            let dens = (-(0.5 * (prec.clone() * &d).dot(&d))).exp() / norm;
            let wd = w * dens;
            z0 += wd;
            z1.axpy(wd, &point, 1.0);
            z2.ger(wd, &point, &point, 1.0);
            // Odometer.
            let mut j = 0;
            loop {
                idx[j] += 1;
                if idx[j] < m {
                    break;
                }
                idx[j] = 0;
                j += 1;
                if j == p {
                    return (z1 / z0, z2 / z0, z0);
                }
            }
        }
    }

    fn gauss_legendre_01(m: usize) -> (Vec<f64>, Vec<f64>) {
        // Newton iteration on Legendre polynomials.
        let mut x = vec![0.0; m];
        let mut w = vec![0.0; m];
        for i in 0..m {
            let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, 0.0);
                for k in 0..m {
                    let p2 = p1;
                    p1 = p0;
                    p0 = ((2 * k + 1) as f64 * t * p1 - k as f64 * p2) / (k as f64 + 1.0);
                }
                let dp = m as f64 * (t * p0 - p1) / (t * t - 1.0);
                let dt = p0 / dp;
                t -= dt;
                if dt.abs() < 1e-15 {
                    break;
                }
            }
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 0..m {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * t * p1 - k as f64 * p2) / (k as f64 + 1.0);
            }
            let dp = m as f64 * (t * p0 - p1) / (t * t - 1.0);
            x[i] = 0.5 * (1.0 - t); // map to [0,1], reversed is fine
            w[i] = 1.0 / ((1.0 - t * t) * dp * dp);
        }
        (x, w)
    }

    #[test]
    fn approx_equals_1d_under_independence() {
        // Delta = I: conditioning vanishes, recursion equals per-coordinate
        // closed forms.
        let p = 4;
        let delta = DMatrix::identity(p, p);
        let solver = ConditionalSolver::new(&delta).unwrap();
        let mean = DVector::from_vec(vec![0.3, -0.2, 0.0, 1.1]);
        let rect = Rectangle::new(
            DVector::from_vec(vec![f64::NEG_INFINITY, -1.0, 0.0, 0.5]),
            DVector::from_vec(vec![0.0, 1.0, 2.0, f64::INFINITY]),
        )
        .unwrap();
        let mom = solver.moments(&rect, &mean).unwrap();
        assert!(mom.converged);
        for j in 0..p {
            let (m1, s1) =
                trunc_moments_1d(mean[j], 1.0, rect.lower[j], rect.upper[j]).unwrap();
            assert_abs_diff_eq!(mom.m[j], m1, epsilon = 1e-8);
            assert_abs_diff_eq!(mom.s2[j], s1, epsilon = 1e-8);
        }
    }

    #[test]
    fn approx_close_to_exact_p2() {
        // p=2, off-diagonal 0.5, zero mean, cell = upper-left quadrant cells
        // from thresholds at 0.
        let delta = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let solver = ConditionalSolver::new(&delta).unwrap();
        let mean = DVector::zeros(2);
        let rect = Rectangle::new(
            DVector::from_vec(vec![f64::NEG_INFINITY, f64::NEG_INFINITY]),
            DVector::from_vec(vec![0.0, 0.0]),
        )
        .unwrap();
        let approx = solver.moments(&rect, &mean).unwrap();
        let (qm, _, _) = grid_moments(&mean, &delta, &rect, 64);
        for j in 0..2 {
            assert!((approx.m[j] - qm[j]).abs() < 0.05, "coord {j}: {} vs {}", approx.m[j], qm[j]);
        }
    }

    #[test]
    fn exact_qmc_matches_grid_oracle_p3() {
        let cov = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.4, -0.2, 0.4, 1.0, 0.3, -0.2, 0.3, 1.0],
        );
        let mean = DVector::from_vec(vec![0.2, -0.4, 0.1]);
        let rect = Rectangle::new(
            DVector::from_vec(vec![-0.8, f64::NEG_INFINITY, 0.0]),
            DVector::from_vec(vec![0.9, 0.3, f64::INFINITY]),
        )
        .unwrap();
        let mom = exact_moments_for_rect(&mean, &cov, &rect, 1 << 14, 99).unwrap();
        let (qm, qc, _) = grid_moments(&mean, &cov, &rect, 48);
        for j in 0..3 {
            assert!((mom.m[j] - qm[j]).abs() < 1e-3, "m[{j}] {} vs {}", mom.m[j], qm[j]);
            assert!(
                (mom.s2[j] - qc[(j, j)]).abs() < 2e-3,
                "s2[{j}] {} vs {}",
                mom.s2[j],
                qc[(j, j)]
            );
        }
        // Cross moments too.
        let cross = mom.cross.clone().unwrap();
        for j in 0..3 {
            for k in 0..3 {
                assert!((cross[(j, k)] - qc[(j, k)]).abs() < 2e-3);
            }
        }
    }

    #[test]
    fn exact_matches_1d_under_independence() {
        let cov = DMatrix::identity(2, 2);
        let mean = DVector::from_vec(vec![0.5, -0.3]);
        let rect = Rectangle::new(
            DVector::from_vec(vec![0.0, f64::NEG_INFINITY]),
            DVector::from_vec(vec![f64::INFINITY, 0.4]),
        )
        .unwrap();
        let mom = exact_moments_for_rect(&mean, &cov, &rect, 1 << 13, 5).unwrap();
        let se = mom.std_err.clone().unwrap();
        for j in 0..2 {
            let (m1, _) = trunc_moments_1d(mean[j], 1.0, rect.lower[j], rect.upper[j]).unwrap();
            let tol = (3.0 * se[j]).max(1e-4);
            assert!((mom.m[j] - m1).abs() < tol, "{} vs {}", mom.m[j], m1);
        }
    }

    #[test]
    fn exact_symmetric_cell_zero_mean() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let mean = DVector::zeros(2);
        let rect = Rectangle::new(
            DVector::from_vec(vec![-1.0, -1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let mom = exact_moments_for_rect(&mean, &cov, &rect, 1 << 13, 11).unwrap();
        let se = mom.std_err.clone().unwrap();
        for j in 0..2 {
            assert!(mom.m[j].abs() < (3.0 * se[j]).max(1e-3));
        }
        let rej = rejection_conditional_moments(&mean, &cov, &rect, 200_000, 13).unwrap();
        for j in 0..2 {
            assert!(rej.m[j].abs() < 3.0 * rej.std_err.as_ref().unwrap()[j]);
        }
    }

    #[test]
    fn rect_prob_diagonal_and_full_space() {
        let cov = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
        let mean = DVector::from_vec(vec![0.0, 1.0]);
        let full = Rectangle::new(
            DVector::from_vec(vec![f64::NEG_INFINITY, f64::NEG_INFINITY]),
            DVector::from_vec(vec![f64::INFINITY, f64::INFINITY]),
        )
        .unwrap();
        let rp = rect_prob(&mean, &cov, &full, 1 << 10, 1).unwrap();
        assert_eq!(rp.prob, 1.0);
        let cell = Rectangle::new(
            DVector::from_vec(vec![0.0, f64::NEG_INFINITY]),
            DVector::from_vec(vec![1.0, 2.0]),
        )
        .unwrap();
        let rp = rect_prob(&mean, &cov, &cell, 1 << 10, 1).unwrap();
        let expect = (crate::normal::cdf(1.0) - crate::normal::cdf(0.0))
            * crate::normal::cdf((2.0 - 1.0) / 2.0);
        assert_abs_diff_eq!(rp.prob, expect, epsilon = 1e-12);
        assert_eq!(rp.std_err, 0.0);
    }

    #[test]
    fn rect_prob_orthant_closed_form() {
        // P(Z1 > 0, Z2 > 0) with correlation rho = 1/4 + asin(rho)/(2 pi).
        let rho = 0.5;
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let mean = DVector::zeros(2);
        let cell = Rectangle::new(
            DVector::from_vec(vec![0.0, 0.0]),
            DVector::from_vec(vec![f64::INFINITY, f64::INFINITY]),
        )
        .unwrap();
        let rp = rect_prob(&mean, &cov, &cell, 1 << 13, 3).unwrap();
        let expect = 0.25 + rho.asin() / (2.0 * std::f64::consts::PI);
        assert!((rp.prob - expect).abs() < 1e-3, "{} vs {expect}", rp.prob);
        assert_abs_diff_eq!(expect, 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rect_prob_monotone_under_inclusion() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0]);
        let mean = DVector::from_vec(vec![0.1, -0.2]);
        let inner = Rectangle::new(
            DVector::from_vec(vec![-0.5, -0.5]),
            DVector::from_vec(vec![0.5, 0.5]),
        )
        .unwrap();
        let outer = Rectangle::new(
            DVector::from_vec(vec![-1.5, -1.0]),
            DVector::from_vec(vec![1.0, 1.5]),
        )
        .unwrap();
        let pi = rect_prob(&mean, &cov, &inner, 1 << 12, 7).unwrap();
        let po = rect_prob(&mean, &cov, &outer, 1 << 12, 7).unwrap();
        assert!(pi.prob <= po.prob + 3.0 * (pi.std_err + po.std_err));
    }

    #[test]
    fn variance_nonnegativity_both_backends() {
        let delta = DMatrix::from_row_slice(2, 2, &[1.0, -0.45, -0.45, 1.0]);
        let solver = ConditionalSolver::new(&delta).unwrap();
        let mean = DVector::from_vec(vec![0.7, -0.9]);
        let rect = Rectangle::new(
            DVector::from_vec(vec![0.0, -2.0]),
            DVector::from_vec(vec![1.5, -0.5]),
        )
        .unwrap();
        let a = solver.moments(&rect, &mean).unwrap();
        for j in 0..2 {
            assert!(a.s2[j] >= a.m[j] * a.m[j] - 1e-3);
        }
        let e = exact_moments_for_rect(&mean, &delta, &rect, 1 << 13, 21).unwrap();
        for j in 0..2 {
            assert!(e.s2[j] >= e.m[j] * e.m[j] - 1e-8);
        }
    }

    #[test]
    fn mean_strictly_increasing_in_mu() {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..200 {
            let mu = -6.0 + 0.06 * i as f64;
            let (m, _) = trunc_moments_1d(mu, 1.0, -0.7, 1.3).unwrap();
            assert!(m > prev, "mean not increasing at mu = {mu}");
            prev = m;
        }
    }
}
