//! Synthetic data generators for the evaluation experiments, plus the
//! subspace-angle, distance-correlation, and selection metrics.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{build_basis, BasisSpec, OrdinalDataset, Response, ThresholdSet};
use crate::numeric::{derive_seed, lower_quantile};

/// How the generator draws the reduction basis.
#[derive(Debug, Clone)]
pub enum AlphaRule {
    /// `sqrt(p) alpha = (1_p, sign(e), ...)` with `e ~ N_p(0, I)`.
    OnesAndSigns,
    /// Explicit p x d matrix (rows outside the active set may be zero).
    Explicit(DMatrix<f64>),
}

/// Which matrix couples the error covariance: `Delta = c I + rho U B U'`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coupling {
    /// U is the mean-structure alpha itself.
    MeanAlpha,
    /// U is a fresh dense ones-and-signs draw, so the covariance links
    /// active and inactive predictors.
    FreshDense,
}

/// `Delta = c I + rho U B U'` with `B` symmetric PSD drawn once per design.
#[derive(Debug, Clone)]
pub struct DeltaRule {
    pub c: f64,
    pub rho: f64,
    pub coupling: Coupling,
    /// Scale of the eigenvalues of B.
    pub b_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Normal,
    /// Centered and variance-standardized chi-squared(5) coordinates mixed
    /// through the covariance square root.
    ChiSquared5,
}

/// How latent values are cut into categories.
#[derive(Debug, Clone)]
pub enum ThresholdRule {
    /// Equal-probability cuts at the sample quantiles of each latent margin.
    EqualProbability,
    /// Explicit cut points per predictor (on the standardized latent scale).
    Explicit(Vec<Vec<f64>>),
}

/// A complete synthetic design. `structure_seed` fixes the quantities drawn
/// once per experiment (alpha, B, coupling); `seed` drives the per-replicate
/// data (response, errors).
#[derive(Debug, Clone)]
pub struct SimDesign {
    pub n: usize,
    pub p: usize,
    pub d: usize,
    /// Polynomial degree of the generator basis.
    pub r: usize,
    pub alpha_rule: AlphaRule,
    pub delta_rule: DeltaRule,
    pub error_kind: ErrorKind,
    pub g: Vec<usize>,
    pub threshold_rule: ThresholdRule,
    /// Scale of the identity-padded coordinate matrix xi.
    pub xi_scale: f64,
    pub structure_seed: u64,
    pub seed: u64,
}

/// Everything the evaluation needs about the truth behind a generated set.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    /// Orthonormal basis of the true reduction subspace on the rescaled
    /// latent scale.
    pub alpha: DMatrix<f64>,
    /// Rescaled latent sample (n x p).
    pub z: DMatrix<f64>,
    pub thresholds: ThresholdSet,
    /// Indices of truly active predictors.
    pub s0: Vec<usize>,
}

impl SimDesign {
    /// E-step validation design: p=5, n=100, G_j=4, polynomial r=2.
    pub fn validate_estep(seed: u64) -> Self {
        SimDesign {
            n: 100,
            p: 5,
            d: 2,
            r: 2,
            alpha_rule: AlphaRule::OnesAndSigns,
            delta_rule: DeltaRule {
                c: 1.0,
                rho: 1.0,
                coupling: Coupling::MeanAlpha,
                b_scale: 0.5,
            },
            error_kind: ErrorKind::Normal,
            g: vec![4; 5],
            threshold_rule: ThresholdRule::EqualProbability,
            xi_scale: 4.0,
            structure_seed: 17,
            seed,
        }
    }

    /// Estimation-performance design: p=20, d=2, r=2, G_j in 3..=5.
    pub fn performance(n: usize, error_kind: ErrorKind, seed: u64) -> Self {
        let g = (0..20).map(|j| 3 + (j % 3)).collect();
        SimDesign {
            n,
            p: 20,
            d: 2,
            r: 2,
            alpha_rule: AlphaRule::OnesAndSigns,
            delta_rule: DeltaRule {
                c: 1.0,
                rho: 1.0,
                coupling: Coupling::MeanAlpha,
                b_scale: 1.0,
            },
            error_kind,
            g,
            threshold_rule: ThresholdRule::EqualProbability,
            xi_scale: 4.0,
            structure_seed: 29,
            seed,
        }
    }

    /// Dimension-inference design: p=10, d=2; the fit searches with r=4.
    pub fn dimension_study(n: usize, seed: u64) -> Self {
        let g = (0..10).map(|j| 3 + (j % 3)).collect();
        SimDesign {
            n,
            p: 10,
            d: 2,
            r: 2,
            alpha_rule: AlphaRule::OnesAndSigns,
            delta_rule: DeltaRule {
                c: 1.0,
                rho: 1.0,
                coupling: Coupling::MeanAlpha,
                b_scale: 1.0,
            },
            error_kind: ErrorKind::Normal,
            g,
            threshold_rule: ThresholdRule::EqualProbability,
            xi_scale: 4.0,
            structure_seed: 41,
            seed,
        }
    }

    /// Variable-selection design: p=20, four active predictors carrying the
    /// explicit 2x4 block, covariance coupled across the active boundary.
    pub fn variable_selection(n: usize, rho: f64, seed: u64) -> Self {
        let p = 20;
        let mut alpha = DMatrix::zeros(p, 2);
        let block = [
            [0.5, -0.5],
            [0.5, 0.5],
            [0.5, 0.5],
            [0.5, -0.5],
        ];
        for (i, row) in block.iter().enumerate() {
            alpha[(i, 0)] = row[0];
            alpha[(i, 1)] = row[1];
        }
        SimDesign {
            n,
            p,
            d: 2,
            r: 2,
            alpha_rule: AlphaRule::Explicit(alpha),
            delta_rule: DeltaRule {
                c: 4.0,
                rho,
                coupling: Coupling::FreshDense,
                b_scale: 16.0,
            },
            error_kind: ErrorKind::Normal,
            g: vec![4; p],
            threshold_rule: ThresholdRule::EqualProbability,
            xi_scale: 2.0,
            structure_seed: 53,
            seed,
        }
    }

    /// Income-like single-index design for the index-construction proxy:
    /// d=1, survey-style level counts, covariance structure not aligned
    /// with the signal direction.
    pub fn income_like(seed: u64) -> Self {
        let g = vec![4, 4, 3, 4, 7, 4, 4, 3, 3, 3, 3];
        let p = g.len();
        SimDesign {
            n: 600,
            p,
            d: 1,
            r: 2,
            alpha_rule: AlphaRule::OnesAndSigns,
            delta_rule: DeltaRule {
                c: 1.5,
                rho: 1.0,
                coupling: Coupling::FreshDense,
                b_scale: 3.0,
            },
            error_kind: ErrorKind::Normal,
            g,
            threshold_rule: ThresholdRule::EqualProbability,
            xi_scale: 1.5,
            structure_seed: 67,
            seed,
        }
    }
}

/// Generate a dataset from the design, returning the ground truth used by
/// the evaluation metrics.
pub fn generate(design: &SimDesign) -> Result<(OrdinalDataset, GroundTruth)> {
    let p = design.p;
    let d = design.d;
    let n = design.n;
    if design.g.len() != p {
        return Err(Error::Invalid("g length != p".into()));
    }

    // Structure draws: fixed across replicates of an experiment.
    let mut srng = ChaCha8Rng::seed_from_u64(derive_seed(design.structure_seed, 0x737472, 0));
    let alpha = match &design.alpha_rule {
        AlphaRule::OnesAndSigns => {
            let scale = 1.0 / (p as f64).sqrt();
            let mut a = DMatrix::zeros(p, d);
            for i in 0..p {
                a[(i, 0)] = scale;
            }
            for k in 1..d {
                for i in 0..p {
                    let e: f64 = srng.sample(rand_distr::StandardNormal);
                    a[(i, k)] = scale * e.signum();
                }
            }
            a
        }
        AlphaRule::Explicit(m) => {
            if m.nrows() != p || m.ncols() != d {
                return Err(Error::Invalid("explicit alpha has wrong shape".into()));
            }
            m.clone()
        }
    };
    // B: symmetric PSD with eigenvalues scaled by b_scale, fixed at the outset.
    let b = {
        let raw = DMatrix::from_fn(d, d, |_, _| srng.sample::<f64, _>(rand_distr::StandardNormal));
        let q = linalg::orthonormalize(&raw).unwrap_or_else(|_| DMatrix::identity(d, d));
        let eigs = DVector::from_fn(d, |_, _| 0.3 + 0.7 * srng.gen::<f64>());
        &q * DMatrix::from_diagonal(&(eigs * design.delta_rule.b_scale)) * q.transpose()
    };
    let coupling_u = match design.delta_rule.coupling {
        Coupling::MeanAlpha => alpha.clone(),
        Coupling::FreshDense => {
            let scale = 1.0 / (p as f64).sqrt();
            let mut u = DMatrix::zeros(p, d);
            for i in 0..p {
                u[(i, 0)] = scale;
            }
            for k in 1..d {
                for i in 0..p {
                    let e: f64 = srng.sample(rand_distr::StandardNormal);
                    u[(i, k)] = scale * e.signum();
                }
            }
            u
        }
    };
    let delta = {
        let mut m = DMatrix::identity(p, p) * design.delta_rule.c;
        m += design.delta_rule.rho * &coupling_u * &b * coupling_u.transpose();
        linalg::symmetrize(&m)
    };

    // xi: scaled identity padded to d x r.
    let xi = DMatrix::from_fn(d, design.r, |i, j| {
        if i == j {
            design.xi_scale
        } else {
            0.0
        }
    });

    // Replicate draws.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(design.seed, 0x646174, 1));
    let y: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
    let response = Response::Continuous(y);
    let f = build_basis(&response, &BasisSpec::Polynomial { degree: design.r })?;

    let psi = &delta * &alpha * &xi; // p x r
    let means = f.matrix() * psi.transpose(); // n x p

    let delta_half = linalg::sqrt_spd(&delta)?;
    let mut z = DMatrix::zeros(n, p);
    let mut u = DVector::zeros(p);
    for i in 0..n {
        for k in 0..p {
            u[k] = match design.error_kind {
                ErrorKind::Normal => rng.sample::<f64, _>(rand_distr::StandardNormal),
                ErrorKind::ChiSquared5 => {
                    let chi: f64 = rng.sample(rand_distr::ChiSquared::new(5.0).unwrap());
                    (chi - 5.0) / (10.0_f64).sqrt()
                }
            };
        }
        let eps = &delta_half * &u;
        for j in 0..p {
            z[(i, j)] = means[(i, j)] + eps[j];
        }
    }

    // Rescale each latent coordinate by its error standard deviation so the
    // generated model satisfies the unit-diagonal identification convention
    // (the codes are unchanged: quantile cuts commute with the scaling).
    let mut scale = DVector::zeros(p);
    for j in 0..p {
        scale[j] = delta[(j, j)].sqrt();
    }
    for j in 0..p {
        for i in 0..n {
            z[(i, j)] /= scale[j];
        }
    }
    // True subspace on the identified scale: span(D^{1/2} alpha) for the
    // diagonal rescaling D^{-1/2} z (scale[j] = sqrt(D_jj)).
    let d_half = DMatrix::from_diagonal(&scale);
    let true_alpha = linalg::orthonormalize(&(&d_half * &alpha)).or_else(|_| {
        // Explicit sparse alpha can be rank-deficient only if d > active rows.
        Err(Error::RankDeficient("true alpha".into()))
    })?;

    // Thresholds per predictor.
    let cuts: Vec<Vec<f64>> = match &design.threshold_rule {
        ThresholdRule::Explicit(c) => c.clone(),
        ThresholdRule::EqualProbability => (0..p)
            .map(|j| {
                let mut col: Vec<f64> = (0..n).map(|i| z[(i, j)]).collect();
                col.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let gj = design.g[j];
                (1..gj)
                    .map(|k| lower_quantile(&col, k as f64 / gj as f64))
                    .collect()
            })
            .collect(),
    };
    let thresholds = ThresholdSet::new(cuts)?;

    let mut rows = vec![vec![0u32; p]; n];
    for i in 0..n {
        for j in 0..p {
            rows[i][j] = thresholds.discretize(j, z[(i, j)]);
        }
    }
    let dataset = OrdinalDataset::from_codes(&rows, design.g.clone(), response)?;

    let s0 = (0..p).filter(|&i| alpha.row(i).norm() > 0.0).collect();
    Ok((
        dataset,
        GroundTruth {
            alpha: true_alpha,
            z,
            thresholds,
            s0,
        },
    ))
}

/// Largest principal angle between two column spans, in degrees.
pub fn subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.ncols() != b.ncols() || a.nrows() != b.nrows() {
        return Err(Error::Invalid("subspace_angle: shape mismatch".into()));
    }
    if a.ncols() == 0 {
        return Ok(0.0);
    }
    let qa = linalg::orthonormalize(a)?;
    let qb = linalg::orthonormalize(b)?;
    let svd = (qa.transpose() * qb).svd(false, false);
    let smin = svd.singular_values.min().clamp(-1.0, 1.0);
    Ok(smin.acos().to_degrees())
}

/// Empirical distance correlation between two sample blocks (rows paired).
pub fn dcor(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<f64> {
    let n = u.nrows();
    if v.nrows() != n {
        return Err(Error::Invalid("dcor: row counts differ".into()));
    }
    if n < 4 {
        return Err(Error::Invalid("dcor: need n >= 4".into()));
    }
    let a = centered_distance_matrix(u);
    let b = centered_distance_matrix(v);
    let mut dcov2 = 0.0;
    let mut dvar_u = 0.0;
    let mut dvar_v = 0.0;
    for i in 0..n {
        for j in 0..n {
            dcov2 += a[(i, j)] * b[(i, j)];
            dvar_u += a[(i, j)] * a[(i, j)];
            dvar_v += b[(i, j)] * b[(i, j)];
        }
    }
    let n2 = (n * n) as f64;
    dcov2 /= n2;
    dvar_u /= n2;
    dvar_v /= n2;
    if dvar_u <= 0.0 || dvar_v <= 0.0 {
        return Err(Error::DegenerateSample(
            "zero distance variance in a dcor block".into(),
        ));
    }
    let r2 = (dcov2 / (dvar_u * dvar_v).sqrt()).max(0.0);
    Ok(r2.sqrt().min(1.0))
}

fn centered_distance_matrix(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for k in 0..x.ncols() {
                let t = x[(i, k)] - x[(j, k)];
                acc += t * t;
            }
            let dist = acc.sqrt();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    let grand = d.sum() / (n * n) as f64;
    let row_means: Vec<f64> = (0..n).map(|i| d.row(i).sum() / n as f64).collect();
    for i in 0..n {
        for j in 0..n {
            d[(i, j)] = d[(i, j)] - row_means[i] - row_means[j] + grand;
        }
    }
    d
}

/// Variable-selection quality over replicate runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMetrics {
    /// Fraction of runs whose active set contains the truth.
    pub pr_contain: f64,
    pub mean_card: f64,
    pub sd_card: f64,
}

pub fn selection_metrics(truth_s0: &[usize], runs: &[Vec<usize>]) -> SelectionMetrics {
    assert!(!runs.is_empty());
    let contain = runs
        .iter()
        .filter(|r| truth_s0.iter().all(|t| r.contains(t)))
        .count() as f64
        / runs.len() as f64;
    let cards: Vec<f64> = runs.iter().map(|r| r.len() as f64).collect();
    let mean = cards.iter().sum::<f64>() / cards.len() as f64;
    let sd = if cards.len() > 1 {
        (cards.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (cards.len() as f64 - 1.0)).sqrt()
    } else {
        0.0
    };
    SelectionMetrics {
        pr_contain: contain,
        mean_card: mean,
        sd_card: sd,
    }
}
