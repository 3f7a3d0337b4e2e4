//! The supervised reduction `R(x) = E(alpha' Z | X = x)`, computed by Bayes
//! mixing of per-slice conditional means, plus the normalized single-index
//! output and the optional lookup table.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use parking_lot::RwLock;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{FittedModel, OrdinalDataset, Response};
use crate::numeric::{derive_seed, log_sum_exp};
use crate::tmvn::{self, Backend, ConditionalSolver, Rectangle};

/// Knobs of the reduction computation.
#[derive(Debug, Clone)]
pub struct ReduceOptions {
    /// QMC points per rectangle-probability evaluation.
    pub prob_points: usize,
    /// Entry capacity of the per-call moment cache.
    pub cache_capacity: usize,
}

impl Default for ReduceOptions {
    fn default() -> Self {
        ReduceOptions {
            prob_points: 1 << 12,
            cache_capacity: 1 << 16,
        }
    }
}

/// Reduced coordinates for a dataset plus cache counters.
#[derive(Debug)]
pub struct ReductionResult {
    /// n x d reduced coordinates.
    pub r: DMatrix<f64>,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

fn seed_for_codes(model_seed: u64, x: &[u32]) -> u64 {
    let mut acc = 0xB0B5_5EED_u64;
    for &c in x {
        acc = acc.wrapping_mul(0x100_0000_01b3).wrapping_add(c as u64 + 1);
    }
    derive_seed(model_seed, 0x7265_6475, acc)
}

/// Posterior mixture weights over response slices for one observation,
/// computed in the log domain: `w(y) ∝ P(X|Y=y) P(Y=y)`.
///
/// `x` is in the model's (merged) code space.
pub fn posterior_weights_mapped(
    x: &[u32],
    model: &FittedModel,
    opts: &ReduceOptions,
) -> Result<Vec<f64>> {
    let rect = Rectangle::from_cell(x, &model.thresholds);
    let psi = model.params.psi();
    let seed = seed_for_codes(model.seed, x);
    // The same QMC stream serves every slice: identical mixture components
    // get identical estimates and the Bayes ratios benefit from common
    // random numbers.
    let mut ln_w = Vec::with_capacity(model.mixture.slices.len());
    for slice in model.mixture.slices.iter() {
        let mean = &psi * &slice.fbar;
        let rp = tmvn::rect_prob(&mean, &model.params.delta, &rect, opts.prob_points, seed)?;
        ln_w.push(rp.ln_prob + slice.prior.ln());
    }
    let norm = log_sum_exp(&ln_w);
    if !norm.is_finite() {
        return Err(Error::AllWeightsUnderflow);
    }
    Ok(ln_w.iter().map(|l| (l - norm).exp()).collect())
}

/// Posterior weights for an observation in dataset code space.
pub fn posterior_weights(x: &[u32], model: &FittedModel, opts: &ReduceOptions) -> Result<Vec<f64>> {
    posterior_weights_mapped(&model.map_codes(x), model, opts)
}

fn conditional_mean_mapped(
    x: &[u32],
    model: &FittedModel,
    solver: &ConditionalSolver,
    fbar: &DVector<f64>,
    slice_idx: usize,
) -> Result<DVector<f64>> {
    let rect = Rectangle::from_cell(x, &model.thresholds);
    let mean = model.params.psi() * fbar;
    match model.backend {
        Backend::Approximate => Ok(solver.moments(&rect, &mean)?.m),
        Backend::Exact { points } => {
            let seed = derive_seed(seed_for_codes(model.seed, x), 0x6d65616e, slice_idx as u64);
            Ok(tmvn::exact_moments_for_rect(&mean, &model.params.delta, &rect, points, seed)?.m)
        }
    }
}

fn reduce_mapped(
    x: &[u32],
    model: &FittedModel,
    solver: &ConditionalSolver,
    opts: &ReduceOptions,
) -> Result<DVector<f64>> {
    let weights = posterior_weights_mapped(x, model, opts)?;
    let p = model.params.p();
    let mut ez = DVector::zeros(p);
    for (s, slice) in model.mixture.slices.iter().enumerate() {
        if weights[s] == 0.0 {
            continue;
        }
        let m = conditional_mean_mapped(x, model, solver, &slice.fbar, s)?;
        ez.axpy(weights[s], &m, 1.0);
    }
    Ok(model.params.alpha.transpose() * ez)
}

/// Reduce a single observation given in dataset code space.
pub fn reduce(x: &[u32], model: &FittedModel, opts: &ReduceOptions) -> Result<DVector<f64>> {
    let solver = ConditionalSolver::new(&model.params.delta)?;
    reduce_mapped(&model.map_codes(x), model, &solver, opts)
}

struct MomentCache {
    map: RwLock<HashMap<Vec<u32>, (DVector<f64>, u64)>>,
    capacity: usize,
    stamp: AtomicU64,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl MomentCache {
    fn new(capacity: usize) -> Self {
        MomentCache {
            map: RwLock::new(HashMap::new()),
            capacity,
            stamp: AtomicU64::new(0),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    fn get(&self, key: &[u32]) -> Option<DVector<f64>> {
        let guard = self.map.read();
        let hit = guard.get(key).map(|(v, _)| v.clone());
        drop(guard);
        if hit.is_some() {
            self.hits.fetch_add(1, Ordering::Relaxed);
        } else {
            self.misses.fetch_add(1, Ordering::Relaxed);
        }
        hit
    }

    fn put(&self, key: Vec<u32>, value: DVector<f64>) {
        let stamp = self.stamp.fetch_add(1, Ordering::Relaxed);
        let mut guard = self.map.write();
        if guard.len() >= self.capacity {
            // Drop the older half by insertion stamp.
            let mut stamps: Vec<u64> = guard.values().map(|(_, s)| *s).collect();
            stamps.sort_unstable();
            let cutoff = stamps[stamps.len() / 2];
            guard.retain(|_, (_, s)| *s > cutoff);
        }
        guard.insert(key, (value, stamp));
    }
}

/// Reduce every row of a dataset. Repeated code vectors are served from a
/// cache; cached or not, the returned values are identical.
pub fn reduce_dataset(data: &OrdinalDataset, model: &FittedModel) -> Result<ReductionResult> {
    reduce_dataset_opts(data, model, &ReduceOptions::default())
}

pub fn reduce_dataset_opts(
    data: &OrdinalDataset,
    model: &FittedModel,
    opts: &ReduceOptions,
) -> Result<ReductionResult> {
    let n = data.n();
    let d = model.d();
    let solver = ConditionalSolver::new(&model.params.delta)?;
    let cache = MomentCache::new(opts.cache_capacity);
    let rows: Result<Vec<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = model.map_codes(&data.row(i));
            if let Some(v) = cache.get(&x) {
                return Ok(v);
            }
            let v = reduce_mapped(&x, model, &solver, opts)
                .map_err(|e| e.with_context(format!("observation {i}")))?;
            cache.put(x, v.clone());
            Ok(v)
        })
        .collect();
    let rows = rows?;
    let mut r = DMatrix::zeros(n, d);
    for (i, v) in rows.iter().enumerate() {
        r.row_mut(i).copy_from(&v.transpose());
    }
    Ok(ReductionResult {
        r,
        cache_hits: cache.hits.load(Ordering::Relaxed),
        cache_misses: cache.misses.load(Ordering::Relaxed),
    })
}

/// Conditional latent means `E(Z | X = x_i)` for every row, as an n x p
/// matrix (the mixture over response slices, before projecting onto alpha).
pub fn latent_means(
    data: &OrdinalDataset,
    model: &FittedModel,
    opts: &ReduceOptions,
) -> Result<DMatrix<f64>> {
    let n = data.n();
    let p = model.params.p();
    let solver = ConditionalSolver::new(&model.params.delta)?;
    let cache = MomentCache::new(opts.cache_capacity);
    let rows: Result<Vec<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = model.map_codes(&data.row(i));
            if let Some(v) = cache.get(&x) {
                return Ok(v);
            }
            let weights = posterior_weights_mapped(&x, model, opts)?;
            let mut ez = DVector::zeros(p);
            for (s, slice) in model.mixture.slices.iter().enumerate() {
                if weights[s] == 0.0 {
                    continue;
                }
                let m = conditional_mean_mapped(&x, model, &solver, &slice.fbar, s)?;
                ez.axpy(weights[s], &m, 1.0);
            }
            cache.put(x, ez.clone());
            Ok(ez)
        })
        .collect();
    let rows = rows?;
    let mut out = DMatrix::zeros(n, p);
    for (i, v) in rows.iter().enumerate() {
        out.row_mut(i).copy_from(&v.transpose());
    }
    Ok(out)
}

/// A normalized single-index output.
#[derive(Debug, Clone)]
pub struct SesIndex {
    /// Values in [0, 1] with 0 and 1 attained on the input dataset.
    pub values: Vec<f64>,
    /// Sign applied to the raw reduction before normalization, chosen so the
    /// index correlates non-negatively with the response (or slice order).
    pub orientation: f64,
}

/// Min-max normalized single-index reduction over a dataset; requires d = 1.
pub fn ses_index(data: &OrdinalDataset, model: &FittedModel, opts: &ReduceOptions) -> Result<SesIndex> {
    if model.d() != 1 {
        return Err(Error::DimensionNotOne { d: model.d() });
    }
    let red = reduce_dataset_opts(data, model, opts)?;
    let raw: Vec<f64> = (0..data.n()).map(|i| red.r[(i, 0)]).collect();
    let target: Vec<f64> = match data.y() {
        Response::Continuous(v) => v.clone(),
        Response::Categorical { codes, .. } => codes.iter().map(|&c| c as f64).collect(),
    };
    let orientation = if pearson(&raw, &target) < 0.0 { -1.0 } else { 1.0 };
    let oriented: Vec<f64> = raw.iter().map(|v| v * orientation).collect();
    let min = oriented.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = oriented.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > min) {
        return Err(Error::ZeroVariance("reduction output is constant".into()));
    }
    let values = oriented.iter().map(|v| (v - min) / (max - min)).collect();
    Ok(SesIndex { values, orientation })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        cov += (x - ma) * (y - mb);
        va += (x - ma).powi(2);
        vb += (y - mb).powi(2);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va * vb).sqrt()
}

/// Dense lookup table over the full code space.
#[derive(Debug, Clone)]
pub struct ReductionTable {
    g: Vec<usize>,
    d: usize,
    values: Vec<f64>,
}

impl ReductionTable {
    pub fn lookup(&self, x: &[u32]) -> &[f64] {
        let mut idx = 0usize;
        for (j, &c) in x.iter().enumerate() {
            idx = idx * self.g[j] + (c as usize - 1);
        }
        &self.values[idx * self.d..(idx + 1) * self.d]
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.d.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Either a built table or a refusal carrying the exact size estimate.
#[derive(Debug)]
pub enum TabulateOutcome {
    Table(ReductionTable),
    Refusal { bytes_needed: u128, cells: u128 },
}

/// Precompute `R(x)` for the whole code space when it fits in the budget;
/// otherwise report the exact size and leave the caller on the cache path.
pub fn tabulate(
    model: &FittedModel,
    memory_budget_bytes: u64,
    opts: &ReduceOptions,
) -> Result<TabulateOutcome> {
    let g: Vec<usize> = model.merges.iter().map(|m| *m.iter().max().unwrap() as usize).collect();
    let mut cells: u128 = 1;
    for &gj in &g {
        cells = cells.saturating_mul(gj as u128);
    }
    let d = model.d();
    let bytes = cells.saturating_mul(8 * d.max(1) as u128);
    if bytes > memory_budget_bytes as u128 {
        return Ok(TabulateOutcome::Refusal {
            bytes_needed: bytes,
            cells,
        });
    }
    let cells = cells as usize;
    let solver = ConditionalSolver::new(&model.params.delta)?;
    let values: Result<Vec<Vec<f64>>> = (0..cells)
        .into_par_iter()
        .map(|mut idx| {
            let p = g.len();
            let mut x = vec![0u32; p];
            for j in (0..p).rev() {
                x[j] = (idx % g[j]) as u32 + 1;
                idx /= g[j];
            }
            let v = reduce_mapped(&x, model, &solver, opts)?;
            Ok(v.iter().cloned().collect())
        })
        .collect();
    let mut flat = Vec::with_capacity(cells * d);
    for v in values? {
        flat.extend_from_slice(&v);
    }
    Ok(TabulateOutcome::Table(ReductionTable { g, d, values: flat }))
}
