//! Domain types: the ordinal dataset, threshold sets, model parameters, and
//! the fitting-function basis.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::numeric::lower_quantile;

/// Response vector: continuous real or categorical label.
#[derive(Debug, Clone, PartialEq)]
pub enum Response {
    Continuous(Vec<f64>),
    /// `codes[i]` indexes into `labels`; labels are sorted and define the
    /// slice order.
    Categorical { codes: Vec<usize>, labels: Vec<String> },
}

impl Response {
    pub fn len(&self) -> usize {
        match self {
            Response::Continuous(v) => v.len(),
            Response::Categorical { codes, .. } => codes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Response::Categorical { .. })
    }
}

/// Observed sample: an n x p matrix of ordinal category codes plus the
/// response. Codes are stored internally as 1..=G_j, which makes the model's
/// invariance to order-preserving recodings structural.
#[derive(Debug, Clone)]
pub struct OrdinalDataset {
    /// Column-major codes, values in 1..=g[j].
    codes: Vec<u32>,
    n: usize,
    p: usize,
    g: Vec<usize>,
    y: Response,
    /// Original label of each internal code, per predictor.
    labels: Vec<Vec<String>>,
    /// Predictor names for reporting.
    names: Vec<String>,
}

impl OrdinalDataset {
    /// Build from row-major codes already in 1..=G_j form. `g` declares the
    /// category counts, which may exceed the observed support.
    pub fn from_codes(rows: &[Vec<u32>], g: Vec<usize>, y: Response) -> Result<Self> {
        let n = rows.len();
        let p = g.len();
        if n < 2 {
            return Err(Error::Invalid(format!("need n >= 2 observations, got {n}")));
        }
        if p == 0 {
            return Err(Error::Invalid("need p >= 1 predictors".into()));
        }
        if y.len() != n {
            return Err(Error::Invalid(format!(
                "response length {} != n = {}",
                y.len(),
                n
            )));
        }
        if let Response::Continuous(v) = &y {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(Error::MissingValue {
                    column: "<response>".into(),
                    row: i,
                });
            }
        }
        let mut codes = vec![0u32; n * p];
        for j in 0..p {
            if g[j] < 2 {
                return Err(Error::NonOrdinalColumn {
                    column: format!("x{}", j + 1),
                    reason: format!("declared {} level(s), need at least 2", g[j]),
                });
            }
            let mut seen = vec![false; g[j]];
            for (i, row) in rows.iter().enumerate() {
                if row.len() != p {
                    return Err(Error::Invalid(format!(
                        "row {i} has {} entries, expected {p}",
                        row.len()
                    )));
                }
                let c = row[j];
                if c < 1 || c as usize > g[j] {
                    return Err(Error::Invalid(format!(
                        "code {c} out of range 1..={} in column {}, row {i}",
                        g[j],
                        j + 1
                    )));
                }
                seen[c as usize - 1] = true;
                codes[j * n + i] = c;
            }
            if seen.iter().filter(|&&s| s).count() < 2 {
                return Err(Error::NonOrdinalColumn {
                    column: format!("x{}", j + 1),
                    reason: "fewer than 2 observed levels".into(),
                });
            }
        }
        let labels = g
            .iter()
            .map(|&gj| (1..=gj).map(|c| c.to_string()).collect())
            .collect();
        let names = (0..p).map(|j| format!("x{}", j + 1)).collect();
        Ok(OrdinalDataset {
            codes,
            n,
            p,
            g,
            y,
            labels,
            names,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn g(&self) -> &[usize] {
        &self.g
    }

    pub fn y(&self) -> &Response {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn labels(&self) -> &[Vec<String>] {
        &self.labels
    }

    /// Code of observation `i`, predictor `j` (1-based code value).
    #[inline]
    pub fn code(&self, i: usize, j: usize) -> u32 {
        self.codes[j * self.n + i]
    }

    /// All codes of predictor `j`.
    pub fn column(&self, j: usize) -> &[u32] {
        &self.codes[j * self.n..(j + 1) * self.n]
    }

    /// Codes of observation `i` as a fresh vector.
    pub fn row(&self, i: usize) -> Vec<u32> {
        (0..self.p).map(|j| self.code(i, j)).collect()
    }

    /// Codes as a real matrix, for use as continuous predictors.
    pub fn codes_as_real(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.p, |i, j| self.code(i, j) as f64)
    }

    /// Per-column sets of observed levels.
    pub fn observed_levels(&self) -> Vec<Vec<bool>> {
        (0..self.p)
            .map(|j| {
                let mut seen = vec![false; self.g[j]];
                for &c in self.column(j) {
                    seen[c as usize - 1] = true;
                }
                seen
            })
            .collect()
    }

    /// Apply per-predictor code maps (`maps[j][old_code-1] = new_code`),
    /// shrinking `g` to the new level counts.
    pub fn recode(&self, maps: &[Vec<u32>]) -> OrdinalDataset {
        assert_eq!(maps.len(), self.p);
        let g: Vec<usize> = maps
            .iter()
            .map(|m| *m.iter().max().expect("nonempty map") as usize)
            .collect();
        let mut codes = vec![0u32; self.n * self.p];
        for j in 0..self.p {
            for i in 0..self.n {
                codes[j * self.n + i] = maps[j][self.code(i, j) as usize - 1];
            }
        }
        OrdinalDataset {
            codes,
            n: self.n,
            p: self.p,
            g,
            y: self.y.clone(),
            labels: self.labels.clone(),
            names: self.names.clone(),
        }
    }

    pub fn with_names_labels(mut self, names: Vec<String>, labels: Vec<Vec<String>>) -> Self {
        assert_eq!(names.len(), self.p);
        assert_eq!(labels.len(), self.p);
        self.names = names;
        self.labels = labels;
        self
    }
}

/// A raw parsed table (e.g. from CSV): header row plus string cells.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Declared column roles for [`validate_dataset`].
#[derive(Debug, Clone)]
pub struct Schema {
    pub response: String,
    /// Empty means: every non-response column is a predictor.
    pub predictors: Vec<String>,
    pub response_kind: ResponseKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Auto,
    Continuous,
    Categorical,
}

/// Validate a raw table against a schema, remapping each predictor's codes to
/// 1..=G_j in the original order and retaining the labels for reporting.
pub fn validate_dataset(table: &RawTable, schema: &Schema) -> Result<OrdinalDataset> {
    let find = |name: &str| -> Result<usize> {
        table
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::UnknownColumn {
                column: name.to_string(),
            })
    };
    let y_col = find(&schema.response)?;
    let pred_cols: Vec<(String, usize)> = if schema.predictors.is_empty() {
        table
            .headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != y_col)
            .map(|(i, h)| (h.clone(), i))
            .collect()
    } else {
        schema
            .predictors
            .iter()
            .map(|name| find(name).map(|i| (name.clone(), i)))
            .collect::<Result<Vec<_>>>()?
    };
    if pred_cols.is_empty() {
        return Err(Error::Invalid("no predictor columns declared".into()));
    }
    let n = table.rows.len();
    if n < 2 {
        return Err(Error::Invalid(format!("need n >= 2 rows, got {n}")));
    }

    // Response.
    let y_cells: Vec<&str> = table
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let cell = r.get(y_col).map(|s| s.trim()).unwrap_or("");
            if cell.is_empty() {
                Err(Error::MissingValue {
                    column: schema.response.clone(),
                    row: i,
                })
            } else {
                Ok(cell)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let all_numeric = y_cells.iter().all(|c| c.parse::<f64>().is_ok());
    let y = match (schema.response_kind, all_numeric) {
        (ResponseKind::Continuous, false) => {
            return Err(Error::Invalid(format!(
                "response '{}' declared continuous but contains non-numeric values",
                schema.response
            )))
        }
        (ResponseKind::Continuous, true) | (ResponseKind::Auto, true) => Response::Continuous(
            y_cells
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let v: f64 = c.parse().unwrap();
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::MissingValue {
                            column: schema.response.clone(),
                            row: i,
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        _ => {
            let mut labels: Vec<String> = y_cells.iter().map(|c| c.to_string()).collect();
            labels.sort();
            labels.dedup();
            let codes = y_cells
                .iter()
                .map(|c| labels.binary_search(&c.to_string()).unwrap())
                .collect();
            Response::Categorical { codes, labels }
        }
    };

    // Predictors: integer codes, remapped order-preserving to 1..=G_j.
    let p = pred_cols.len();
    let mut rows: Vec<Vec<u32>> = vec![vec![0; p]; n];
    let mut g = vec![0usize; p];
    let mut labels: Vec<Vec<String>> = Vec::with_capacity(p);
    for (jp, (name, col)) in pred_cols.iter().enumerate() {
        let mut raw = Vec::with_capacity(n);
        for (i, r) in table.rows.iter().enumerate() {
            let cell = r.get(*col).map(|s| s.trim()).unwrap_or("");
            if cell.is_empty() {
                return Err(Error::MissingValue {
                    column: name.clone(),
                    row: i,
                });
            }
            let v: i64 = cell.parse().map_err(|_| Error::NonOrdinalColumn {
                column: name.clone(),
                reason: format!("value '{cell}' in row {i} is not an integer code"),
            })?;
            raw.push(v);
        }
        let mut distinct = raw.clone();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return Err(Error::NonOrdinalColumn {
                column: name.clone(),
                reason: format!("only {} distinct level(s)", distinct.len()),
            });
        }
        g[jp] = distinct.len();
        labels.push(distinct.iter().map(|v| v.to_string()).collect());
        for (i, v) in raw.iter().enumerate() {
            rows[i][jp] = distinct.binary_search(v).unwrap() as u32 + 1;
        }
    }
    let names = pred_cols.into_iter().map(|(name, _)| name).collect();
    Ok(OrdinalDataset::from_codes(&rows, g, y)?.with_names_labels(names, labels))
}

/// Per-predictor strictly increasing cut points; the conceptual outer bounds
/// at minus/plus infinity are implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSet {
    cuts: Vec<Vec<f64>>,
}

impl ThresholdSet {
    pub fn new(cuts: Vec<Vec<f64>>) -> Result<Self> {
        for (j, c) in cuts.iter().enumerate() {
            for (k, &v) in c.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Invalid(format!(
                        "threshold {k} of predictor {j} is not finite"
                    )));
                }
                if k > 0 && c[k - 1] >= v {
                    return Err(Error::Invalid(format!(
                        "thresholds of predictor {j} are not strictly increasing"
                    )));
                }
            }
        }
        Ok(ThresholdSet { cuts })
    }

    pub fn p(&self) -> usize {
        self.cuts.len()
    }

    pub fn cuts(&self, j: usize) -> &[f64] {
        &self.cuts[j]
    }

    /// Cell bounds of code `c` (1-based) on predictor `j`, with infinite
    /// sentinels at the ends.
    #[inline]
    pub fn bounds(&self, j: usize, c: u32) -> (f64, f64) {
        let cuts = &self.cuts[j];
        let c = c as usize;
        let lower = if c == 1 { f64::NEG_INFINITY } else { cuts[c - 2] };
        let upper = if c == cuts.len() + 1 {
            f64::INFINITY
        } else {
            cuts[c - 1]
        };
        (lower, upper)
    }

    /// Code whose cell contains `z`.
    pub fn discretize(&self, j: usize, z: f64) -> u32 {
        let cuts = &self.cuts[j];
        let mut c = 1u32;
        for &t in cuts {
            if z >= t {
                c += 1;
            } else {
                break;
            }
        }
        c
    }
}

/// Parameter bundle of the inverse regression model: error covariance
/// `delta` (SPD, unit diagonal), semi-orthogonal basis `alpha` (p x d), and
/// full-rank coordinate matrix `xi` (d x r).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub delta: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub xi: DMatrix<f64>,
}

impl ModelParams {
    pub fn new(delta: DMatrix<f64>, alpha: DMatrix<f64>, xi: DMatrix<f64>) -> Result<Self> {
        let params = ModelParams { delta, alpha, xi };
        params.validate()?;
        Ok(params)
    }

    pub fn p(&self) -> usize {
        self.delta.nrows()
    }

    pub fn d(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn r(&self) -> usize {
        self.xi.ncols()
    }

    /// Coefficient matrix of the latent inverse regression on the centered
    /// basis: `Psi = Delta alpha xi` (p x r).
    pub fn psi(&self) -> DMatrix<f64> {
        &self.delta * &self.alpha * &self.xi
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.delta.nrows();
        let d = self.alpha.ncols();
        let r = self.xi.ncols();
        if self.delta.ncols() != p || self.alpha.nrows() != p || self.xi.nrows() != d {
            return Err(Error::Invalid("inconsistent parameter dimensions".into()));
        }
        if d > r.min(p) {
            return Err(Error::Invalid(format!("d = {d} exceeds min(r, p) = {}", r.min(p))));
        }
        if (&self.delta - self.delta.transpose()).abs().max() > 1e-10 {
            return Err(Error::Invalid("delta is not symmetric".into()));
        }
        for j in 0..p {
            if (self.delta[(j, j)] - 1.0).abs() > 1e-10 {
                return Err(Error::Invalid(format!(
                    "delta diagonal entry {j} is {} (must be 1)",
                    self.delta[(j, j)]
                )));
            }
        }
        let (eigs, _) = linalg::sym_eigen_desc(&self.delta);
        if eigs[p - 1] <= 0.0 {
            return Err(Error::Invalid(format!(
                "delta is not positive definite (min eigenvalue {})",
                eigs[p - 1]
            )));
        }
        if d > 0 {
            let gram = self.alpha.transpose() * &self.alpha;
            if (gram - DMatrix::identity(d, d)).abs().max() > 1e-10 {
                return Err(Error::Invalid("alpha is not semi-orthogonal".into()));
            }
            let svd = self.xi.clone().svd(false, false);
            let max_sv = svd.singular_values.max();
            let min_sv = svd.singular_values.min();
            // The no-signal limit legitimately returns xi ~ 0; the rank
            // requirement applies only away from that degenerate point.
            if max_sv > 1e-8 && !(min_sv > 1e-10 * max_sv) {
                return Err(Error::Invalid(format!(
                    "xi is rank deficient (singular values {min_sv:.3e} .. {max_sv:.3e})"
                )));
            }
        }
        Ok(())
    }
}

/// One response slice of the Bayes mixture used by the reduction: the mean
/// centered-basis value of its training observations and its prior mass.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSlice {
    pub fbar: DVector<f64>,
    pub prior: f64,
    pub label: String,
}

/// Response slices for posterior weighting, captured at fit time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Mixture {
    pub slices: Vec<MixtureSlice>,
}

/// A converged fit: parameters, thresholds, basis, diagnostics, and the
/// plumbing needed to reduce out-of-sample observations.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub params: ModelParams,
    pub thresholds: ThresholdSet,
    pub basis: BasisSpec,
    pub q_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub backend: crate::tmvn::Backend,
    pub seed: u64,
    /// Sample size the model was fit on.
    pub n: usize,
    /// Final E-step second-moment matrix (diagnostic; drives the
    /// likelihood-ratio statistic).
    pub s: DMatrix<f64>,
    /// Final fitted covariance (diagnostic).
    pub s_fit: DMatrix<f64>,
    /// Per-predictor map from dataset code to fitted code, identity unless
    /// unobserved levels were merged into a neighbor.
    pub merges: Vec<Vec<u32>>,
    pub mixture: Mixture,
    pub response_kind: ResponseKind,
    /// Predictor names, in model column order.
    pub names: Vec<String>,
    /// Original level labels per predictor (dataset code space).
    pub labels: Vec<Vec<String>>,
}

impl FittedModel {
    /// Translate original labels into dataset codes using the stored label
    /// maps (for out-of-sample rows read from text).
    pub fn codes_from_labels(&self, row: &[String]) -> Result<Vec<u32>> {
        if row.len() != self.labels.len() {
            return Err(Error::Invalid(format!(
                "expected {} predictor values, got {}",
                self.labels.len(),
                row.len()
            )));
        }
        row.iter()
            .zip(self.labels.iter())
            .zip(self.names.iter())
            .map(|((cell, labels), name)| {
                labels
                    .iter()
                    .position(|l| l == cell.trim())
                    .map(|i| i as u32 + 1)
                    .ok_or_else(|| Error::Invalid(format!(
                        "unknown level '{cell}' for predictor '{name}'"
                    )))
            })
            .collect()
    }

    /// Apply the recorded level merges to a raw code vector.
    pub fn map_codes(&self, x: &[u32]) -> Vec<u32> {
        x.iter()
            .enumerate()
            .map(|(j, &c)| self.merges[j][c as usize - 1])
            .collect()
    }

    pub fn d(&self) -> usize {
        self.params.d()
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.converged && self.q_trace.is_empty() {
            return Err(Error::Invalid("converged fit with empty q trace".into()));
        }
        Ok(())
    }
}

/// Fitting-function specification for `f_Y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisSpec {
    Polynomial { degree: usize },
    SliceIndicator { slices: usize },
}

impl BasisSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BasisSpec::Polynomial { degree } if degree < 1 => {
                Err(Error::Invalid("polynomial degree must be >= 1".into()))
            }
            BasisSpec::SliceIndicator { slices } if slices < 2 => {
                Err(Error::Invalid("slice count must be >= 2".into()))
            }
            _ => Ok(()),
        }
    }

    /// Basis dimension r.
    pub fn r(&self) -> usize {
        match *self {
            BasisSpec::Polynomial { degree } => degree,
            BasisSpec::SliceIndicator { slices } => slices - 1,
        }
    }
}

/// Column-centered n x r basis matrix built from the response.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    f: DMatrix<f64>,
}

impl BasisMatrix {
    /// Wrap an already-built (centered) basis matrix.
    pub fn from_matrix(f: DMatrix<f64>) -> Self {
        BasisMatrix { f }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.f
    }

    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    pub fn r(&self) -> usize {
        self.f.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.f.row(i).transpose()
    }
}

/// Assign each observation to a response slice. Categorical responses use
/// their classes directly; continuous responses are cut at equal-frequency
/// quantiles with ties going to the lower bin.
pub fn slice_assignments(y: &Response, h: usize) -> Result<(Vec<usize>, Vec<String>)> {
    match y {
        Response::Categorical { codes, labels } => {
            if h != labels.len() {
                return Err(Error::Invalid(format!(
                    "slice count {h} != {} response classes",
                    labels.len()
                )));
            }
            Ok((codes.clone(), labels.clone()))
        }
        Response::Continuous(v) => {
            let n = v.len();
            if h > n {
                return Err(Error::Invalid(format!("slice count {h} exceeds n = {n}")));
            }
            let mut sorted = v.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let cuts: Vec<f64> = (1..h)
                .map(|k| lower_quantile(&sorted, k as f64 / h as f64))
                .collect();
            let assign: Vec<usize> = v
                .iter()
                .map(|&yi| cuts.iter().filter(|&&c| c < yi).count())
                .collect();
            let mut counts = vec![0usize; h];
            for &s in &assign {
                counts[s] += 1;
            }
            if let Some(empty) = counts.iter().position(|&c| c == 0) {
                return Err(Error::InvalidSlice(format!(
                    "slice {empty} of {h} received no observations (heavy ties?)"
                )));
            }
            let labels = (0..h).map(|s| format!("q{}", s + 1)).collect();
            Ok((assign, labels))
        }
    }
}

/// Build the centered basis matrix F with rows `f_{y_i} - mean(f_y)`.
pub fn build_basis(y: &Response, spec: &BasisSpec) -> Result<BasisMatrix> {
    spec.validate()?;
    let n = y.len();
    if n < 2 {
        return Err(Error::Invalid("need n >= 2 to build a basis".into()));
    }
    let r = spec.r();
    let mut f = DMatrix::zeros(n, r);
    match (spec, y) {
        (BasisSpec::Polynomial { degree }, Response::Continuous(v)) => {
            for (i, &yi) in v.iter().enumerate() {
                let mut pw = 1.0;
                for k in 0..*degree {
                    pw *= yi;
                    f[(i, k)] = pw;
                }
            }
        }
        (BasisSpec::Polynomial { .. }, Response::Categorical { .. }) => {
            return Err(Error::Invalid(
                "polynomial basis requires a continuous response".into(),
            ))
        }
        (BasisSpec::SliceIndicator { slices }, _) => {
            let (assign, _) = slice_assignments(y, *slices)?;
            for (i, &s) in assign.iter().enumerate() {
                if s < r {
                    f[(i, s)] = 1.0;
                }
            }
        }
    }
    // Center columns.
    for k in 0..r {
        let mean = f.column(k).sum() / n as f64;
        for i in 0..n {
            f[(i, k)] -= mean;
        }
    }
    // F^T F must be invertible.
    let svd = f.clone().svd(false, false);
    let max_sv = svd.singular_values.max();
    let min_sv = svd.singular_values.min();
    if !(max_sv > 0.0) || min_sv <= 1e-10 * max_sv {
        return Err(Error::DegenerateBasis(format!(
            "centered basis is numerically rank deficient (singular values {min_sv:.3e} .. {max_sv:.3e})"
        )));
    }
    Ok(BasisMatrix { f })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn polynomial_identity_basis_centering() {
        let y = Response::Continuous(vec![1.0, 2.0, 3.0, 4.0]);
        let f = build_basis(&y, &BasisSpec::Polynomial { degree: 1 }).unwrap();
        let expect = [-1.5, -0.5, 0.5, 1.5];
        for (i, e) in expect.iter().enumerate() {
            assert_abs_diff_eq!(f.matrix()[(i, 0)], *e, epsilon = 1e-14);
        }
    }

    #[test]
    fn categorical_indicator_centering() {
        let y = Response::Categorical {
            codes: vec![0, 0, 1, 1],
            labels: vec!["a".into(), "b".into()],
        };
        let f = build_basis(&y, &BasisSpec::SliceIndicator { slices: 2 }).unwrap();
        let expect = [0.5, 0.5, -0.5, -0.5];
        for (i, e) in expect.iter().enumerate() {
            assert_abs_diff_eq!(f.matrix()[(i, 0)], *e, epsilon = 1e-14);
        }
    }

    #[test]
    fn quadratic_basis_on_normal_draws_is_well_conditioned() {
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let v: Vec<f64> = (0..100)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let y = Response::Continuous(v);
        let f = build_basis(&y, &BasisSpec::Polynomial { degree: 2 }).unwrap();
        for k in 0..2 {
            assert!(f.matrix().column(k).sum().abs() < 1e-12 * 100.0);
        }
        let ftf = f.matrix().transpose() * f.matrix();
        assert!(ftf.determinant() > 0.0);
    }

    #[test]
    fn constant_response_degenerate_basis() {
        let y = Response::Continuous(vec![2.0; 10]);
        let err = build_basis(&y, &BasisSpec::Polynomial { degree: 1 }).unwrap_err();
        assert!(matches!(err, Error::DegenerateBasis(_)));
    }

    fn table(rows: &[&[&str]], headers: &[&str]) -> RawTable {
        RawTable {
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: rows
                .iter()
                .map(|r| r.iter().map(|s| s.to_string()).collect())
                .collect(),
        }
    }

    fn schema() -> Schema {
        Schema {
            response: "y".into(),
            predictors: vec![],
            response_kind: ResponseKind::Auto,
        }
    }

    #[test]
    fn codes_remapped_order_preserving() {
        let t = table(
            &[
                &["0.1", "0", "10"],
                &["0.2", "1", "20"],
                &["0.3", "2", "20"],
                &["0.4", "1", "30"],
            ],
            &["y", "a", "b"],
        );
        let ds = validate_dataset(&t, &schema()).unwrap();
        assert_eq!(ds.g(), &[3, 3]);
        assert_eq!(ds.column(0), &[1, 2, 3, 2]);
        assert_eq!(ds.column(1), &[1, 2, 2, 3]);
        assert_eq!(ds.labels()[1], vec!["10", "20", "30"]);
    }

    #[test]
    fn single_level_column_rejected() {
        let t = table(&[&["1", "5"], &["2", "5"], &["3", "5"]], &["y", "a"]);
        let err = validate_dataset(&t, &schema()).unwrap_err();
        assert!(matches!(err, Error::NonOrdinalColumn { .. }));
    }

    #[test]
    fn unknown_and_missing_are_reported() {
        let t = table(&[&["1", "5"], &["2", "6"]], &["y", "a"]);
        let bad = Schema {
            response: "z".into(),
            ..schema()
        };
        assert!(matches!(
            validate_dataset(&t, &bad).unwrap_err(),
            Error::UnknownColumn { .. }
        ));
        let t2 = table(&[&["1", "5"], &["2", ""]], &["y", "a"]);
        assert!(matches!(
            validate_dataset(&t2, &schema()).unwrap_err(),
            Error::MissingValue { .. }
        ));
    }

    #[test]
    fn recode_invariance_is_structural() {
        let t1 = table(
            &[&["1", "0", "7"], &["2", "3", "8"], &["3", "9", "7"]],
            &["y", "a", "b"],
        );
        // Strictly increasing relabelings of both predictors.
        let t2 = table(
            &[&["1", "-5", "100"], &["2", "0", "250"], &["3", "17", "100"]],
            &["y", "a", "b"],
        );
        let d1 = validate_dataset(&t1, &schema()).unwrap();
        let d2 = validate_dataset(&t2, &schema()).unwrap();
        assert_eq!(d1.codes, d2.codes);
        assert_eq!(d1.g, d2.g);
    }

    #[test]
    fn threshold_bounds_with_sentinels() {
        let t = ThresholdSet::new(vec![vec![-0.5, 0.5]]).unwrap();
        assert_eq!(t.bounds(0, 1), (f64::NEG_INFINITY, -0.5));
        assert_eq!(t.bounds(0, 2), (-0.5, 0.5));
        assert_eq!(t.bounds(0, 3), (0.5, f64::INFINITY));
        assert_eq!(t.discretize(0, -1.0), 1);
        assert_eq!(t.discretize(0, 0.0), 2);
        assert_eq!(t.discretize(0, 0.5), 3);
        assert!(ThresholdSet::new(vec![vec![0.5, 0.5]]).is_err());
        assert!(ThresholdSet::new(vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn slice_ties_go_lower() {
        let y = Response::Continuous(vec![1.0, 1.0, 2.0, 3.0]);
        let (assign, _) = slice_assignments(&y, 2).unwrap();
        assert_eq!(assign, vec![0, 0, 1, 1]);
    }
}
