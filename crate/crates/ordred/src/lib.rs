//! Supervised dimension reduction for ordinal predictors.
//!
//! Fits a latent-Gaussian inverse regression model to ordered-categorical
//! predictors by an approximate EM algorithm, producing a supervised
//! low-dimensional reduction `R(x) = E(alpha' Z | X = x)`, with group-lasso
//! variable selection, dimension inference, and a simulation harness.

pub mod dimension;
pub mod em;
pub mod error;
pub mod linalg;
pub mod model;
pub mod normal;
pub mod numeric;
pub mod persist;
pub mod pfc;
pub mod predict;
pub mod reduce;
pub mod regularize;
pub mod simulate;
pub mod tmvn;

pub use em::{fit, EStepSummary, FitOptions};
pub use error::{Error, Result};
pub use model::{
    BasisMatrix, BasisSpec, FittedModel, ModelParams, OrdinalDataset, RawTable, Response,
    ResponseKind, Schema, ThresholdSet,
};
pub use tmvn::{Backend, ConditionalMoments, Rectangle};
