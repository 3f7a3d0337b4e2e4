//! Run configuration: optional config file (JSON or TOML) merged with
//! command-line flags; flags win. Unknown keys are rejected.

use ordred::em::FitOptions;
use ordred::model::BasisSpec;
use ordred::tmvn::Backend;
use ordred::{Error, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub response: Option<String>,
    pub predictors: Option<Vec<String>>,
    pub response_kind: Option<String>,
    pub basis: Option<String>,
    pub d: Option<usize>,
    pub backend: Option<String>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub lambda: Option<f64>,
    pub mixture_slices: Option<usize>,
}

pub fn load_config(path: Option<&str>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = std::fs::read_to_string(path)?;
    if path.ends_with(".json") {
        serde_json::from_str(&text).map_err(Error::from)
    } else {
        toml::from_str(&text).map_err(|e| Error::Invalid(format!("config parse error: {e}")))
    }
}

/// Parse "poly:2" / "polynomial:2" / "slice:5" basis descriptions.
pub fn parse_basis(text: &str) -> Result<BasisSpec> {
    let (kind, arg) = text
        .split_once(':')
        .ok_or_else(|| Error::Invalid(format!("basis '{text}' must look like poly:2 or slice:5")))?;
    let value: usize = arg
        .parse()
        .map_err(|_| Error::Invalid(format!("bad basis parameter '{arg}'")))?;
    let spec = match kind {
        "poly" | "polynomial" => BasisSpec::Polynomial { degree: value },
        "slice" | "slices" => BasisSpec::SliceIndicator { slices: value },
        _ => return Err(Error::Invalid(format!("unknown basis kind '{kind}'"))),
    };
    spec.validate()?;
    Ok(spec)
}

/// Parse "approx" / "approximate" / "exact" / "exact:16384".
pub fn parse_backend(text: &str) -> Result<Backend> {
    match text {
        "approx" | "approximate" => Ok(Backend::Approximate),
        "exact" => Ok(Backend::exact_default()),
        _ => {
            if let Some(points) = text.strip_prefix("exact:") {
                let points: usize = points
                    .parse()
                    .map_err(|_| Error::Invalid(format!("bad point count in '{text}'")))?;
                Ok(Backend::Exact { points })
            } else {
                Err(Error::Invalid(format!("unknown backend '{text}'")))
            }
        }
    }
}

/// Seed resolution order: flag, config file, ORDRED_SEED, then 0.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = file {
        return Ok(s);
    }
    match std::env::var("ORDRED_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| Error::Invalid(format!("ORDRED_SEED = '{v}' is not an integer"))),
        Err(_) => Ok(0),
    }
}

pub struct ResolvedFit {
    pub basis: BasisSpec,
    pub options: FitOptions,
}

#[allow(clippy::too_many_arguments)]
pub fn resolve_fit_options(
    file: &FileConfig,
    basis: Option<&str>,
    backend: Option<&str>,
    seed: Option<u64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    lambda: Option<f64>,
    mixture_slices: Option<usize>,
) -> Result<ResolvedFit> {
    let basis_text = basis
        .map(str::to_string)
        .or_else(|| file.basis.clone())
        .unwrap_or_else(|| "poly:2".to_string());
    let backend_text = backend
        .map(str::to_string)
        .or_else(|| file.backend.clone())
        .unwrap_or_else(|| "approximate".to_string());
    let options = FitOptions {
        backend: parse_backend(&backend_text)?,
        tol: tol.or(file.tol).unwrap_or(1e-6),
        max_iter: max_iter.or(file.max_iter).unwrap_or(200),
        seed: resolve_seed(seed, file.seed)?,
        lambda: lambda.or(file.lambda),
        mixture_slices: mixture_slices.or(file.mixture_slices).unwrap_or(10),
    };
    if !(options.tol > 0.0) {
        return Err(Error::Invalid(format!("tolerance {} must be > 0", options.tol)));
    }
    if options.max_iter == 0 {
        return Err(Error::Invalid("max_iter must be >= 1".into()));
    }
    Ok(ResolvedFit {
        basis: parse_basis(&basis_text)?,
        options,
    })
}
