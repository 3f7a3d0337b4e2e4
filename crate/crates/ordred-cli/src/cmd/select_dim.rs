use clap::Args;
use ordred::dimension::{self, Diagnostics, SelectionMethod};
use ordred::model::validate_dataset;
use ordred::reduce::ReduceOptions;
use ordred::Result;

use crate::config::{load_config, resolve_fit_options};
use crate::io::{read_table, schema_from};

#[derive(Args)]
pub struct SelectDimArgs {
    #[arg(long = "in")]
    pub input: String,
    #[arg(long)]
    pub response: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub predictors: Option<Vec<String>>,
    #[arg(long)]
    pub response_kind: Option<String>,
    #[arg(long)]
    pub config: Option<String>,
    /// Method: perm, cv, aic, bic.
    #[arg(long, default_value = "perm")]
    pub method: String,
    /// Permutation replicates.
    #[arg(long, default_value_t = 500)]
    pub b: usize,
    /// Significance level for the permutation test.
    #[arg(long, default_value_t = 0.01)]
    pub level: f64,
    /// Folds for cross-validation.
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long)]
    pub basis: Option<String>,
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

pub fn run(args: SelectDimArgs) -> Result<()> {
    let file = load_config(args.config.as_deref())?;
    let response = args
        .response
        .clone()
        .or_else(|| file.response.clone())
        .ok_or_else(|| ordred::Error::Invalid("no response column named".into()))?;
    let predictors = args.predictors.clone().or_else(|| file.predictors.clone());
    let kind = args
        .response_kind
        .clone()
        .or_else(|| file.response_kind.clone());
    let schema = schema_from(&response, predictors.as_deref(), kind.as_deref())?;
    let data = validate_dataset(&read_table(&args.input)?, &schema)?;
    let resolved = resolve_fit_options(
        &file,
        args.basis.as_deref(),
        args.backend.as_deref(),
        args.seed,
        args.tol,
        args.max_iter,
        None,
        None,
    )?;

    let decision = match args.method.as_str() {
        "perm" | "permutation" => dimension::permutation_select(
            &data,
            &resolved.basis,
            args.b,
            args.level,
            &resolved.options,
            &ReduceOptions::default(),
        )?,
        "cv" => dimension::cv_select(&data, &resolved.basis, args.folds, &resolved.options)?,
        "aic" => dimension::ic_select(&data, &resolved.basis, SelectionMethod::Aic, &resolved.options)?,
        "bic" => dimension::ic_select(&data, &resolved.basis, SelectionMethod::Bic, &resolved.options)?,
        other => {
            return Err(ordred::Error::Invalid(format!(
                "unknown method '{other}' (expected perm, cv, aic, bic)"
            )))
        }
    };

    let diag = match &decision.diagnostics {
        Diagnostics::Permutation(rows) => serde_json::json!(rows
            .iter()
            .map(|(m, stat, p)| serde_json::json!({"m": m, "statistic": stat, "p_value": p}))
            .collect::<Vec<_>>()),
        Diagnostics::InformationCriterion(rows) => serde_json::json!(rows
            .iter()
            .map(|(d, q, c)| serde_json::json!({"d": d, "q": q, "criterion": c}))
            .collect::<Vec<_>>()),
        Diagnostics::CrossValidation(rows) => serde_json::json!(rows
            .iter()
            .map(|(d, e, se)| serde_json::json!({"d": d, "cv_error": e, "std_error": se}))
            .collect::<Vec<_>>()),
    };
    let out = serde_json::json!({
        "d_hat": decision.d_hat,
        "method": decision.method,
        "diagnostics": diag,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
