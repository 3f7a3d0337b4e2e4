use std::time::Instant;

use clap::Args;
use ordred::em;
use ordred::model::validate_dataset;
use ordred::persist;
use ordred::regularize::{self, Criterion};
use ordred::Result;

use crate::config::{load_config, resolve_fit_options};
use crate::io::{read_table, schema_from};

#[derive(Args)]
pub struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long = "in")]
    pub input: String,
    /// Response column name.
    #[arg(long)]
    pub response: Option<String>,
    /// Predictor column names (default: every other column).
    #[arg(long, value_delimiter = ',')]
    pub predictors: Option<Vec<String>>,
    /// Force the response type: auto, continuous, categorical.
    #[arg(long)]
    pub response_kind: Option<String>,
    /// Config file (JSON or TOML); flags override its values.
    #[arg(long)]
    pub config: Option<String>,
    /// Reduction dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Basis: poly:<degree> or slice:<h>.
    #[arg(long)]
    pub basis: Option<String>,
    /// Moment backend: approximate, exact, or exact:<points>.
    #[arg(long)]
    pub backend: Option<String>,
    /// Group-lasso penalty weight (fixed value).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Explicit lambda grid (comma separated) for --select.
    #[arg(long, value_delimiter = ',')]
    pub lambda_grid: Option<Vec<f64>>,
    /// Select lambda along a path by criterion: aic, bic, or cv.
    #[arg(long)]
    pub select: Option<String>,
    /// Folds for --select cv.
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Slice count for the reduction mixture on a continuous response.
    #[arg(long)]
    pub mixture_slices: Option<usize>,
    /// Output model path.
    #[arg(long, default_value = "model.json")]
    pub out: String,
    /// Fit report path.
    #[arg(long, default_value = "report.json")]
    pub report: String,
    /// Omit wall-clock timings from the report (for byte-wise comparisons).
    #[arg(long)]
    pub no_timing: bool,
}

pub fn run(args: FitArgs) -> Result<()> {
    let file = load_config(args.config.as_deref())?;
    let response = args
        .response
        .clone()
        .or_else(|| file.response.clone())
        .ok_or_else(|| ordred::Error::Invalid("no response column named".into()))?;
    let predictors = args
        .predictors
        .clone()
        .or_else(|| file.predictors.clone());
    let kind = args
        .response_kind
        .clone()
        .or_else(|| file.response_kind.clone());
    let schema = schema_from(&response, predictors.as_deref(), kind.as_deref())?;
    let table = read_table(&args.input)?;
    let data = validate_dataset(&table, &schema)?;

    let resolved = resolve_fit_options(
        &file,
        args.basis.as_deref(),
        args.backend.as_deref(),
        args.seed,
        args.tol,
        args.max_iter,
        args.lambda,
        args.mixture_slices,
    )?;
    let d = args.d.or(file.d).unwrap_or(1);

    let start = Instant::now();
    let (model, selection) = match &args.select {
        Some(criterion) => {
            let criterion = match criterion.as_str() {
                "aic" => Criterion::Aic,
                "bic" => Criterion::Bic,
                "cv" => Criterion::Cv { folds: args.folds },
                other => {
                    return Err(ordred::Error::Invalid(format!(
                        "unknown selection criterion '{other}'"
                    )))
                }
            };
            let grid = match &args.lambda_grid {
                Some(g) => g.clone(),
                None => {
                    // Default path from the lambda_max of an unpenalized fit.
                    let base = em::fit(&data, &resolved.basis, d, &resolved.options)?;
                    let lmax = {
                        let grad = 2.0 * &base.s_fit * &base.params.alpha;
                        (0..grad.nrows())
                            .map(|i| grad.row(i).norm())
                            .fold(0.0_f64, f64::max)
                    };
                    regularize::default_grid(lmax, 30)
                }
            };
            let reg = regularize::select_lambda(
                &data,
                &resolved.basis,
                d,
                &grid,
                criterion,
                &resolved.options,
            )?;
            (reg.model, Some((reg.lambda, reg.active_set, reg.criterion_trace)))
        }
        None => {
            let model = em::fit(&data, &resolved.basis, d, &resolved.options)?;
            let selection = args.lambda.map(|l| {
                (
                    l,
                    ordred::regularize::active_rows(&model.params.alpha),
                    Vec::new(),
                )
            });
            (model, selection)
        }
    };
    let elapsed = start.elapsed();

    std::fs::write(&args.out, persist::to_json(&model)?)?;

    let mut report = serde_json::json!({
        "input": args.input,
        "n": model.n,
        "p": model.params.p(),
        "d": model.params.d(),
        "r": model.params.r(),
        "backend": model.backend,
        "seed": model.seed,
        "converged": model.converged,
        "iterations": model.iterations,
        "q_trace": model.q_trace,
        "merged_levels": model.merges.iter().enumerate()
            .filter(|(j, m)| (*m.iter().max().unwrap() as usize) < model.labels[*j].len())
            .map(|(j, _)| model.names[j].clone()).collect::<Vec<_>>(),
    });
    if let Some((lambda, active, trace)) = selection {
        report["lambda"] = serde_json::json!(lambda);
        report["active_set"] = serde_json::json!(
            active.iter().map(|&i| model.names[i].clone()).collect::<Vec<_>>()
        );
        if !trace.is_empty() {
            report["criterion_trace"] = serde_json::json!(trace);
        }
    }
    if !args.no_timing {
        report["elapsed_seconds"] = serde_json::json!(elapsed.as_secs_f64());
    }
    std::fs::write(&args.report, serde_json::to_string_pretty(&report)?)?;
    println!(
        "fit: n={} p={} d={} converged={} iterations={} -> {}",
        model.n,
        model.params.p(),
        model.params.d(),
        model.converged,
        model.iterations,
        args.out
    );
    Ok(())
}
