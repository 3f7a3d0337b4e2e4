use std::time::Instant;

use clap::Args;
use ordred::dimension::{self, SelectionMethod};
use ordred::em::{fit, FitOptions};
use ordred::model::{build_basis, BasisSpec};
use ordred::numeric::derive_seed;
use ordred::pfc::fit_pfc;
use ordred::reduce::ReduceOptions;
use ordred::regularize::{self, Criterion};
use ordred::simulate::{generate, selection_metrics, subspace_angle, ErrorKind, SimDesign};
use ordred::tmvn::Backend;
use ordred::{Error, Result};
use rayon::prelude::*;

use crate::io::{fmt_f64, write_csv};

#[derive(Args)]
pub struct BenchmarkArgs {
    /// One of: validate-estep, angle-comparison, choose-d, variable-selection.
    #[arg(long)]
    pub name: String,
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// Sample size override (experiment-specific default otherwise).
    #[arg(long)]
    pub n: Option<usize>,
    /// Covariance coupling strength for variable-selection.
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    /// Permutation replicates for choose-d.
    #[arg(long, default_value_t = 200)]
    pub b: usize,
    #[arg(long, default_value_t = 0.01)]
    pub level: f64,
    #[arg(long, default_value_t = 10)]
    pub folds: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-replicate results CSV.
    #[arg(long)]
    pub out: String,
    /// Omit timing columns.
    #[arg(long)]
    pub no_timing: bool,
}

pub fn run(args: BenchmarkArgs) -> Result<()> {
    match args.name.as_str() {
        "validate-estep" => validate_estep(&args),
        "angle-comparison" => angle_comparison(&args),
        "choose-d" => choose_d(&args),
        "variable-selection" => variable_selection(&args),
        other => Err(Error::Invalid(format!(
            "unknown benchmark '{other}' (expected validate-estep, angle-comparison, choose-d, variable-selection)"
        ))),
    }
}

/// Approximate vs exact E-step on the small validation design.
fn validate_estep(args: &BenchmarkArgs) -> Result<()> {
    let spec = BasisSpec::Polynomial { degree: 2 };
    let rows: Result<Vec<Vec<String>>> = (0..args.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(args.seed, 0x6265, rep as u64);
            let mut design = SimDesign::validate_estep(seed);
            if let Some(n) = args.n {
                design.n = n;
            }
            let (data, truth) = generate(&design)?;
            let mut row = vec![rep.to_string()];
            for backend in [Backend::Approximate, Backend::exact_default()] {
                let opts = FitOptions { backend, seed, ..Default::default() };
                let t0 = Instant::now();
                let model = fit(&data, &spec, 2, &opts)?;
                let secs = t0.elapsed().as_secs_f64();
                let angle = subspace_angle(&model.params.alpha, &truth.alpha)?;
                row.push(fmt_f64(angle));
                if !args.no_timing {
                    row.push(format!("{secs:.4}"));
                }
            }
            Ok(row)
        })
        .collect();
    let rows = rows?;
    let mut header = vec!["rep".to_string(), "angle_approx".to_string()];
    if !args.no_timing {
        header.push("secs_approx".to_string());
    }
    header.push("angle_exact".to_string());
    if !args.no_timing {
        header.push("secs_exact".to_string());
    }
    write_csv(&args.out, &header, &rows)?;

    let col = |name: &str| -> Vec<f64> {
        let idx = header.iter().position(|h| h == name).unwrap();
        rows.iter().filter_map(|r| r[idx].parse().ok()).collect()
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let ma = mean(&col("angle_approx"));
    let me = mean(&col("angle_exact"));
    println!("validate-estep ({} reps):", args.reps);
    println!("  mean angle approximate = {ma:.2} deg");
    println!("  mean angle exact       = {me:.2} deg");
    println!("  mean difference        = {:.2} deg", ma - me);
    if !args.no_timing {
        let ta = mean(&col("secs_approx"));
        let te = mean(&col("secs_exact"));
        println!("  speed ratio exact/approx = {:.0}x", te / ta);
    }
    Ok(())
}

/// Ordinal estimator vs naive PFC on the p = 20 performance design.
fn angle_comparison(args: &BenchmarkArgs) -> Result<()> {
    let spec = BasisSpec::Polynomial { degree: 2 };
    let n = args.n.unwrap_or(500);
    let rows: Result<Vec<Vec<String>>> = (0..args.reps)
        .into_par_iter()
        .flat_map(|rep| {
            [ErrorKind::Normal, ErrorKind::ChiSquared5]
                .into_par_iter()
                .map(move |kind| (rep, kind))
        })
        .map(|(rep, kind)| {
            let seed = derive_seed(args.seed, 0x616e67, (rep * 2 + matches!(kind, ErrorKind::ChiSquared5) as usize) as u64);
            let design = SimDesign::performance(n, kind, seed);
            let (data, truth) = generate(&design)?;
            let f = build_basis(data.y(), &spec)?;
            let naive = fit_pfc(&data.codes_as_real(), &f, 2)?;
            let angle_pfc = subspace_angle(&naive.alpha, &truth.alpha)?;
            let opts = FitOptions { seed, ..Default::default() };
            let model = fit(&data, &spec, 2, &opts)?;
            let angle_ord = subspace_angle(&model.params.alpha, &truth.alpha)?;
            Ok(vec![
                rep.to_string(),
                match kind {
                    ErrorKind::Normal => "normal".into(),
                    ErrorKind::ChiSquared5 => "chi2".into(),
                },
                fmt_f64(angle_pfc),
                fmt_f64(angle_ord),
            ])
        })
        .collect();
    let rows = rows?;
    let header: Vec<String> = ["rep", "errors", "angle_pfc", "angle_pfcord"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_csv(&args.out, &header, &rows)?;
    for kind in ["normal", "chi2"] {
        let sel: Vec<&Vec<String>> = rows.iter().filter(|r| r[1] == kind).collect();
        let mean = |idx: usize| {
            sel.iter().map(|r| r[idx].parse::<f64>().unwrap()).sum::<f64>() / sel.len() as f64
        };
        println!(
            "angle-comparison [{kind}]: PFC = {:.2} deg, PFCord = {:.2} deg, difference = {:.2} deg",
            mean(2),
            mean(3),
            mean(2) - mean(3)
        );
    }
    Ok(())
}

/// Dimension-selection accuracy per method on the p = 10 study design.
fn choose_d(args: &BenchmarkArgs) -> Result<()> {
    let spec = BasisSpec::Polynomial { degree: 4 };
    let n = args.n.unwrap_or(300);
    let rows: Result<Vec<Vec<String>>> = (0..args.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(args.seed, 0x6364, rep as u64);
            let design = SimDesign::dimension_study(n, seed);
            let (data, _) = generate(&design)?;
            let opts = FitOptions { seed, ..Default::default() };
            let perm = dimension::permutation_select(
                &data,
                &spec,
                args.b,
                args.level,
                &opts,
                &ReduceOptions::default(),
            )?;
            let cv = dimension::cv_select(&data, &spec, args.folds, &opts)?;
            let aic = dimension::ic_select(&data, &spec, SelectionMethod::Aic, &opts)?;
            let bic = dimension::ic_select(&data, &spec, SelectionMethod::Bic, &opts)?;
            Ok(vec![
                rep.to_string(),
                perm.d_hat.to_string(),
                cv.d_hat.to_string(),
                aic.d_hat.to_string(),
                bic.d_hat.to_string(),
            ])
        })
        .collect();
    let rows = rows?;
    let header: Vec<String> = ["rep", "perm", "cv", "aic", "bic"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_csv(&args.out, &header, &rows)?;
    println!("choose-d ({} reps, n = {n}, B = {}, level = {}):", args.reps, args.b, args.level);
    for (idx, name) in [(1, "perm"), (2, "cv"), (3, "aic"), (4, "bic")] {
        let mut counts = [0usize; 5];
        for r in &rows {
            let d: usize = r[idx].parse().unwrap();
            counts[d.min(4)] += 1;
        }
        let frac: Vec<String> = counts
            .iter()
            .map(|&c| format!("{:.3}", c as f64 / rows.len() as f64))
            .collect();
        println!("  {name:>4}: d=0..4 fractions = [{}]", frac.join(", "));
    }
    Ok(())
}

/// Regularized variable selection on the sparse design.
fn variable_selection(args: &BenchmarkArgs) -> Result<()> {
    let spec = BasisSpec::Polynomial { degree: 2 };
    let n = args.n.unwrap_or(500);
    let results: Result<Vec<(usize, Vec<usize>)>> = (0..args.reps)
        .into_par_iter()
        .map(|rep| {
            let seed = derive_seed(args.seed, 0x7673, rep as u64);
            let design = SimDesign::variable_selection(n, args.rho, seed);
            let (data, _) = generate(&design)?;
            let opts = FitOptions { seed, ..Default::default() };
            let base = fit(&data, &spec, 2, &opts)?;
            let lmax = {
                let grad = 2.0 * &base.s_fit * &base.params.alpha;
                (0..grad.nrows()).map(|i| grad.row(i).norm()).fold(0.0_f64, f64::max)
            };
            let grid = regularize::default_grid(lmax, 15);
            let reg = regularize::select_lambda(&data, &spec, 2, &grid, Criterion::Bic, &opts)?;
            Ok((rep, reg.active_set))
        })
        .collect();
    let results = results?;
    let rows: Vec<Vec<String>> = results
        .iter()
        .map(|(rep, act)| {
            vec![
                rep.to_string(),
                act.len().to_string(),
                act.iter().map(|i| (i + 1).to_string()).collect::<Vec<_>>().join(";"),
            ]
        })
        .collect();
    let header: Vec<String> = ["rep", "cardinality", "active_set"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    write_csv(&args.out, &header, &rows)?;
    let truth: Vec<usize> = (0..4).collect();
    let runs: Vec<Vec<usize>> = results.into_iter().map(|(_, a)| a).collect();
    let m = selection_metrics(&truth, &runs);
    println!(
        "variable-selection (n = {n}, rho = {}, {} reps): Pr(S0 in S_hat) = {:.2}, #S_hat = {:.2} (+-{:.2})",
        args.rho, args.reps, m.pr_contain, m.mean_card, m.sd_card
    );
    Ok(())
}
