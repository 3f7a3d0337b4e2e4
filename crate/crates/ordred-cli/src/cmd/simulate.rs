use std::time::Instant;

use clap::Args;
use nalgebra::DMatrix;
use ordred::em::{fit, FitOptions};
use ordred::model::BasisSpec;
use ordred::numeric::derive_seed;
use ordred::regularize::active_rows;
use ordred::simulate::{
    generate, subspace_angle, AlphaRule, Coupling, DeltaRule, ErrorKind, SimDesign, ThresholdRule,
};
use ordred::{Error, Result};
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::parse_backend;
use crate::io::{fmt_f64, write_csv};

#[derive(Args)]
pub struct SimulateArgs {
    /// Design file (TOML).
    #[arg(long)]
    pub design: String,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Output CSV of per-replicate results.
    #[arg(long)]
    pub out: String,
    /// Omit timing columns.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DesignFile {
    n: usize,
    p: usize,
    d: usize,
    r: usize,
    /// "ones-and-signs" or explicit row-major matrix.
    alpha_rule: Option<String>,
    alpha_explicit: Option<Vec<Vec<f64>>>,
    delta_c: Option<f64>,
    delta_rho: Option<f64>,
    /// "mean-alpha" or "fresh-dense".
    delta_coupling: Option<String>,
    b_scale: Option<f64>,
    /// "normal" or "chi2".
    error_kind: Option<String>,
    g: Vec<usize>,
    xi_scale: Option<f64>,
    structure_seed: Option<u64>,
    seed: Option<u64>,
    /// Fit settings.
    fit_r: Option<usize>,
    fit_d: Option<usize>,
    backend: Option<String>,
    lambda: Option<f64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
}

fn design_from_file(file: &DesignFile, rep_seed: u64) -> Result<SimDesign> {
    let alpha_rule = match (&file.alpha_rule, &file.alpha_explicit) {
        (_, Some(rows)) => {
            let p = rows.len();
            let d = rows.first().map(|r| r.len()).unwrap_or(0);
            let mut m = DMatrix::zeros(p, d);
            for (i, row) in rows.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    m[(i, j)] = v;
                }
            }
            AlphaRule::Explicit(m)
        }
        (Some(kind), None) if kind == "ones-and-signs" => AlphaRule::OnesAndSigns,
        (None, None) => AlphaRule::OnesAndSigns,
        (Some(other), None) => {
            return Err(Error::Invalid(format!("unknown alpha_rule '{other}'")))
        }
    };
    let coupling = match file.delta_coupling.as_deref() {
        None | Some("mean-alpha") => Coupling::MeanAlpha,
        Some("fresh-dense") => Coupling::FreshDense,
        Some(other) => return Err(Error::Invalid(format!("unknown coupling '{other}'"))),
    };
    let error_kind = match file.error_kind.as_deref() {
        None | Some("normal") => ErrorKind::Normal,
        Some("chi2") | Some("chi-squared") => ErrorKind::ChiSquared5,
        Some(other) => return Err(Error::Invalid(format!("unknown error_kind '{other}'"))),
    };
    Ok(SimDesign {
        n: file.n,
        p: file.p,
        d: file.d,
        r: file.r,
        alpha_rule,
        delta_rule: DeltaRule {
            c: file.delta_c.unwrap_or(1.0),
            rho: file.delta_rho.unwrap_or(1.0),
            coupling,
            b_scale: file.b_scale.unwrap_or(1.0),
        },
        error_kind,
        g: file.g.clone(),
        threshold_rule: ThresholdRule::EqualProbability,
        xi_scale: file.xi_scale.unwrap_or(2.0),
        structure_seed: file.structure_seed.unwrap_or(17),
        seed: rep_seed,
    })
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.design)?;
    let file: DesignFile = toml::from_str(&text)
        .map_err(|e| Error::Invalid(format!("design parse error: {e}")))?;
    let base_seed = file.seed.unwrap_or(0);
    let fit_r = file.fit_r.unwrap_or(file.r);
    let fit_d = file.fit_d.unwrap_or(file.d);
    let opts = FitOptions {
        backend: parse_backend(file.backend.as_deref().unwrap_or("approximate"))?,
        tol: file.tol.unwrap_or(1e-6),
        max_iter: file.max_iter.unwrap_or(200),
        lambda: file.lambda,
        ..Default::default()
    };

    let rows: Result<Vec<Vec<String>>> = (0..args.reps)
        .into_par_iter()
        .map(|rep| {
            let rep_seed = derive_seed(base_seed, 0x73696d, rep as u64);
            let design = design_from_file(&file, rep_seed)?;
            let (data, truth) = generate(&design)?;
            let rep_opts = FitOptions { seed: rep_seed, ..opts.clone() };
            let spec = BasisSpec::Polynomial { degree: fit_r };
            let start = Instant::now();
            let model = fit(&data, &spec, fit_d, &rep_opts)
                .map_err(|e| e.with_context(format!("replicate {rep}")))?;
            let elapsed = start.elapsed().as_secs_f64() * 1e3;
            let angle = if fit_d == truth.alpha.ncols() {
                subspace_angle(&model.params.alpha, &truth.alpha)?
            } else {
                f64::NAN
            };
            let active = active_rows(&model.params.alpha)
                .iter()
                .map(|i| (i + 1).to_string())
                .collect::<Vec<_>>()
                .join(";");
            let mut row = vec![
                rep.to_string(),
                rep_seed.to_string(),
                fmt_f64(angle),
                model.params.d().to_string(),
                active,
                model.iterations.to_string(),
                model.converged.to_string(),
            ];
            if !args.no_timing {
                row.push(format!("{elapsed:.3}"));
            }
            Ok(row)
        })
        .collect();
    let rows = rows?;
    let mut header: Vec<String> = [
        "rep", "seed", "angle_deg", "d", "active_set", "iterations", "converged",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    if !args.no_timing {
        header.push("fit_ms".to_string());
    }
    write_csv(&args.out, &header, &rows)?;
    let angles: Vec<f64> = rows
        .iter()
        .filter_map(|r| r[2].parse::<f64>().ok())
        .filter(|a| a.is_finite())
        .collect();
    if !angles.is_empty() {
        let mean = angles.iter().sum::<f64>() / angles.len() as f64;
        println!("simulate: {} reps, mean angle {mean:.2} deg -> {}", rows.len(), args.out);
    } else {
        println!("simulate: {} reps -> {}", rows.len(), args.out);
    }
    Ok(())
}
