use clap::Args;
use ordred::persist;
use ordred::reduce::{self, ReduceOptions};
use ordred::{Error, Result};

use crate::io::{fmt_f64, read_table, write_csv};

#[derive(Args)]
pub struct ReduceArgs {
    /// Fitted model document.
    #[arg(long)]
    pub model: String,
    /// Input CSV; predictor columns are matched by name against the model.
    #[arg(long = "in")]
    pub input: String,
    /// Output CSV with columns R1..Rd.
    #[arg(long)]
    pub out: String,
    /// QMC points per rectangle probability.
    #[arg(long)]
    pub prob_points: Option<usize>,
}

pub fn run(args: ReduceArgs) -> Result<()> {
    let model = persist::from_json(&std::fs::read_to_string(&args.model)?)?;
    let table = read_table(&args.input)?;
    let mut opts = ReduceOptions::default();
    if let Some(p) = args.prob_points {
        opts.prob_points = p;
    }

    // Locate the model's predictors among the CSV columns.
    let cols: Vec<usize> = model
        .names
        .iter()
        .map(|name| {
            table
                .headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::UnknownColumn { column: name.clone() })
        })
        .collect::<Result<Vec<_>>>()?;

    let d = model.d();
    let mut rows = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        let cells: Vec<String> = cols
            .iter()
            .map(|&c| row.get(c).cloned().unwrap_or_default())
            .collect();
        let codes = model
            .codes_from_labels(&cells)
            .map_err(|e| e.with_context(format!("row {i}")))?;
        let r = reduce::reduce(&codes, &model, &opts)?;
        rows.push((0..d).map(|k| fmt_f64(r[k])).collect::<Vec<_>>());
    }
    let header: Vec<String> = (1..=d).map(|k| format!("R{k}")).collect();
    write_csv(&args.out, &header, &rows)?;
    println!("reduce: {} rows -> {}", rows.len(), args.out);
    Ok(())
}
