use clap::Args;
use ordred::model::validate_dataset;
use ordred::persist;
use ordred::reduce::{self, ReduceOptions};
use ordred::Result;

use crate::io::{fmt_f64, read_table, schema_from, write_csv};

#[derive(Args)]
pub struct SesIndexArgs {
    /// Fitted model document (must have d = 1).
    #[arg(long)]
    pub model: String,
    /// Input CSV including the response column.
    #[arg(long = "in")]
    pub input: String,
    /// Response column name (used to orient the index).
    #[arg(long)]
    pub response: String,
    #[arg(long)]
    pub response_kind: Option<String>,
    /// Output CSV with columns R1 and ses_index.
    #[arg(long)]
    pub out: String,
    #[arg(long)]
    pub prob_points: Option<usize>,
}

pub fn run(args: SesIndexArgs) -> Result<()> {
    let model = persist::from_json(&std::fs::read_to_string(&args.model)?)?;
    let table = read_table(&args.input)?;
    let schema = schema_from(
        &args.response,
        Some(&model.names),
        args.response_kind.as_deref(),
    )?;
    let data = validate_dataset(&table, &schema)?;
    let mut opts = ReduceOptions::default();
    if let Some(p) = args.prob_points {
        opts.prob_points = p;
    }
    let raw = reduce::reduce_dataset_opts(&data, &model, &opts)?;
    let index = reduce::ses_index(&data, &model, &opts)?;
    let header = vec!["R1".to_string(), "ses_index".to_string()];
    let rows: Vec<Vec<String>> = (0..data.n())
        .map(|i| vec![fmt_f64(raw.r[(i, 0)]), fmt_f64(index.values[i])])
        .collect();
    write_csv(&args.out, &header, &rows)?;
    println!(
        "ses-index: {} rows, orientation {:+}, -> {}",
        data.n(),
        index.orientation,
        args.out
    );
    Ok(())
}
