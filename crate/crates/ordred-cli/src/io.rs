//! CSV ingestion and emission.

use ordred::model::{RawTable, ResponseKind, Schema};
use ordred::{Error, Result};

pub fn read_table(path: &str) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Invalid(format!("cannot read '{path}': {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Invalid(format!("bad header in '{path}': {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Invalid(format!("bad row in '{path}': {e}")))?;
        rows.push(record.iter().map(str::to_string).collect());
    }
    Ok(RawTable { headers, rows })
}

pub fn schema_from(
    response: &str,
    predictors: Option<&[String]>,
    kind: Option<&str>,
) -> Result<Schema> {
    let response_kind = match kind {
        None | Some("auto") => ResponseKind::Auto,
        Some("continuous") => ResponseKind::Continuous,
        Some("categorical") => ResponseKind::Categorical,
        Some(other) => {
            return Err(Error::Invalid(format!(
                "response kind '{other}' (expected auto, continuous, or categorical)"
            )))
        }
    };
    Ok(Schema {
        response: response.to_string(),
        predictors: predictors.map(|p| p.to_vec()).unwrap_or_default(),
        response_kind,
    })
}

/// Full round-trip precision float formatting for CSV output.
pub fn fmt_f64(v: f64) -> String {
    let mut out = format!("{v}");
    if out.parse::<f64>().map(|p| p.to_bits()) != Ok(v.to_bits()) {
        out = format!("{v:?}");
    }
    out
}

pub fn write_csv(path: &str, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| Error::Invalid(format!("cannot write '{path}': {e}")))?;
    writer
        .write_record(header)
        .map_err(|e| Error::Numerical(format!("csv write: {e}")))?;
    for row in rows {
        writer
            .write_record(row)
            .map_err(|e| Error::Numerical(format!("csv write: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::Numerical(format!("csv flush: {e}")))?;
    Ok(())
}
