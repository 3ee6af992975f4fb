use std::path::Path;

use crate::error::{Error, Result};
use crate::spec::GroupId;

/// Reads `(score, group)` pairs from a CSV file holding an external model's
/// predictions. Rows keep file order; row numbers in errors are 1-based data
/// rows (the header is not counted).
pub fn scores_from_file(
    path: &Path,
    pred_col: &str,
    group_col: &str,
) -> Result<Vec<(f64, GroupId)>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_owned()))
    };
    let pred_idx = find(pred_col)?;
    let group_idx = find(group_col)?;

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        let ingest = |column: &str, message: String| Error::Ingest {
            path: path.to_owned(),
            row,
            column: column.to_owned(),
            message,
        };
        let raw = record.get(pred_idx).unwrap_or("");
        let score: f64 = raw
            .parse()
            .map_err(|_| ingest(pred_col, format!("`{raw}` is not a number")))?;
        if !score.is_finite() {
            return Err(ingest(pred_col, format!("`{raw}` is not finite")));
        }
        let group = record.get(group_idx).unwrap_or("");
        if group.is_empty() {
            return Err(ingest(group_col, "empty group label".into()));
        }
        out.push((score, GroupId::new(group)));
    }
    if out.is_empty() {
        log::warn!("{}: no prediction rows", path.display());
    }
    Ok(out)
}
