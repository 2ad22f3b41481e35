use std::path::Path;

use super::dataset::csv_io;
use crate::error::{Error, Result};

/// Reads the value column of a `timestamp,value` CSV file.
///
/// A first row whose value does not parse is treated as a header. Blank lines
/// are skipped.
pub fn ingest_csv(path: &Path) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        msg,
    };
    let mut out = Vec::new();
    let mut first = true;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_io(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() < 2 {
            return Err(parse_err(line, "expected two columns (timestamp,value)".into()));
        }
        let raw = &rec[1];
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => out.push(v),
            Ok(_) => return Err(parse_err(line, format!("non-finite value {raw:?}"))),
            Err(_) if first => {}
            Err(_) => return Err(parse_err(line, format!("non-numeric value {raw:?}"))),
        }
        first = false;
    }
    if out.is_empty() {
        return Err(Error::Empty("csv series"));
    }
    Ok(out)
}

/// Writes `index,value` rows with a header, readable by [`ingest_csv`].
pub fn write_series_csv(path: &Path, series: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(["timestamp", "value"]).map_err(|e| csv_io(path, e))?;
    for (i, v) in series.iter().enumerate() {
        w.write_record([i.to_string(), format!("{v:?}")]).map_err(|e| csv_io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
