use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

use super::TimeSeriesFrame;

/// Name of the optional time column; it is kept as labels, not as a series.
pub const TIMESTAMP_COLUMN: &str = "timestamp";

/// Reads a frame from a headed CSV file and sorts its columns by name.
///
/// Ingestion errors report the 1-based line and column of the offending cell.
pub fn load_csv(path: impl AsRef<Path>) -> Result<TimeSeriesFrame> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

pub fn read_csv<R: Read>(reader: R) -> Result<TimeSeriesFrame> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(ingest(1, 1, "missing header row"));
    }
    let ts_col = header.iter().position(|h| h == TIMESTAMP_COLUMN);
    let mut names = Vec::new();
    for (c, h) in header.iter().enumerate() {
        if Some(c) == ts_col {
            continue;
        }
        if h.is_empty() {
            return Err(ingest(1, c + 1, "empty series name"));
        }
        if names.contains(h) {
            return Err(ingest(1, c + 1, &format!("duplicate series name {h:?}")));
        }
        names.push(h.clone());
    }
    if names.is_empty() {
        return Err(ingest(1, 1, "no series columns"));
    }

    let mut rows = Vec::new();
    let mut stamps = ts_col.map(|_| Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(ingest(
                line,
                rec.len().min(header.len()) + 1,
                &format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let mut row = Vec::with_capacity(names.len());
        for (c, cell) in rec.iter().enumerate() {
            if Some(c) == ts_col {
                stamps.as_mut().expect("timestamp column").push(cell.to_string());
                continue;
            }
            if cell.is_empty() {
                return Err(ingest(line, c + 1, "missing value"));
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| ingest(line, c + 1, &format!("non-numeric value {cell:?}")))?;
            if !v.is_finite() {
                return Err(ingest(line, c + 1, &format!("non-finite value {cell:?}")));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ingest(2, 1, "no data rows"));
    }
    Ok(TimeSeriesFrame::new(names, rows, stamps)?.sorted_by_name())
}

fn ingest(row: usize, column: usize, message: &str) -> Error {
    Error::Ingestion {
        row,
        column,
        message: message.to_string(),
    }
}

/// Writes `frame` with a header row; values use the shortest round-trip form.
pub fn write_csv(frame: &TimeSeriesFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<&str> = Vec::new();
    if frame.timestamps().is_some() {
        header.push(TIMESTAMP_COLUMN);
    }
    header.extend(frame.names().iter().map(String::as_str));
    w.write_record(&header)?;
    for t in 0..frame.len() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        if let Some(ts) = frame.timestamps() {
            rec.push(ts[t].clone());
        }
        rec.extend(frame.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let mut file = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    file.flush().map_err(|e| Error::io(path, e))
}
