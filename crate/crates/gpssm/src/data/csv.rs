//! Plain comma-separated tables: a named header row, then numeric rows.
//!
//! This is deliberately minimal. No quoting or escaping; column names and
//! values must not contain commas. Writers emit text that readers parse
//! back exactly.

use crate::error::{Error, Result};
use std::path::Path;

/// Parse header and numeric rows. Line numbers in errors are 1-based.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| Error::SchemaMismatch { message: "empty table: no header row".into() })?;
    let header: Vec<String> = header_line.split(',').map(|s| s.trim().to_string()).collect();
    if header.iter().any(|h| h.is_empty()) {
        return Err(Error::SchemaMismatch { message: "blank column name in header".into() });
    }
    let mut rows = Vec::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(Error::SchemaMismatch {
                message: format!(
                    "line {}: expected {} fields, found {}",
                    line_no,
                    header.len(),
                    fields.len()
                ),
            });
        }
        let mut row = Vec::with_capacity(fields.len());
        for (col, field) in fields.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("column {} ({}): not a number: {:?}", col, header[col], field.trim()),
            })?;
            row.push(v);
        }
        rows.push(row);
    }
    Ok((header, rows))
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("reading {}: {}", path.display(), e)))?;
    parse_csv(&text)
}

/// Format a float so that parsing it back returns the identical bits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:?}")
}

/// Write rows of already formatted cells under a header.
pub fn write_csv_text(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::SchemaMismatch {
                message: format!("row {}: expected {} cells, found {}", i + 1, header.len(), row.len()),
            });
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let text = write_csv_text(header, rows)?;
    std::fs::write(path, text).map_err(|e| Error::Io(format!("writing {}: {}", path.display(), e)))
}
