//! Plain numeric CSV with a header row.
//!
//! Values are written with 17 significant digits in scientific notation
//! (`{:.16e}`), `.` as decimal separator and `\n` line endings, which
//! round-trips every finite `f64` exactly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn to_csv_string(header: &[String], rows: &[Vec<f64>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|&v| format_f64(v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix(path: &Path, prefix: &str, m: &Matrix) -> Result<()> {
    let header: Vec<String> = (1..=m.cols()).map(|c| format!("{prefix}{c}")).collect();
    let rows: Vec<Vec<f64>> = (0..m.rows()).map(|r| m.row(r).to_vec()).collect();
    fs::write(path, to_csv_string(&header, &rows)).map_err(|e| Error::io(path, e))
}

/// Reads a numeric CSV written by [`write_matrix`] (header row skipped).
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    Ok(read_table(path)?.1)
}

/// Header names and numeric body of a CSV file.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Matrix)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::invalid(path.display().to_string(), "empty file"))?
        .split(',')
        .map(|h| h.trim().to_string())
        .collect();
    let cols = header.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut count = 0;
        for field in line.split(',') {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::invalid(
                    format!("{}:{}", path.display(), i + 2),
                    format!("not a number: {field:?}"),
                )
            })?;
            data.push(v);
            count += 1;
        }
        if count != cols {
            return Err(Error::invalid(
                format!("{}:{}", path.display(), i + 2),
                format!("expected {cols} fields, found {count}"),
            ));
        }
        rows += 1;
    }
    Ok((header, Matrix::from_vec(rows, cols, data)?))
}
