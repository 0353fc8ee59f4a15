//! Plain-text matrix and state files.
//!
//! Format: a one-line header `dim N`, then whitespace-separated decimal
//! floats — N rows of N entries for a matrix, N values in any line grouping
//! for a state. Diff-friendly and easy to produce from any oracle.

use std::path::Path;

use fedchip_core::{PureState64, RealOperator64};

use crate::AppError;

fn usage(path: &Path, line: usize, msg: String) -> AppError {
    AppError::Usage(format!("{}:{line}: {msg}", path.display()))
}

/// Lines with content, paired with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_header(path: &Path, line_no: usize, line: &str) -> Result<usize, AppError> {
    let mut parts = line.split_whitespace();
    match (parts.next(), parts.next(), parts.next()) {
        (Some("dim"), Some(n), None) => n
            .parse::<usize>()
            .map_err(|_| usage(path, line_no, format!("bad dimension {n:?} in header"))),
        _ => Err(usage(
            path,
            line_no,
            format!("expected header \"dim N\", found {line:?}"),
        )),
    }
}

fn parse_values(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>, AppError> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| usage(path, line_no, format!("cannot parse {tok:?} as a number")))
        })
        .collect()
}

/// Reads a real N×N matrix (N a power of two).
pub fn read_matrix(path: &Path) -> Result<RealOperator64, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = content_lines(&text);
    let (header_no, header) = lines
        .next()
        .ok_or_else(|| usage(path, 1, "empty file".to_string()))?;
    let dim = parse_header(path, header_no, header)?;

    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    for (line_no, line) in lines {
        let row = parse_values(path, line_no, line)?;
        if row.len() != dim {
            return Err(usage(
                path,
                line_no,
                format!(
                    "row {} has {} entries, expected {dim}",
                    rows.len() + 1,
                    row.len()
                ),
            ));
        }
        rows.push(row);
        if rows.len() > dim {
            return Err(usage(path, line_no, format!("more than {dim} rows")));
        }
    }
    if rows.len() != dim {
        return Err(usage(
            path,
            text.lines().count().max(1),
            format!("found {} rows, expected {dim}", rows.len()),
        ));
    }
    RealOperator64::from_rows(&rows)
        .map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))
}

/// Reads a real N-dimensional state and normalizes it; rejects vectors whose
/// norm is off by more than 1e-6, since that signals a malformed file rather
/// than rounding in the decimals.
pub fn read_state(path: &Path) -> Result<PureState64, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = content_lines(&text);
    let (header_no, header) = lines
        .next()
        .ok_or_else(|| usage(path, 1, "empty file".to_string()))?;
    let dim = parse_header(path, header_no, header)?;

    let mut values = Vec::with_capacity(dim);
    let mut last_line = header_no;
    for (line_no, line) in lines {
        values.extend(parse_values(path, line_no, line)?);
        last_line = line_no;
        if values.len() > dim {
            return Err(usage(
                path,
                line_no,
                format!("found more than {dim} amplitudes"),
            ));
        }
    }
    if values.len() != dim {
        return Err(usage(
            path,
            last_line,
            format!("found {} amplitudes, expected {dim}", values.len()),
        ));
    }
    let (state, norm) = PureState64::from_real(&values)
        .map_err(|e| AppError::Usage(format!("{}: {e}", path.display())))?;
    if (norm - 1.0).abs() > 1e-6 {
        return Err(AppError::Usage(format!(
            "{}: state norm is {norm}, expected a unit vector",
            path.display()
        )));
    }
    Ok(state)
}
