//! CSV and JSON input and output.
//!
//! Data files are comma-separated, one replicate per line and one variable
//! per column. An optional single header line is recognized when any of its
//! fields is neither a number nor a missing-value token. Missing values are
//! the empty field, `NA` and `na`; anything else that is not a finite number
//! is an error. Fields are trimmed of surrounding whitespace.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{from_matrix, TriangularSample};

const NA_TOKENS: [&str; 3] = ["", "NA", "na"];

fn is_na(field: &str) -> bool {
    NA_TOKENS.contains(&field)
}

fn csv_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Csv { line, msg: msg.into() }
}

/// Reads a data file.
pub fn parse_csv(path: impl AsRef<Path>) -> Result<TriangularSample> {
    let text = fs::read_to_string(path)?;
    parse_csv_str(&text)
}

/// Parses data from a string.
pub fn parse_csv_str(text: &str) -> Result<TriangularSample> {
    let grid = parse_grid(text)?;
    if grid.is_empty() {
        return Err(Error::Empty("csv has no data rows"));
    }
    for (line, row) in &grid {
        if row.iter().all(Option::is_none) {
            return Err(csv_err(*line, "row has no observed value"));
        }
    }
    let values: Vec<Vec<Option<f64>>> = grid.into_iter().map(|(_, r)| r).collect();
    from_matrix(&values)
}

/// Data rows with their 1-based line numbers.
fn parse_grid(text: &str) -> Result<Vec<(usize, Vec<Option<f64>>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut width: Option<usize> = None;
    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            csv_err(line, e.to_string())
        })?;
        let line = record.position().map_or(idx + 1, |p| p.line() as usize);
        if record.len() == 1 && record.get(0) == Some("") && text_line_is_blank(text, line) {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(csv_err(line, format!("expected {w} fields, found {}", record.len())))
            }
            _ => {}
        }
        let parsed: Vec<std::result::Result<Option<f64>, String>> = record.iter().map(parse_field).collect();
        if idx == 0 && parsed.iter().any(|f| f.is_err()) {
            continue;
        }
        let row = parsed
            .into_iter()
            .enumerate()
            .map(|(col, f)| f.map_err(|msg| csv_err(line, format!("column {}: {msg}", col + 1))))
            .collect::<Result<Vec<_>>>()?;
        rows.push((line, row));
    }
    Ok(rows)
}

fn text_line_is_blank(text: &str, line: usize) -> bool {
    text.lines()
        .nth(line.saturating_sub(1))
        .is_none_or(|l| l.trim().is_empty())
}

fn parse_field(field: &str) -> std::result::Result<Option<f64>, String> {
    if is_na(field) {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Err(format!("non-finite value '{field}'")),
        Err(_) => Err(format!("not a number: '{field}'")),
    }
}

/// Reads a mean profile: one row or one column of observed numbers.
pub fn parse_vector_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    parse_vector_str(&text)
}

pub fn parse_vector_str(text: &str) -> Result<Vec<f64>> {
    let grid = parse_grid(text)?;
    let (rows, cols) = (grid.len(), grid.first().map_or(0, |r| r.1.len()));
    if rows == 0 || cols == 0 {
        return Err(Error::Empty("mean profile has no values"));
    }
    if rows > 1 && cols > 1 {
        return Err(csv_err(
            grid[1].0,
            "mean profile must be a single row or a single column",
        ));
    }
    grid.iter()
        .flat_map(|(line, row)| row.iter().map(move |v| (*line, *v)))
        .map(|(line, v)| v.ok_or_else(|| csv_err(line, "mean profile cannot have missing values")))
        .collect()
}

/// Writes a sample as a rectangular grid of width `max_dim`. Unobserved and
/// absent cells are empty fields; values use the shortest representation
/// that parses back to the same `f64`.
pub fn write_csv(sample: &TriangularSample, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_csv(sample))?;
    Ok(())
}

pub fn format_csv(sample: &TriangularSample) -> String {
    let dim = sample.max_dim();
    let mut out = String::new();
    for row in sample.rows() {
        let fields: Vec<String> = (0..dim)
            .map(|j| match row.get(j).and_then(|c| c.get()) {
                Some(v) => format_real(v),
                None => String::new(),
            })
            .collect();
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Locale-free shortest round-trip formatting.
pub fn format_real(v: f64) -> String {
    format!("{v:?}")
}

/// Writes rows under a header line.
pub fn write_table(path: impl AsRef<Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(0, e.to_string()))?;
    let map = |e: csv::Error| csv_err(0, e.to_string());
    writer.write_record(header).map_err(map)?;
    for r in rows {
        writer.write_record(r).map_err(map)?;
    }
    writer.flush()?;
    Ok(())
}

/// `x,density` grid of the kernel density estimate.
pub fn write_density_csv(grid: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<Vec<String>> = grid
        .iter()
        .map(|&(x, y)| vec![format_real(x), format_real(y)])
        .collect();
    write_table(path, &["x", "density"], &rows)
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(to_json(value)?.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_sample, CountLaw, GenConfig, RowLengthLaw, TailFamily};
    use proptest::prelude::*;

    #[test]
    fn missing_cell() {
        let s = parse_csv_str("1.0,,2.0\n3.0,4.0,5.0").unwrap();
        assert_eq!(s.n(), 2);
        assert_eq!(s.max_dim(), 3);
        assert_eq!(s.cell(0, 1), None);
        assert_eq!(s.cell(1, 2), Some(5.0));
    }

    #[test]
    fn header_detection() {
        let s = parse_csv_str("g1,g2\n1,2").unwrap();
        assert_eq!((s.n(), s.max_dim()), (1, 2));
        let s = parse_csv_str("NA,2\n1,2").unwrap();
        assert_eq!(s.n(), 2);
    }

    #[test]
    fn ragged_rows_report_the_line() {
        match parse_csv_str("1,2\n3") {
            Err(Error::Csv { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_tokens() {
        match parse_csv_str("1,2\n3,x") {
            Err(Error::Csv { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("column 2"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_csv_str("1,2\n3,N/A").is_err());
        assert!(parse_csv_str("1,2\n3,inf").is_err());
        assert!(matches!(parse_csv_str("1,2\nNA,na"), Err(Error::Csv { line: 2, .. })));
        assert!(parse_csv_str("").is_err());
        assert!(parse_csv_str("a,b\n").is_err());
    }

    #[test]
    fn na_tokens_and_whitespace() {
        let s = parse_csv_str("1, NA ,na\n 2 ,3,").unwrap();
        assert_eq!(s.cell(0, 1), None);
        assert_eq!(s.cell(0, 2), None);
        assert_eq!(s.cell(1, 0), Some(2.0));
        assert_eq!(s.cell(1, 2), None);
    }

    #[test]
    fn vectors() {
        assert_eq!(parse_vector_str("1,2,3").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(parse_vector_str("mu\n1\n2").unwrap(), vec![1.0, 2.0]);
        assert!(parse_vector_str("1,2\n3,4").is_err());
        assert!(parse_vector_str("1,,3").is_err());
    }

    #[test]
    fn jagged_samples_round_trip() {
        let s = generate_sample(&GenConfig {
            n: 15,
            tail: TailFamily::PolynomialTail { k: 3.0, c: 1.0 },
            row_law: RowLengthLaw::ShiftedRandom {
                base: CountLaw::Uniform { max: 6 },
                cap: 10,
            },
            missing_p: 0.9,
            seed: 4,
        })
        .unwrap();
        assert!(s.rows().iter().all(|r| r.iter().any(|c| c.observed)));
        let back = parse_csv_str(&format_csv(&s)).unwrap();
        assert_eq!(back.max_dim(), s.max_dim());
        for i in 0..s.n() {
            for j in 0..s.max_dim() {
                assert_eq!(back.cell(i, j), s.cell(i, j));
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip(grid in prop::collection::vec(
            prop::collection::vec(prop::option::weighted(0.8, -1e12f64..1e12), 4), 1..20)
        ) {
            prop_assume!(grid.iter().all(|r| r.iter().any(Option::is_some)));
            let s = from_matrix(&grid).unwrap();
            let back = parse_csv_str(&format_csv(&s)).unwrap();
            prop_assert_eq!(back.n(), s.n());
            for (i, row) in grid.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    prop_assert_eq!(back.cell(i, j), *v);
                }
            }
        }

        #[test]
        fn extreme_values_round_trip(v in prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL) {
            let s = from_matrix(&[vec![Some(v), None]]).unwrap();
            let back = parse_csv_str(&format_csv(&s)).unwrap();
            prop_assert_eq!(back.cell(0, 0), Some(v));
        }
    }
}
