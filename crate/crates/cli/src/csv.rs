//! Numeric CSV loading: comma separators, '.' decimals, optional header
//! row. Errors cite 1-based line numbers. `f64` Display output round-trips
//! through `str::parse`, so datasets exported by this tool reload
//! bit-identically.

use std::path::Path;

use caflow::DataMatrix;

use crate::CliError;

#[derive(Debug)]
pub struct LoadedCsv {
    pub data: DataMatrix,
    pub columns: Vec<String>,
}

pub fn load_csv(path: &Path) -> Result<LoadedCsv, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_csv(&text, &path.display().to_string())
}

pub fn parse_csv(text: &str, origin: &str) -> Result<LoadedCsv, CliError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    if lines.is_empty() {
        return Err(CliError::Data(format!("{origin}: file has no rows")));
    }

    // A header is any first row with a cell that does not parse as a number.
    let first_fields = split_fields(lines[0].1);
    let has_header = first_fields.iter().any(|f| f.parse::<f64>().is_err());
    let width = first_fields.len();
    let columns: Vec<String> = if has_header {
        first_fields.iter().map(|s| s.to_string()).collect()
    } else {
        (1..=width).map(|j| format!("x{j}")).collect()
    };

    let body = if has_header { &lines[1..] } else { &lines[..] };
    if body.is_empty() {
        return Err(CliError::Data(format!(
            "{origin}: header row but no data rows"
        )));
    }
    let mut values = Vec::with_capacity(body.len() * width);
    for (line_no, line) in body {
        let fields = split_fields(line);
        if fields.len() != width {
            return Err(CliError::Data(format!(
                "{origin}:{line_no}: row has {} fields, expected {width}",
                fields.len()
            )));
        }
        for f in &fields {
            let v: f64 = f.parse().map_err(|_| {
                CliError::Data(format!(
                    "{origin}:{line_no}: cannot parse '{f}' as a number"
                ))
            })?;
            values.push(v);
        }
    }
    let data = DataMatrix::new(body.len(), width, values)
        .map_err(|e| CliError::Data(format!("{origin}: {e}")))?;
    Ok(LoadedCsv { data, columns })
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_row_is_detected_and_named() {
        let loaded = parse_csv("alpha,beta\n1,2\n3,4\n", "t").unwrap();
        assert_eq!(loaded.columns, ["alpha", "beta"]);
        assert_eq!(loaded.data.n_rows(), 2);
        assert_eq!(loaded.data.get(1, 0), 3.0);
    }

    #[test]
    fn headerless_file_gets_synthetic_names() {
        let loaded = parse_csv("1.5,2\n-3,4e-2\n", "t").unwrap();
        assert_eq!(loaded.columns, ["x1", "x2"]);
        assert_eq!(loaded.data.get(1, 1), 0.04);
    }

    #[test]
    fn ragged_row_error_cites_the_line() {
        let err = parse_csv("x1,x2\n1,2\n1,2,3\n", "d.csv").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("d.csv:3"), "{msg}");
        assert!(msg.contains("3 fields, expected 2"), "{msg}");
    }

    #[test]
    fn bad_cell_error_cites_line_and_cell() {
        let err = parse_csv("1,2\n1,oops\n", "d.csv").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("d.csv:2"), "{msg}");
        assert!(msg.contains("'oops'"), "{msg}");
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(parse_csv("", "t").is_err());
        assert!(parse_csv("\n\n", "t").is_err());
        assert!(parse_csv("x1,x2\n", "t").is_err());
    }

    #[test]
    fn export_reloads_bit_identically() {
        let m = DataMatrix::new(
            2,
            2,
            vec![
                0.1 + 0.2,
                -1.0 / 3.0,
                f64::MIN_POSITIVE,
                1.2345678901234567e300,
            ],
        )
        .unwrap();
        let loaded = parse_csv(&m.to_csv_string(), "t").unwrap();
        assert_eq!(loaded.data.values(), m.values());
    }

    #[test]
    fn crlf_and_blank_tail_lines_are_tolerated() {
        let loaded = parse_csv("x1,x2\r\n1,2\r\n\n", "t").unwrap();
        assert_eq!(loaded.data.n_rows(), 1);
    }
}
