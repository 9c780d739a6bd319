//! Time-series ingestion and standardization.
//!
//! Input files are headered CSV with one time column and one value column.
//! The model input is the 1-based arrival index (the time column is parsed
//! for validation and reporting, but regular spacing is not assumed or
//! required); both index and value are standardized to zero mean and unit
//! population variance before streaming.

use crate::error::{CliError, Result};
use std::path::Path;

/// A column's affine standardization record: `scaled = (raw - mean) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub mean: f64,
    pub scale: f64,
}

impl Affine {
    pub fn identity() -> Self {
        Affine {
            mean: 0.0,
            scale: 1.0,
        }
    }

    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.scale
    }

    pub fn invert(&self, scaled: f64) -> f64 {
        scaled * self.scale + self.mean
    }

    /// Composition: standardizing twice accumulates into one record mapping
    /// the original scale to the current one.
    fn then(&self, next: &Affine) -> Affine {
        Affine {
            mean: self.mean + self.scale * next.mean,
            scale: self.scale * next.scale,
        }
    }
}

/// A loaded series plus the transforms that map the original columns to the
/// values currently stored.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    /// Model inputs (1-based arrival index at load time).
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Raw time-column values, kept for reporting.
    pub times: Vec<f64>,
    pub x_transform: Affine,
    pub y_transform: Affine,
}

/// Which CSV columns hold the series.
#[derive(Debug, Clone)]
pub struct ColumnSpec {
    pub time: String,
    pub value: String,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            time: "t".into(),
            value: "y".into(),
        }
    }
}

/// Population mean and variance in one pass.
fn mean_var(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var)
}

/// Load a headered CSV in row order. Errors name the offending row
/// (1-based, excluding the header) and column.
pub fn load_csv(path: &Path, cols: &ColumnSpec) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => CliError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e.to_string()),
            },
            _ => CliError::input(format!("{}: {e}", path.display())),
        })?;

    let headers = reader
        .headers()
        .map_err(|e| CliError::input(format!("{}: cannot read header: {e}", path.display())))?
        .clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::input(format!(
                "{}: no column named '{name}' (header has: {})",
                path.display(),
                headers.iter().collect::<Vec<_>>().join(", ")
            ))
        })
    };
    let t_idx = find(&cols.time)?;
    let y_idx = find(&cols.value)?;

    let mut times = Vec::new();
    let mut ys = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let row_no = row + 1;
        let record = record.map_err(|e| {
            CliError::input(format!("{}: row {row_no}: {e}", path.display()))
        })?;
        if record.len() != headers.len() {
            return Err(CliError::input(format!(
                "{}: row {row_no}: has {} fields, header has {}",
                path.display(),
                record.len(),
                headers.len()
            )));
        }
        let parse = |idx: usize, name: &str| -> Result<f64> {
            let cell = &record[idx];
            cell.parse::<f64>().map_err(|_| {
                CliError::input(format!(
                    "{}: row {row_no}, column '{name}': cannot parse '{cell}' as a number",
                    path.display()
                ))
            })
        };
        times.push(parse(t_idx, &cols.time)?);
        ys.push(parse(y_idx, &cols.value)?);
    }
    if ys.is_empty() {
        return Err(CliError::input(format!(
            "{}: no data rows",
            path.display()
        )));
    }

    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    let xs = (1..=ys.len()).map(|i| i as f64).collect();
    Ok(Dataset {
        name,
        xs,
        ys,
        times,
        x_transform: Affine::identity(),
        y_transform: Affine::identity(),
    })
}

/// Shift and scale both columns to zero mean and unit population variance,
/// composing the transform records so originals stay recoverable.
pub fn standardize(ds: &Dataset) -> Result<Dataset> {
    if ds.ys.len() < 2 {
        return Err(CliError::input(format!(
            "dataset '{}' has {} rows; standardization needs at least 2",
            ds.name,
            ds.ys.len()
        )));
    }
    let column = |vals: &[f64], label: &str| -> Result<(Vec<f64>, Affine)> {
        let (mean, var) = mean_var(vals);
        if var <= 0.0 || !var.is_finite() {
            return Err(CliError::input(format!(
                "dataset '{}': column {label} has zero variance",
                ds.name
            )));
        }
        let step = Affine {
            mean,
            scale: var.sqrt(),
        };
        Ok((vals.iter().map(|v| step.apply(*v)).collect(), step))
    };
    let (xs, x_step) = column(&ds.xs, "x")?;
    let (ys, y_step) = column(&ds.ys, "y")?;
    Ok(Dataset {
        name: ds.name.clone(),
        xs,
        ys,
        times: ds.times.clone(),
        x_transform: ds.x_transform.then(&x_step),
        y_transform: ds.y_transform.then(&y_step),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::io::Write;

    fn write_file(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_a_small_file_in_row_order() {
        let f = write_file("t,y\n1,2\n2,4\n3,6\n");
        let ds = load_csv(f.path(), &ColumnSpec::default()).unwrap();
        assert_eq!(ds.ys, vec![2.0, 4.0, 6.0]);
        assert_eq!(ds.xs, vec![1.0, 2.0, 3.0]);
        assert_eq!(ds.times, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn crlf_and_custom_columns_work() {
        let f = write_file("time,accel\r\n10,-1.5\r\n20,0.5\r\n");
        let cols = ColumnSpec {
            time: "time".into(),
            value: "accel".into(),
        };
        let ds = load_csv(f.path(), &cols).unwrap();
        assert_eq!(ds.ys, vec![-1.5, 0.5]);
    }

    #[test]
    fn blank_cell_error_names_the_row() {
        let f = write_file("t,y\n1,2\n2,\n3,6\n");
        let err = load_csv(f.path(), &ColumnSpec::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2"), "{msg}");
        assert!(msg.contains("column 'y'"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn ragged_row_error_names_the_row() {
        let f = write_file("t,y\n1,2\n2,4,9\n");
        let err = load_csv(f.path(), &ColumnSpec::default()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn missing_file_and_missing_column_are_input_errors() {
        let err = load_csv(Path::new("/nonexistent/data.csv"), &ColumnSpec::default())
            .unwrap_err();
        assert_eq!(err.exit_code(), 1);

        let f = write_file("t,value\n1,2\n");
        let err = load_csv(f.path(), &ColumnSpec::default()).unwrap_err();
        assert!(err.to_string().contains("no column named 'y'"), "{err}");
    }

    #[test]
    fn standardize_hits_the_two_point_case() {
        // (0, 2) has population variance 1, so it maps to (-1, 1).
        let f = write_file("t,y\n1,0\n2,2\n");
        let ds = standardize(&load_csv(f.path(), &ColumnSpec::default()).unwrap()).unwrap();
        assert_abs_diff_eq!(ds.ys[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ds.ys[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn standardized_columns_have_zero_mean_unit_variance() {
        let rows: String = (1..=40)
            .map(|i| format!("{i},{}\n", (i as f64 * 0.77).sin() * 3.0 + 5.0))
            .collect();
        let f = write_file(&format!("t,y\n{rows}"));
        let ds = standardize(&load_csv(f.path(), &ColumnSpec::default()).unwrap()).unwrap();
        for vals in [&ds.xs, &ds.ys] {
            let (mean, var) = mean_var(vals);
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-9);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn standardize_is_idempotent_and_invertible() {
        let f = write_file("t,y\n1,3.5\n2,-1.25\n3,0.75\n4,9.0\n");
        let raw = load_csv(f.path(), &ColumnSpec::default()).unwrap();
        let once = standardize(&raw).unwrap();
        let twice = standardize(&once).unwrap();
        for (a, b) in once.ys.iter().zip(&twice.ys) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        for (scaled, orig) in once.ys.iter().zip(&raw.ys) {
            assert_abs_diff_eq!(once.y_transform.invert(*scaled), *orig, epsilon = 1e-12);
        }
        for (scaled, orig) in once.xs.iter().zip(&raw.xs) {
            assert_abs_diff_eq!(once.x_transform.invert(*scaled), *orig, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_column_is_rejected() {
        let f = write_file("t,y\n1,4\n2,4\n3,4\n");
        let err = standardize(&load_csv(f.path(), &ColumnSpec::default()).unwrap()).unwrap_err();
        assert!(err.to_string().contains("zero variance"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn single_row_cannot_be_standardized() {
        let f = write_file("t,y\n1,4\n");
        let ds = load_csv(f.path(), &ColumnSpec::default()).unwrap();
        assert!(standardize(&ds).is_err());
    }
}
