//! Reading header-bearing comma or tab separated tables into [`RawData`].

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use log::info;
use mixfdr::RawData;
use nalgebra::{DMatrix, DVector};

use crate::error::CliError;

/// Which header names play which role.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnRoles {
    pub outcome: String,
    pub exposures: Vec<String>,
    pub covariates: Vec<String>,
}

impl ColumnRoles {
    fn all(&self) -> impl Iterator<Item = &String> {
        std::iter::once(&self.outcome).chain(&self.exposures).chain(&self.covariates)
    }
}

/// Cells read as missing.
const MISSING: [&str; 6] = ["", "NA", "na", "NaN", "nan", "."];

/// Comma unless the header line has more tabs than commas.
pub fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    let tabs = header.matches('\t').count();
    let commas = header.matches(',').count();
    if tabs > commas {
        b'\t'
    } else {
        b','
    }
}

/// Parses the used columns without any transformation. Returns the data and
/// the number of rows dropped for missing values.
pub fn read_table(path: &Path, roles: &ColumnRoles) -> Result<(RawData, usize), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    parse_table(&text, roles)
}

fn parse_table(text: &str, roles: &ColumnRoles) -> Result<(RawData, usize), CliError> {
    let mut seen = HashMap::new();
    for name in roles.all() {
        if seen.insert(name.as_str(), ()).is_some() {
            return Err(CliError::Usage(format!("column `{name}` is assigned more than one role")));
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(text))
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let index_of = |name: &String| -> Result<usize, CliError> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Data(format!("column `{name}` not found in header")))
    };
    let used: Vec<usize> = roles.all().map(index_of).collect::<Result<_, _>>()?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut dropped = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let line = r + 2;
        let mut values = Vec::with_capacity(used.len());
        let mut missing = false;
        for &c in &used {
            let cell = record.get(c).unwrap_or("");
            if MISSING.contains(&cell) {
                missing = true;
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Data(format!("non-numeric value `{cell}` at line {line}, column `{}`", header[c]))
            })?;
            if !v.is_finite() {
                return Err(CliError::Data(format!("non-finite value `{cell}` at line {line}, column `{}`", header[c])));
            }
            values.push(v);
        }
        if missing {
            dropped += 1;
        } else {
            rows.push(values);
        }
    }
    if rows.is_empty() {
        return Err(CliError::Data("no usable rows after dropping missing values".into()));
    }
    let n = rows.len();
    let p = roles.exposures.len();
    let q = roles.covariates.len();
    let y = DVector::from_fn(n, |i, _| rows[i][0]);
    let x = DMatrix::from_fn(n, p, |i, j| rows[i][1 + j]);
    let c = DMatrix::from_fn(n, q, |i, j| rows[i][1 + p + j]);
    let data = RawData::new(y, x, c, roles.exposures.clone(), roles.covariates.clone())?;
    Ok((data, dropped))
}

/// Reads the table, drops incomplete rows (logged) and standardizes each exposure
/// to mean 0 and sample standard deviation 1.
pub fn ingest(path: &Path, roles: &ColumnRoles) -> Result<RawData, CliError> {
    let (mut data, dropped) = read_table(path, roles)?;
    if dropped > 0 {
        info!("dropped {dropped} rows with missing values; {} rows remain", data.n());
    }
    standardize_exposures(&mut data)?;
    Ok(data)
}

pub fn standardize_exposures(data: &mut RawData) -> Result<(), CliError> {
    let n = data.n();
    if n < 2 {
        return Err(CliError::Data(format!("need at least 2 rows to standardize exposures, got {n}")));
    }
    for (j, mut col) in data.x.column_iter_mut().enumerate() {
        let mean = col.mean();
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        if sd <= 1e-12 * mean.abs().max(1.0) {
            return Err(CliError::Data(format!("exposure `{}` is constant", data.exposure_names[j])));
        }
        col.apply(|v| *v = (*v - mean) / sd);
    }
    Ok(())
}

/// Writes `data` as a comma separated table with columns `y`, exposures, covariates.
/// Values are printed in shortest round-trip form.
pub fn write_table(path: &Path, data: &RawData, outcome: &str) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<&str> = std::iter::once(outcome)
        .chain(data.exposure_names.iter().map(String::as_str))
        .chain(data.covariate_names.iter().map(String::as_str))
        .collect();
    w.write_record(&header)?;
    for i in 0..data.n() {
        let row: Vec<String> = std::iter::once(data.y[i])
            .chain(data.x.row(i).iter().copied())
            .chain(data.c.row(i).iter().copied())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roles(exposures: &[&str], covariates: &[&str]) -> ColumnRoles {
        ColumnRoles {
            outcome: "y".into(),
            exposures: exposures.iter().map(|s| s.to_string()).collect(),
            covariates: covariates.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn complete_three_rows() {
        let (d, dropped) = parse_table("y,a,b,c\n1,2,3,4\n2,3,5,1\n3,1,2,0\n", &roles(&["a", "b"], &["c"])).unwrap();
        assert_eq!((d.n(), d.p(), d.q(), dropped), (3, 2, 1, 0));
        assert_eq!(d.x[(1, 1)], 5.0);
    }

    #[test]
    fn drops_rows_with_missing_exposure() {
        let text = "y\ta\tb\n1\t2\t3\n2\t\t5\n3\t1\t2\n4\t7\t1\n5\t2\t2\n";
        assert_eq!(detect_delimiter(text), b'\t');
        let (d, dropped) = parse_table(text, &roles(&["a", "b"], &[])).unwrap();
        assert_eq!((d.n(), dropped), (4, 1));
    }

    #[test]
    fn unused_missing_columns_are_ignored() {
        let (d, dropped) = parse_table("y,a,b,z\n1,2,3,NA\n2,3,5,\n", &roles(&["a", "b"], &[])).unwrap();
        assert_eq!((d.n(), dropped), (2, 0));
    }

    #[test]
    fn reports_bad_cell_position() {
        let err = parse_table("y,a,b\n1,2,3\n2,x1,5\n", &roles(&["a", "b"], &[])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("`a`"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn missing_column_and_empty_table() {
        assert_eq!(parse_table("y,a\n1,2\n", &roles(&["a", "b"], &[])).unwrap_err().exit_code(), 2);
        assert_eq!(parse_table("y,a,b\n1,,3\n", &roles(&["a", "b"], &[])).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn duplicate_role_is_a_usage_error() {
        assert_eq!(parse_table("y,a,b\n1,2,3\n", &roles(&["a", "a"], &[])).unwrap_err().exit_code(), 1);
    }

    #[test]
    fn eighteen_exposures_eleven_covariates() {
        let ex: Vec<String> = (1..=18).map(|j| format!("e{j}")).collect();
        let cv: Vec<String> = (1..=11).map(|j| format!("c{j}")).collect();
        let header = std::iter::once("y".to_string()).chain(ex.clone()).chain(cv.clone()).collect::<Vec<_>>().join(",");
        let mut text = header + "\n";
        for i in 0..5 {
            let row: Vec<String> = (0..30).map(|c| ((i * 31 + c * 7) % 13).to_string()).collect();
            text += &(row.join(",") + "\n");
        }
        let r = ColumnRoles { outcome: "y".into(), exposures: ex, covariates: cv };
        let (d, _) = parse_table(&text, &r).unwrap();
        assert_eq!((d.p(), d.q()), (18, 11));
    }

    #[test]
    fn standardizes_to_unit_sample_sd() {
        let (mut d, _) = parse_table("y,a,b\n1,1,10\n2,2,20\n3,4,40\n4,5,20\n", &roles(&["a", "b"], &[])).unwrap();
        standardize_exposures(&mut d).unwrap();
        for col in d.x.column_iter() {
            let m = col.mean();
            let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 3.0;
            assert!(m.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        }
    }
}
