//! Time-series CSV files with header `t,u1..um,y1..yp`.

use std::path::Path;

use lmisysid::{Dataset, Matrix};

use crate::error::{CliError, CliResult};

/// Parsed columns of a time-series file.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub t: Vec<f64>,
    pub u: Matrix,
    pub y: Matrix,
}

impl Table {
    /// Sample period from the first two time stamps, 1 for a single sample.
    pub fn dt(&self) -> f64 {
        if self.t.len() >= 2 {
            self.t[1] - self.t[0]
        } else {
            1.0
        }
    }

    pub fn into_dataset(self) -> CliResult<Dataset> {
        let dt = self.dt();
        Ok(Dataset::new(self.u, self.y, dt)?)
    }
}

fn parse_header(headers: &csv::StringRecord, path: &Path) -> CliResult<(usize, usize)> {
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let bad = |msg: String| CliError::input(format!("{}: line 1: {msg}", path.display()));
    if names.first() != Some(&"t") {
        return Err(bad("first column must be 't'".into()));
    }
    let m = names[1..].iter().take_while(|n| n.starts_with('u')).count();
    let p = names.len() - 1 - m;
    for (k, name) in names[1..=m].iter().enumerate() {
        if *name != format!("u{}", k + 1) {
            return Err(bad(format!("column {} is '{name}', expected 'u{}'", k + 2, k + 1)));
        }
    }
    for (k, name) in names[m + 1..].iter().enumerate() {
        if *name != format!("y{}", k + 1) {
            return Err(bad(format!("column {} is '{name}', expected 'y{}'", m + k + 2, k + 1)));
        }
    }
    Ok((m, p))
}

/// Reads a time-series file. Every error names the line and column.
pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CliError::input(format!("{}: {e}", path.display())))?.clone();
    let (m, p) = parse_header(&headers, path)?;
    let width = 1 + m + p;
    let mut t = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CliError::input(format!("{}: line {line}: {e}", path.display())))?;
        if rec.len() != width {
            return Err(CliError::input(format!(
                "{}: line {line}: expected {width} fields, found {}",
                path.display(),
                rec.len()
            )));
        }
        for (j, field) in rec.iter().enumerate() {
            let col = &headers[j];
            let v: f64 = field.parse().map_err(|_| {
                CliError::input(format!("{}: line {line}, column '{col}': '{field}' is not a number", path.display()))
            })?;
            if !v.is_finite() {
                return Err(CliError::input(format!(
                    "{}: line {line}, column '{col}': value is not finite",
                    path.display()
                )));
            }
            if j == 0 {
                if let Some(prev) = t.last() {
                    if v <= *prev {
                        return Err(CliError::input(format!(
                            "{}: line {line}, column 't': time stamps must increase",
                            path.display()
                        )));
                    }
                }
                t.push(v);
            } else {
                values.push(v);
            }
        }
    }
    if t.is_empty() {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    let n = t.len();
    let u = Matrix::from_fn(n, m, |k, j| values[k * (m + p) + j]);
    let y = Matrix::from_fn(n, p, |k, j| values[k * (m + p) + m + j]);
    Ok(Table { t, u, y })
}

pub fn read_dataset(path: &Path) -> CliResult<Dataset> {
    read_table(path)?.into_dataset()
}

/// Writes rows of optional values; `None` becomes an empty field.
pub fn write_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<Option<f64>>>) -> CliResult<()> {
    let io = |e: csv::Error| CliError::input(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        let fields: Vec<String> = row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()).collect();
        w.write_record(&fields).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn write_table(path: &Path, table: &Table) -> CliResult<()> {
    let (m, p) = (table.u.ncols(), table.y.ncols());
    let mut header = vec!["t".to_string()];
    header.extend((1..=m).map(|j| format!("u{j}")));
    header.extend((1..=p).map(|j| format!("y{j}")));
    let rows = (0..table.t.len()).map(|k| {
        let mut row = vec![Some(table.t[k])];
        row.extend(table.u.row(k).iter().map(|v| Some(*v)));
        row.extend(table.y.row(k).iter().map(|v| Some(*v)));
        row
    });
    write_rows(path, &header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn tmp(content: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, content).unwrap();
        (dir, path)
    }

    #[test]
    fn reads_inputs_and_outputs() {
        let (_d, path) = tmp("t,u1,y1,y2\n0,1,2,3\n0.5,-1,4,5\n");
        let tab = read_table(&path).unwrap();
        assert_eq!(tab.u.shape(), (2, 1));
        assert_eq!(tab.y.shape(), (2, 2));
        assert_eq!(tab.y[(1, 1)], 5.0);
        assert_eq!(tab.dt(), 0.5);
    }

    #[test]
    fn no_inputs() {
        let (_d, path) = tmp("t,y1\n0,1\n1,2\n");
        let ds = read_dataset(&path).unwrap();
        assert_eq!(ds.n_inputs(), 0);
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn diagnostics_name_line_and_column() {
        let (_d, path) = tmp("t,u1,y1\n0,1,2\n1,x,3\n");
        let e = read_table(&path).unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("'u1'"), "{e}");
        let (_d, path) = tmp("t,u1,y1\n0,1,NaN\n");
        let e = read_table(&path).unwrap_err().to_string();
        assert!(e.contains("line 2") && e.contains("not finite"), "{e}");
        let (_d, path) = tmp("t,u1,y1\n0,1\n");
        assert!(read_table(&path).unwrap_err().to_string().contains("expected 3 fields"));
        let (_d, path) = tmp("t,u1,z1\n0,1,2\n");
        assert!(read_table(&path).unwrap_err().to_string().contains("expected 'y1'"));
        let (_d, path) = tmp("t,y1\n1,1\n1,2\n");
        assert!(read_table(&path).unwrap_err().to_string().contains("increase"));
        let (_d, path) = tmp("t,y1\n");
        assert!(read_table(&path).unwrap_err().to_string().contains("no data rows"));
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let tab = Table {
            t: vec![0.0, 1.0, 2.0],
            u: Matrix::from_row_slice(3, 1, &[1.0, -1.0, 1.0]),
            y: Matrix::from_row_slice(3, 1, &[0.1, 1.0 / 3.0, -2.5e-17]),
        };
        write_table(&path, &tab).unwrap();
        assert_eq!(read_table(&path).unwrap(), tab);
    }
}
