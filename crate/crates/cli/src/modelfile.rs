//! Model files: TOML with one row-major array per matrix.
//!
//! ```toml
//! format = "lmisysid-model"
//! version = 1
//! a = [[0.7, 0.0], [0.0, 1.0]]
//! b = [[0.5], [0.0]]
//! c = [[1.0, 1.0]]
//! d = [[0.0]]
//! x0 = [0.0, 0.0]
//! k = [[0.3], [0.2]]
//! re = [[0.1]]
//! ```

use std::fs;
use std::path::Path;

use lmisysid::{InnovationModel, Matrix, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const MODEL_FORMAT: &str = "lmisysid-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub x0: Vec<f64>,
    pub k: Vec<Vec<f64>>,
    pub re: Vec<Vec<f64>>,
}

/// Row arrays of a matrix.
pub fn rows_of(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Matrix from row arrays; no rows gives a `0 x 0` matrix.
pub fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> CliResult<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if let Some(i) = rows.iter().position(|r| r.len() != cols) {
        return Err(CliError::input(format!(
            "{name}: row {} has {} entries, row 1 has {cols}",
            i + 1,
            rows[i].len()
        )));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CliError::input(format!("{name}: entries must be finite")));
    }
    Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

impl ModelFile {
    pub fn from_model(m: &InnovationModel) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            a: rows_of(&m.a),
            b: rows_of(&m.b),
            c: rows_of(&m.c),
            d: rows_of(&m.d),
            x0: m.x0.iter().copied().collect(),
            k: rows_of(&m.k),
            re: rows_of(&m.re),
        }
    }

    pub fn to_model(&self) -> CliResult<InnovationModel> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(CliError::input(format!(
                "unsupported model format '{}' version {} (expected '{MODEL_FORMAT}' version {MODEL_VERSION})",
                self.format, self.version
            )));
        }
        let a = matrix_from_rows(&self.a, "a")?;
        let n = a.nrows();
        let width = |rows: &[Vec<f64>], name: &str, r: usize| -> CliResult<Matrix> {
            let m = matrix_from_rows(rows, name)?;
            if m.nrows() != r {
                return Err(CliError::input(format!("{name} has {} rows, expected {r}", m.nrows())));
            }
            Ok(m)
        };
        let c = matrix_from_rows(&self.c, "c")?;
        let p = c.nrows();
        let b = width(&self.b, "b", n)?;
        let d = width(&self.d, "d", p)?;
        let k = width(&self.k, "k", n)?;
        let re = width(&self.re, "re", p)?;
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(CliError::input("x0: entries must be finite"));
        }
        Ok(InnovationModel::new(a, b, c, d, Vector::from_vec(self.x0.clone()), k, re)?)
    }
}

pub fn read_model(path: &Path) -> CliResult<InnovationModel> {
    let text = fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let file: ModelFile = toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    file.to_model().map_err(|e| e.context(path.display()))
}

pub fn write_model(path: &Path, model: &InnovationModel) -> CliResult<()> {
    let text = toml::to_string(&ModelFile::from_model(model)).map_err(|e| CliError::input(e.to_string()))?;
    fs::write(path, text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}
