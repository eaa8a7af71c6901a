//! CSV input: comma-separated numbers, with an optional header row detected
//! when every field of the first row is non-numeric.

use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;

use crate::InputError;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Dataset {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    /// Resolves column selectors (header names or 0-based indices) and
    /// returns the selected sub-dataset. An empty selection keeps every column.
    pub fn select(&self, selectors: &[String]) -> Result<Dataset> {
        if selectors.is_empty() {
            return Ok(self.clone());
        }
        let mut picked = Vec::with_capacity(selectors.len());
        for s in selectors {
            let idx = match self.names.iter().position(|n| n == s) {
                Some(i) => i,
                None => match s.parse::<usize>() {
                    Ok(i) if i < self.ncols() => i,
                    _ => bail!(InputError(format!("unknown column {s:?}"))),
                },
            };
            if picked.contains(&idx) {
                bail!(InputError(format!("column {s:?} selected twice")));
            }
            picked.push(idx);
        }
        Ok(Dataset {
            names: picked.iter().map(|&i| self.names[i].clone()).collect(),
            values: self.values.select_columns(&picked),
        })
    }
}

fn is_numeric(field: &str) -> bool {
    field.trim().parse::<f64>().is_ok()
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;

    let mut names: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: malformed CSV", path.display()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(i as u64 + 1);
        if i == 0 && record.iter().all(|f| !is_numeric(f)) {
            names = Some(record.iter().map(str::to_string).collect());
            width = Some(record.len());
            continue;
        }
        if record.len() == 1 && record.get(0) == Some("") {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => bail!(InputError(format!(
                "{}: line {line} has {} fields, expected {w}",
                path.display(),
                record.len()
            ))),
            Some(_) => {}
        }
        let mut row = Vec::with_capacity(record.len());
        for (col, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                InputError(format!(
                    "{}: line {line}, column {}: {field:?} is not a number",
                    path.display(),
                    col + 1
                ))
            })?;
            if !v.is_finite() {
                bail!(InputError(format!(
                    "{}: line {line}, column {}: non-finite value {field}",
                    path.display(),
                    col + 1
                )));
            }
            row.push(v);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!(InputError(format!("{}: no data rows", path.display())));
    }
    let ncols = rows[0].len();
    let names = names.unwrap_or_else(|| (0..ncols).map(|i| format!("x{i}")).collect());
    let values = DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]);
    Ok(Dataset { names, values })
}
