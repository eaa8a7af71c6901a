use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::InputError;

/// Quantile levels reported by default, in percent.
pub const DEFAULT_LEVELS_PCT: [f64; 18] = [
    0.0, 0.1, 0.5, 1.0, 5.0, 10.0, 20.0, 25.0, 50.0, 75.0, 80.0, 90.0, 95.0, 99.0, 99.5, 99.9, 99.99, 100.0,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    /// Header names or 0-based indices; empty means all columns.
    pub columns: Vec<String>,
    /// Index sets (into the selected columns) for group statistics.
    pub groups: Vec<Vec<usize>>,
    /// Even cumulant orders of the row sum to match, `2, 4, …`.
    pub orders: Vec<usize>,
    pub components: usize,
    pub n: Option<usize>,
    pub replicates: usize,
    pub seed: Option<u64>,
    /// Quantile levels in percent.
    pub levels: Vec<f64>,
    pub block: Option<usize>,
    pub band_probability: f64,
    pub out_dir: PathBuf,
    pub model: Option<PathBuf>,
    pub json: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: None,
            columns: Vec::new(),
            groups: Vec::new(),
            orders: vec![2, 4, 6],
            components: cgflab_core::estimation::DEFAULT_COMPONENTS,
            n: None,
            replicates: 200,
            seed: None,
            levels: DEFAULT_LEVELS_PCT.to_vec(),
            block: None,
            band_probability: 0.95,
            out_dir: PathBuf::from("."),
            model: None,
            json: false,
        }
    }
}

/// Flags that override fields of the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    /// Comma-separated header names or 0-based indices.
    #[arg(long, global = true, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    /// Groups as `0,1,2;3,4`.
    #[arg(long, global = true)]
    pub groups: Option<String>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub orders: Option<Vec<usize>>,
    #[arg(long, global = true)]
    pub components: Option<usize>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Quantile levels in percent, comma-separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub levels: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub block: Option<usize>,
    #[arg(long, global = true)]
    pub band_probability: Option<f64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Model document (default `<out-dir>/model.json`).
    #[arg(long, global = true)]
    pub model: Option<PathBuf>,
    /// Print results as JSON.
    #[arg(long, global = true)]
    pub json: bool,
}

fn parse_groups(text: &str) -> Result<Vec<Vec<usize>>> {
    text.split(';')
        .filter(|g| !g.trim().is_empty())
        .map(|g| {
            g.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| InputError(format!("bad group index {v:?}")).into())
                })
                .collect()
        })
        .collect()
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| InputError(format!("{}: {e}", path.display())))
            .map_err(Into::into)
    }

    /// Config file (if any) with flags applied on top.
    pub fn resolve(flags: &Overrides) -> Result<Self> {
        let mut c = match &flags.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(v) = &flags.input {
            c.input = Some(v.clone());
        }
        if let Some(v) = &flags.columns {
            c.columns = v.clone();
        }
        if let Some(v) = &flags.groups {
            c.groups = parse_groups(v)?;
        }
        if let Some(v) = &flags.orders {
            c.orders = v.clone();
        }
        if let Some(v) = flags.components {
            c.components = v;
        }
        if let Some(v) = flags.n {
            c.n = Some(v);
        }
        if let Some(v) = flags.replicates {
            c.replicates = v;
        }
        if let Some(v) = flags.seed {
            c.seed = Some(v);
        }
        if let Some(v) = &flags.levels {
            c.levels = v.clone();
        }
        if let Some(v) = flags.block {
            c.block = Some(v);
        }
        if let Some(v) = flags.band_probability {
            c.band_probability = v;
        }
        if let Some(v) = &flags.out_dir {
            c.out_dir = v.clone();
        }
        if let Some(v) = &flags.model {
            c.model = Some(v.clone());
        }
        c.json |= flags.json;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.orders.is_empty() || self.orders.iter().enumerate().any(|(i, &o)| o != 2 * (i + 1)) {
            bail!(InputError(format!(
                "orders must be 2, 4, … consecutively, got {:?}",
                self.orders
            )));
        }
        if self.components == 0 {
            bail!(InputError("components must be >= 1".into()));
        }
        if self.levels.iter().any(|l| !(0.0..=100.0).contains(l)) {
            bail!(InputError("levels are percentages in [0, 100]".into()));
        }
        Ok(())
    }

    pub fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| InputError("no input file (use --input or the config)".into()).into())
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| InputError("a seed is required (use --seed or the config)".into()).into())
    }

    pub fn model_path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.out_dir.join("model.json"))
    }

    pub fn level_fractions(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l / 100.0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"seed": 1, "replicates": 10, "columns": ["a"]}"#).unwrap();
        let flags = Overrides {
            config: Some(path),
            seed: Some(7),
            groups: Some("0,1;2".into()),
            ..Default::default()
        };
        let c = RunConfig::resolve(&flags).unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.replicates, 10);
        assert_eq!(c.columns, ["a"]);
        assert_eq!(c.groups, vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn bad_config_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        std::fs::write(&path, r#"{"sead": 1}"#).unwrap();
        let flags = Overrides {
            config: Some(path),
            ..Default::default()
        };
        assert!(RunConfig::resolve(&flags).is_err());
        let flags = Overrides {
            orders: Some(vec![2, 6]),
            ..Default::default()
        };
        assert!(RunConfig::resolve(&flags).is_err());
    }
}
