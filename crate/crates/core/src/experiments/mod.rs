//! Monte-Carlo drivers behind the figure CSVs, plus run manifests.

mod aggregation;
mod crossing;
mod fractions;
mod ordering;

pub use aggregation::{run_aggregation_sweep, AggConfig, AggRow};
pub use crossing::{empirical_crossing, run_crossing_experiment, CrossingPoint};
pub use fractions::{run_structure_fraction_bimodal, run_structure_fraction_powerlaw, FractionPoint, LabelShares};
pub use ordering::{laplacian_ordering, LaplacianOrder};

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bp::{EmConfig, ModelKind};
use crate::classify::DEFAULT_REL_TOL;
use crate::error::{Error, Result};
use crate::generators::derive_seed;

/// Shared settings of the synthetic sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// Delta values (bimodal sweeps) or alpha values (power-law sweep).
    pub grid: Vec<f64>,
    pub samples_per_point: usize,
    /// Zero skips learning where it is optional (the crossing sweep).
    pub restarts_per_sample: usize,
    pub n: usize,
    pub c: f64,
    pub r: f64,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    pub em: EmConfig,
    pub rel_tol: f64,
    /// Core-size window of the restricted counts.
    pub core_window: (f64, f64),
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            grid: (1..=9).map(|k| k as f64 / 10.0).collect(),
            samples_per_point: 100,
            restarts_per_sample: 20,
            n: 80,
            c: 2.0,
            r: 5.0,
            models: vec![ModelKind::Sbm],
            seed: 1,
            em: EmConfig::default(),
            rel_tol: DEFAULT_REL_TOL,
            core_window: (0.4, 0.6),
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.grid.is_empty() {
            return bad("grid is empty".into());
        }
        if let Some(x) = self.grid.iter().find(|x| !x.is_finite()) {
            return bad(format!("grid value {x} is not finite"));
        }
        if self.samples_per_point == 0 {
            return bad("samples_per_point must be >= 1".into());
        }
        if self.n < 4 {
            return bad(format!("n = {} is below 4", self.n));
        }
        if !(self.c > 0.0 && self.r > 0.0 && self.c.is_finite() && self.r.is_finite()) {
            return bad("c and r must be positive".into());
        }
        if self.models.is_empty() {
            return bad("model list is empty".into());
        }
        let (lo, hi) = self.core_window;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return bad(format!("core window ({lo}, {hi}) is not inside [0, 1]"));
        }
        Ok(())
    }

    /// Seed of sample `sample` at grid point `point`.
    pub fn sample_seed(&self, point: usize, sample: usize) -> u64 {
        derive_seed(derive_seed(self.seed, point as u64), sample as u64)
    }
}

/// Mean and standard error of the mean over the finite values of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let se = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Some(Stat {
            mean,
            se,
            count: v.len(),
        })
    }
}

/// Binomial standard error of a fraction `p` estimated from `n` trials.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Sweep output with the provenance needed to rerun it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult<P> {
    pub config_hash: String,
    pub seed: u64,
    pub points: Vec<P>,
}

/// Hex SHA-256 of the JSON form of `config`.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    let text = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&text)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: Option<u64>,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new<T: Serialize>(command: &str, seed: Option<u64>, config: &T, outputs: Vec<String>) -> Result<Self> {
        Ok(Self {
            tool: "blockstruct".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config_hash: config_hash(config)?,
            config: serde_json::to_value(config)?,
            outputs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }
}

/// Serialize `rows` as a headed CSV file; `None` fields become empty cells.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_skips_non_finite() {
        let s = Stat::of(&[1.0, 2.0, 3.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(s.count, 3);
        assert!((s.mean - 2.0).abs() < 1e-15);
        assert!((s.se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(Stat::of(&[f64::NAN]).is_none());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = SweepConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        b.seed = 2;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn config_validation() {
        assert!(SweepConfig::default().validate().is_ok());
        assert!(SweepConfig {
            grid: vec![],
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SweepConfig {
            n: 3,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SweepConfig {
            samples_per_point: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let parsed: std::result::Result<SweepConfig, _> = serde_json::from_str(r#"{"bogus": 1}"#);
        assert!(parsed.is_err());
    }
}
