use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{config_hash, SweepResult};
use crate::bp::{restart_select, EmConfig, InitScheme, ModelKind};
use crate::classify::{classify_model, StructureLabel, DEFAULT_REL_TOL};
use crate::error::{Error, Result};
use crate::generators::derive_seed;
use crate::graph::{degree_dispersion, density, Graph, SnapshotSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggConfig {
    /// Cumulative horizons in snapshots (days) from the start of the series.
    pub horizons: Vec<usize>,
    pub restarts: usize,
    pub models: Vec<ModelKind>,
    pub seed: u64,
    pub em: EmConfig,
    pub rel_tol: f64,
    /// Compute metrics and run inference on the non-isolated nodes only.
    pub restrict_nonisolated: bool,
}

impl Default for AggConfig {
    fn default() -> Self {
        Self {
            horizons: vec![1, 2, 3, 5, 10, 20, 40],
            restarts: 20,
            models: vec![ModelKind::Sbm, ModelKind::DcSbm],
            seed: 1,
            em: EmConfig::default(),
            rel_tol: DEFAULT_REL_TOL,
            restrict_nonisolated: true,
        }
    }
}

/// One row of `agg_sweep.csv`. Normalized affinities are in canonical block
/// order (`p11_hat >= p22_hat`); failed inferences leave them empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggRow {
    pub horizon_days: usize,
    pub rho: f64,
    pub r_p: f64,
    pub model: ModelKind,
    pub p11_hat: Option<f64>,
    pub p12_hat: Option<f64>,
    pub p22_hat: Option<f64>,
    pub label: Option<StructureLabel>,
}

fn infer(g: &Graph, model: ModelKind, cfg: &AggConfig, seed: u64) -> Result<(f64, f64, f64, StructureLabel)> {
    if g.edge_count() == 0 {
        return Err(Error::EmptyNodeSet("no edges to learn from"));
    }
    let out = restart_select(g, 2, model, cfg.restarts.max(1), &InitScheme::MENU, seed, &cfg.em)?;
    let c = classify_model(&out.best, cfg.rel_tol)?;
    let (c11, c12, c22) = c.witness;
    let total = c11 + 2.0 * c12 + c22;
    if total <= 0.0 {
        return Err(Error::ZeroAffinity);
    }
    Ok((c11 / total, c12 / total, c22 / total, c.label))
}

/// Density, degree dispersion and learned structure of the cumulative
/// aggregate at each horizon, for each model.
pub fn run_aggregation_sweep(series: &SnapshotSeries, cfg: &AggConfig) -> Result<SweepResult<AggRow>> {
    if cfg.horizons.is_empty() || cfg.models.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one horizon and one model".into(),
        ));
    }
    if let Some(h) = cfg.horizons.iter().find(|&&h| h == 0 || h > series.len()) {
        return Err(Error::InvalidParameter(format!(
            "horizon {h} outside 1..={} days",
            series.len()
        )));
    }
    let graphs: Vec<(Graph, f64, f64)> = cfg
        .horizons
        .iter()
        .map(|&h| {
            let full = series.aggregate_first(h)?;
            let rho = density(&full, cfg.restrict_nonisolated).unwrap_or(0.0);
            let r_p = degree_dispersion(&full, cfg.restrict_nonisolated).unwrap_or(0.0);
            let g = if cfg.restrict_nonisolated {
                full.induced_subgraph(&full.non_isolated())?
            } else {
                full
            };
            Ok((g, rho, r_p))
        })
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, ModelKind)> = (0..cfg.horizons.len())
        .flat_map(|k| cfg.models.iter().map(move |&m| (k, m)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(k, model)| {
            let (g, rho, r_p) = &graphs[k];
            let h = cfg.horizons[k];
            let fitted = infer(g, model, cfg, derive_seed(cfg.seed, h as u64));
            if let Err(e) = &fitted {
                log::warn!("horizon {h}, {model}: inference failed: {e}");
            }
            let fitted = fitted.ok();
            AggRow {
                horizon_days: h,
                rho: *rho,
                r_p: *r_p,
                model,
                p11_hat: fitted.map(|f| f.0),
                p12_hat: fitted.map(|f| f.1),
                p22_hat: fitted.map(|f| f.2),
                label: fitted.map(|f| f.3),
            }
        })
        .collect();
    Ok(SweepResult {
        config_hash: config_hash(cfg)?,
        seed: cfg.seed,
        points: rows,
    })
}
