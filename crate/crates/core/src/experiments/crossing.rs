use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{config_hash, Stat, SweepConfig, SweepResult};
use crate::bp::{restart_select, InitScheme, ModelKind};
use crate::classify::core_fraction_filter;
use crate::error::{Error, Result};
use crate::generators::{bipartite_affinity, derive_seed, sample_planted, PlantedSample};
use crate::likelihood::exact_loglik;
use crate::model::{AffinityMatrix, Assignment, DegreeCorrections, ThetaDistribution};

/// One row of `fig1_crossing.csv`; log-likelihoods are per node, in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingPoint {
    pub delta: f64,
    pub samples: usize,
    pub failed: usize,
    pub clipped_pairs: usize,
    pub l_real_mean: Option<f64>,
    pub l_real_se: Option<f64>,
    pub l_bs_mean: Option<f64>,
    pub l_bs_se: Option<f64>,
    pub l_db_mean: Option<f64>,
    pub l_db_se: Option<f64>,
    pub l_bp_mean: Option<f64>,
    pub l_bp_se: Option<f64>,
    pub l_bp_count: usize,
    pub l_bp_restricted_mean: Option<f64>,
    pub l_bp_restricted_se: Option<f64>,
    pub l_bp_restricted_count: usize,
}

struct SampleLogliks {
    real: f64,
    bs: f64,
    db: f64,
    bp: Option<f64>,
    bp_restricted: Option<f64>,
    clipped: usize,
}

/// Degree-based two-block model: nodes grouped by `theta >= 1`, affinity
/// `c_tilde theta_a theta_b` with `theta_a` the group mean.
pub fn degree_based_model(sample: &PlantedSample) -> Result<(AffinityMatrix, Assignment)> {
    let t = &sample.thetas.thetas;
    let n = t.len();
    let labels: Vec<usize> = t.iter().map(|&x| usize::from(x < 1.0)).collect();
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (&l, &x) in labels.iter().zip(t) {
        sums[l] += x;
        counts[l] += 1;
    }
    let theta: Vec<f64> = (0..2)
        .map(|a| if counts[a] > 0 { sums[a] / counts[a] as f64 } else { 1.0 })
        .collect();
    let ct = sample.affinity.mean_degree();
    let rows = (0..2)
        .map(|a| (0..2).map(|b| ct * theta[a] * theta[b]).collect())
        .collect();
    let fractions = counts.iter().map(|&k| k as f64 / n as f64).collect();
    Ok((AffinityMatrix::new(rows, fractions)?, Assignment::new(labels, 2)?))
}

fn one_sample(cfg: &SweepConfig, affinity: &AffinityMatrix, delta: f64, seed: u64) -> Result<SampleLogliks> {
    let s = sample_planted(affinity, ThetaDistribution::Bimodal { delta }, cfg.n, seed)?;
    let unit = DegreeCorrections::unit(cfg.n);
    let real = exact_loglik(&s.graph, &s.affinity, &s.thetas, &s.assignment)?.per_node();
    let bs = exact_loglik(&s.graph, &s.affinity, &unit, &s.assignment)?.per_node();
    let (db_aff, db_assign) = degree_based_model(&s)?;
    let db = exact_loglik(&s.graph, &db_aff, &unit, &db_assign)?.per_node();
    let (bp, bp_restricted) = if cfg.restarts_per_sample > 0 && s.graph.edge_count() > 0 {
        let out = restart_select(
            &s.graph,
            2,
            ModelKind::Sbm,
            cfg.restarts_per_sample,
            &InitScheme::MENU,
            derive_seed(seed, 1),
            &cfg.em,
        )?;
        let learned = out.best;
        let assign = learned.assignment.clone();
        let l = exact_loglik(&s.graph, &learned.affinity, &unit, &assign)
            .map(|r| r.per_node())
            .unwrap_or(f64::NAN);
        let keep = learned.blocks() == 2 && core_fraction_filter(&learned, cfg.core_window.0, cfg.core_window.1)?;
        (Some(l), keep.then_some(l))
    } else {
        (None, None)
    };
    Ok(SampleLogliks {
        real,
        bs,
        db,
        bp,
        bp_restricted,
        clipped: s.clipped_pairs,
    })
}

/// Mean exact log-likelihoods per node of the true, block-structure,
/// degree-based and BP-learned SBM descriptions of bimodal dcSBM samples,
/// one point per delta in `cfg.grid`.
pub fn run_crossing_experiment(cfg: &SweepConfig) -> Result<SweepResult<CrossingPoint>> {
    cfg.validate()?;
    if let Some(d) = cfg.grid.iter().find(|d| !(0.0..1.0).contains(*d)) {
        return Err(Error::InvalidParameter(format!("delta {d} outside [0, 1)")));
    }
    let affinity = bipartite_affinity(cfg.c, cfg.r)?;
    let jobs: Vec<(usize, usize)> = (0..cfg.grid.len())
        .flat_map(|p| (0..cfg.samples_per_point).map(move |s| (p, s)))
        .collect();
    let results: Vec<Result<SampleLogliks>> = jobs
        .par_iter()
        .map(|&(p, s)| one_sample(cfg, &affinity, cfg.grid[p], cfg.sample_seed(p, s)))
        .collect();

    let mut points = Vec::with_capacity(cfg.grid.len());
    for (p, &delta) in cfg.grid.iter().enumerate() {
        let chunk = &results[p * cfg.samples_per_point..(p + 1) * cfg.samples_per_point];
        let ok: Vec<&SampleLogliks> = chunk.iter().filter_map(|r| r.as_ref().ok()).collect();
        for e in chunk.iter().filter_map(|r| r.as_ref().err()) {
            log::warn!("delta {delta}: sample failed: {e}");
        }
        let col = |f: &dyn Fn(&SampleLogliks) -> Option<f64>| -> Option<Stat> {
            Stat::of(&ok.iter().filter_map(|s| f(s)).collect::<Vec<_>>())
        };
        let real = col(&|s| Some(s.real));
        let bs = col(&|s| Some(s.bs));
        let db = col(&|s| Some(s.db));
        let bp = col(&|s| s.bp);
        let bpr = col(&|s| s.bp_restricted);
        points.push(CrossingPoint {
            delta,
            samples: ok.len(),
            failed: chunk.len() - ok.len(),
            clipped_pairs: ok.iter().map(|s| s.clipped).sum(),
            l_real_mean: real.map(|s| s.mean),
            l_real_se: real.map(|s| s.se),
            l_bs_mean: bs.map(|s| s.mean),
            l_bs_se: bs.map(|s| s.se),
            l_db_mean: db.map(|s| s.mean),
            l_db_se: db.map(|s| s.se),
            l_bp_mean: bp.map(|s| s.mean),
            l_bp_se: bp.map(|s| s.se),
            l_bp_count: bp.map_or(0, |s| s.count),
            l_bp_restricted_mean: bpr.map(|s| s.mean),
            l_bp_restricted_se: bpr.map(|s| s.se),
            l_bp_restricted_count: bpr.map_or(0, |s| s.count),
        });
    }
    Ok(SweepResult {
        config_hash: config_hash(cfg)?,
        seed: cfg.seed,
        points,
    })
}

/// First delta where the mean `L_bs - L_db` changes sign from positive,
/// linearly interpolated between grid points.
pub fn empirical_crossing(points: &[CrossingPoint]) -> Option<f64> {
    let diffs: Vec<(f64, f64)> = points
        .iter()
        .filter_map(|p| Some((p.delta, p.l_bs_mean? - p.l_db_mean?)))
        .collect();
    diffs.windows(2).find_map(|w| {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        (y0 > 0.0 && y1 <= 0.0).then(|| x0 + (x1 - x0) * y0 / (y0 - y1))
    })
}
