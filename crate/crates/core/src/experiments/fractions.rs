use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{binomial_se, config_hash, SweepConfig, SweepResult};
use crate::bp::{restart_select, InitScheme, ModelKind};
use crate::classify::{classify_model, StructureLabel};
use crate::error::Result;
use crate::generators::{bipartite_affinity, derive_seed, sample_planted};
use crate::model::ThetaDistribution;

/// Label counts over a batch of samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelShares {
    pub bipartite: usize,
    pub core_periphery: usize,
    pub modular: usize,
    pub uniform: usize,
}

impl LabelShares {
    pub fn add(&mut self, label: StructureLabel) {
        match label {
            StructureLabel::Bipartite => self.bipartite += 1,
            StructureLabel::CorePeriphery => self.core_periphery += 1,
            StructureLabel::Modular => self.modular += 1,
            StructureLabel::Uniform => self.uniform += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.bipartite + self.core_periphery + self.modular + self.uniform
    }

    pub fn fraction(&self, label: StructureLabel) -> f64 {
        let k = match label {
            StructureLabel::Bipartite => self.bipartite,
            StructureLabel::CorePeriphery => self.core_periphery,
            StructureLabel::Modular => self.modular,
            StructureLabel::Uniform => self.uniform,
        };
        if self.total() == 0 {
            0.0
        } else {
            k as f64 / self.total() as f64
        }
    }
}

/// One row of `fig2_fraction_bimodal.csv` / `fig3_fraction_powerlaw.csv`.
///
/// Restricted fractions count samples with the label whose first canonical
/// block holds a fraction of nodes inside the core window, over all samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionPoint {
    pub param: f64,
    pub model: ModelKind,
    pub samples: usize,
    pub failed: usize,
    pub restarts: usize,
    pub fraction_bipartite: f64,
    pub fraction_bipartite_se: f64,
    pub fraction_core_periphery: f64,
    pub fraction_core_periphery_se: f64,
    pub fraction_modular: f64,
    pub fraction_uniform: f64,
    pub fraction_restricted_bipartite: f64,
    pub fraction_restricted_core_periphery: f64,
    pub restricted_samples: usize,
    pub unconverged: usize,
    pub clipped_pairs: usize,
}

struct Outcome {
    label: StructureLabel,
    in_window: bool,
    converged: bool,
    clipped: usize,
}

fn one_sample(cfg: &SweepConfig, dist: ThetaDistribution, model: ModelKind, seed: u64) -> Result<Outcome> {
    let affinity = bipartite_affinity(cfg.c, cfg.r)?;
    let s = sample_planted(&affinity, dist, cfg.n, seed)?;
    let restarts = cfg.restarts_per_sample.max(1);
    let out = restart_select(
        &s.graph,
        2,
        model,
        restarts,
        &InitScheme::MENU,
        derive_seed(seed, 1),
        &cfg.em,
    )?;
    let c = classify_model(&out.best, cfg.rel_tol)?;
    let (lo, hi) = cfg.core_window;
    Ok(Outcome {
        label: c.label,
        in_window: c.first_block_fraction >= lo && c.first_block_fraction <= hi,
        converged: out.best.converged,
        clipped: s.clipped_pairs,
    })
}

fn run_fraction_sweep(
    cfg: &SweepConfig,
    dist_at: impl Fn(f64) -> ThetaDistribution + Sync,
) -> Result<SweepResult<FractionPoint>> {
    cfg.validate()?;
    for &x in &cfg.grid {
        dist_at(x).validate()?;
    }
    let mut jobs = Vec::new();
    for p in 0..cfg.grid.len() {
        for (mi, &model) in cfg.models.iter().enumerate() {
            for s in 0..cfg.samples_per_point {
                jobs.push((p, mi, model, s));
            }
        }
    }
    // the same graphs are shown to every model
    let results: Vec<Result<Outcome>> = jobs
        .par_iter()
        .map(|&(p, _, model, s)| one_sample(cfg, dist_at(cfg.grid[p]), model, cfg.sample_seed(p, s)))
        .collect();

    let mut points = Vec::new();
    for (chunk, (p, _, model, _)) in results
        .chunks(cfg.samples_per_point)
        .zip(jobs.iter().step_by(cfg.samples_per_point))
    {
        let param = cfg.grid[*p];
        let mut shares = LabelShares::default();
        let mut restricted = LabelShares::default();
        let (mut failed, mut unconverged, mut clipped) = (0, 0, 0);
        for r in chunk {
            match r {
                Ok(o) => {
                    shares.add(o.label);
                    if o.in_window {
                        restricted.add(o.label);
                    }
                    unconverged += usize::from(!o.converged);
                    clipped += o.clipped;
                }
                Err(e) => {
                    log::warn!("grid value {param}, {model}: sample failed: {e}");
                    failed += 1;
                }
            }
        }
        let n = shares.total();
        let over_all = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
        let fb = shares.fraction(StructureLabel::Bipartite);
        let fc = shares.fraction(StructureLabel::CorePeriphery);
        points.push(FractionPoint {
            param,
            model: *model,
            samples: n,
            failed,
            restarts: cfg.restarts_per_sample.max(1),
            fraction_bipartite: fb,
            fraction_bipartite_se: binomial_se(fb, n),
            fraction_core_periphery: fc,
            fraction_core_periphery_se: binomial_se(fc, n),
            fraction_modular: shares.fraction(StructureLabel::Modular),
            fraction_uniform: shares.fraction(StructureLabel::Uniform),
            fraction_restricted_bipartite: over_all(restricted.bipartite),
            fraction_restricted_core_periphery: over_all(restricted.core_periphery),
            restricted_samples: restricted.total(),
            unconverged,
            clipped_pairs: clipped,
        });
    }
    Ok(SweepResult {
        config_hash: config_hash(cfg)?,
        seed: cfg.seed,
        points,
    })
}

/// Structure-label fractions of the learned models on bimodal dcSBM samples,
/// one point per (delta, model).
pub fn run_structure_fraction_bimodal(cfg: &SweepConfig) -> Result<SweepResult<FractionPoint>> {
    run_fraction_sweep(cfg, |delta| ThetaDistribution::Bimodal { delta })
}

/// As [`run_structure_fraction_bimodal`] with power-law degree corrections,
/// one point per (alpha, model); every alpha must exceed 3.
pub fn run_structure_fraction_powerlaw(cfg: &SweepConfig) -> Result<SweepResult<FractionPoint>> {
    run_fraction_sweep(cfg, |alpha| ThetaDistribution::PowerLaw { alpha })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shares_sum_to_one() {
        let mut s = LabelShares::default();
        for l in [
            StructureLabel::Bipartite,
            StructureLabel::Bipartite,
            StructureLabel::Uniform,
        ] {
            s.add(l);
        }
        let total: f64 = StructureLabel::ALL.iter().map(|&l| s.fraction(l)).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(LabelShares::default().fraction(StructureLabel::Modular), 0.0);
    }

    #[test]
    fn alpha_at_most_three_is_rejected() {
        let cfg = SweepConfig {
            grid: vec![4.0, 3.0],
            samples_per_point: 1,
            ..Default::default()
        };
        assert!(run_structure_fraction_powerlaw(&cfg).is_err());
    }

    #[test]
    fn small_sweep_is_deterministic() {
        let cfg = SweepConfig {
            grid: vec![0.1, 0.9],
            samples_per_point: 3,
            restarts_per_sample: 2,
            n: 40,
            models: vec![ModelKind::Sbm, ModelKind::DcSbm],
            ..Default::default()
        };
        let a = run_structure_fraction_bimodal(&cfg).unwrap();
        let b = run_structure_fraction_bimodal(&cfg).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(a.points.len(), 4);
        assert_eq!(a.points[1].model, ModelKind::DcSbm);
        for p in &a.points {
            let sum = p.fraction_bipartite + p.fraction_core_periphery + p.fraction_modular + p.fraction_uniform;
            assert!((sum - 1.0).abs() < 1e-12);
            assert_eq!(p.samples + p.failed, 3);
        }
    }
}
