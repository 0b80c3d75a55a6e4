//! Samplers for the SBM and degree-corrected SBM ensembles.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{AffinityMatrix, Assignment, DegreeCorrections, ThetaDistribution};

// Stream ids keep the theta draw and the edge draw of one seed independent.
const THETA_STREAM: u64 = 1;
const EDGE_STREAM: u64 = 2;

/// ChaCha stream `stream` of `seed`; distinct `(seed, stream)` pairs are independent.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Per-sample seed for sample `index` of a sweep with `master_seed`.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    stream_rng(master_seed, index.wrapping_add(0x5eed)).random()
}

/// Two-block disassortative affinity `[[c, c r], [c r, c]]` with equal halves.
pub fn bipartite_affinity(c: f64, r: f64) -> Result<AffinityMatrix> {
    if !(c > 0.0 && r > 0.0 && c.is_finite() && r.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need c > 0 and r > 0, got c={c}, r={r}"
        )));
    }
    AffinityMatrix::new(vec![vec![c, c * r], vec![c * r, c]], vec![0.5, 0.5])
}

pub fn sample_thetas(dist: ThetaDistribution, n: usize, seed: u64) -> Result<DegreeCorrections> {
    dist.validate()?;
    let mut rng = stream_rng(seed, THETA_STREAM);
    let thetas = match dist {
        ThetaDistribution::Constant => vec![1.0; n],
        ThetaDistribution::Bimodal { delta } => {
            let high = n.div_ceil(2);
            let mut t: Vec<f64> = (0..n)
                .map(|i| if i < high { 1.0 + delta } else { 1.0 - delta })
                .collect();
            t.shuffle(&mut rng);
            t
        }
        ThetaDistribution::PowerLaw { alpha } => {
            let tmin = ThetaDistribution::power_law_theta_min(alpha);
            let exponent = -1.0 / (alpha - 1.0);
            (0..n)
                .map(|_| {
                    // inverse CDF; 1 - u lies in (0, 1]
                    let u: f64 = 1.0 - rng.random::<f64>();
                    tmin * u.powf(exponent)
                })
                .collect()
        }
    };
    Ok(DegreeCorrections {
        thetas,
        source: dist,
        seed: Some(seed),
    })
}

/// Contiguous block labels with sizes `floor(n_a N)`; leftover nodes go to block 0.
pub fn planted_assignment(fractions: &[f64], n: usize) -> Assignment {
    let mut sizes: Vec<usize> = fractions
        .iter()
        .map(|&f| (f * n as f64 + 1e-9).floor() as usize)
        .collect();
    let assigned: usize = sizes.iter().sum();
    sizes[0] += n.saturating_sub(assigned);
    let labels = sizes
        .iter()
        .enumerate()
        .flat_map(|(a, &s)| std::iter::repeat_n(a, s))
        .take(n)
        .collect();
    Assignment::new(labels, fractions.len()).expect("labels are below the block count")
}

/// A graph drawn from a planted ensemble together with its generating parameters.
#[derive(Debug, Clone)]
pub struct PlantedSample {
    pub graph: Graph,
    pub assignment: Assignment,
    pub thetas: DegreeCorrections,
    pub affinity: AffinityMatrix,
    pub seed: u64,
    /// Pairs whose link probability exceeded one and was clipped.
    pub clipped_pairs: usize,
}

/// Sidecar record written next to a sample's edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleMetadata {
    pub node_count: usize,
    pub seed: u64,
    pub affinity: Vec<Vec<f64>>,
    pub block_fractions: Vec<f64>,
    pub theta_distribution: ThetaDistribution,
    pub assignment: Vec<usize>,
    pub thetas: Vec<f64>,
    pub clipped_pairs: usize,
    pub edge_count: usize,
}

impl PlantedSample {
    pub fn metadata(&self) -> SampleMetadata {
        SampleMetadata {
            node_count: self.graph.node_count(),
            seed: self.seed,
            affinity: self.affinity.rows(),
            block_fractions: self.affinity.fractions().to_vec(),
            theta_distribution: self.thetas.source,
            assignment: self.assignment.labels().to_vec(),
            thetas: self.thetas.thetas.clone(),
            clipped_pairs: self.clipped_pairs,
            edge_count: self.graph.edge_count(),
        }
    }
}

/// Bernoulli dcSBM: pair `{i, j}` is linked with probability
/// `min(1, theta_i theta_j c_{g_i g_j} / N)`.
pub fn sample_dcsbm(
    affinity: &AffinityMatrix,
    thetas: &DegreeCorrections,
    n: usize,
    seed: u64,
) -> Result<PlantedSample> {
    if thetas.len() != n {
        return Err(Error::InvalidParameter(format!(
            "{} degree corrections for {n} nodes",
            thetas.len()
        )));
    }
    if let Some(t) = thetas.thetas.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "degree correction {t} is not positive"
        )));
    }
    let assignment = planted_assignment(affinity.fractions(), n);
    let mut rng = stream_rng(seed, EDGE_STREAM);
    let inv_n = 1.0 / n as f64;
    let mut edges = Vec::new();
    let mut clipped_pairs = 0;
    let t = &thetas.thetas;
    for i in 0..n {
        let gi = assignment.label(i);
        let row = affinity.row(gi);
        for j in i + 1..n {
            let mut q = t[i] * t[j] * row[assignment.label(j)] * inv_n;
            if q > 1.0 {
                clipped_pairs += 1;
                q = 1.0;
            }
            if rng.random::<f64>() < q {
                edges.push((i, j));
            }
        }
    }
    if clipped_pairs > 0 {
        log::debug!("seed {seed}: {clipped_pairs} pair probabilities clipped to 1");
    }
    Ok(PlantedSample {
        graph: Graph::from_edges(n, edges)?,
        assignment,
        thetas: thetas.clone(),
        affinity: affinity.clone(),
        seed,
        clipped_pairs,
    })
}

pub fn sample_sbm(affinity: &AffinityMatrix, n: usize, seed: u64) -> Result<PlantedSample> {
    sample_dcsbm(affinity, &DegreeCorrections::unit(n), n, seed)
}

/// Draw degree corrections from `dist` and then a dcSBM graph, both from `seed`.
pub fn sample_planted(
    affinity: &AffinityMatrix,
    dist: ThetaDistribution,
    n: usize,
    seed: u64,
) -> Result<PlantedSample> {
    let thetas = sample_thetas(dist, n, seed)?;
    sample_dcsbm(affinity, &thetas, n, seed)
}
