//! Two-block structure labels: bipartite, core-periphery, modular or uniform.

use serde::{Deserialize, Serialize};

use crate::bp::LearnedModel;
use crate::error::{Error, Result};
use crate::model::AffinityMatrix;

pub const DEFAULT_REL_TOL: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureLabel {
    Bipartite,
    CorePeriphery,
    Modular,
    Uniform,
}

impl StructureLabel {
    pub const ALL: [StructureLabel; 4] = [
        StructureLabel::Bipartite,
        StructureLabel::CorePeriphery,
        StructureLabel::Modular,
        StructureLabel::Uniform,
    ];

    pub fn token(&self) -> &'static str {
        match self {
            StructureLabel::Bipartite => "bipartite",
            StructureLabel::CorePeriphery => "core_periphery",
            StructureLabel::Modular => "modular",
            StructureLabel::Uniform => "uniform",
        }
    }
}

impl std::fmt::Display for StructureLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// A label with the canonically ordered affinities that justify it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub label: StructureLabel,
    /// `(c_11, c_12, c_22)` after relabeling so that `c_11 >= c_22`.
    pub witness: (f64, f64, f64),
    /// Fraction of nodes in canonical block 1.
    pub first_block_fraction: f64,
    /// Set for core-periphery labels only.
    pub core_fraction: Option<f64>,
    /// True when the canonical order swapped the two input blocks.
    pub swapped: bool,
}

impl Classification {
    /// Token followed by the witness triple.
    pub fn to_record(&self) -> String {
        format!(
            "{} {} {} {}",
            self.label, self.witness.0, self.witness.1, self.witness.2
        )
    }
}

/// `p_ab / sum_ab p_ab` over the full `m x m` grid.
pub fn normalize_affinity(affinity: &AffinityMatrix) -> Result<Vec<Vec<f64>>> {
    let total: f64 = affinity.entries().iter().sum();
    if total <= 0.0 {
        return Err(Error::ZeroAffinity);
    }
    Ok(affinity
        .rows()
        .into_iter()
        .map(|r| r.into_iter().map(|v| v / total).collect())
        .collect())
}

fn rel_diff(x: f64, y: f64) -> f64 {
    let scale = x.abs().max(y.abs());
    if scale == 0.0 {
        0.0
    } else {
        (x - y).abs() / scale
    }
}

pub fn classify_affinity(affinity: &AffinityMatrix, rel_tol: f64) -> Result<Classification> {
    if affinity.blocks() != 2 {
        return Err(Error::Unsupported(format!(
            "structure labels need 2 blocks, got {}",
            affinity.blocks()
        )));
    }
    let swapped = affinity.get(1, 1) > affinity.get(0, 0);
    let (c11, c22) = if swapped {
        (affinity.get(1, 1), affinity.get(0, 0))
    } else {
        (affinity.get(0, 0), affinity.get(1, 1))
    };
    let c12 = affinity.get(0, 1);
    let first = affinity.fractions()[usize::from(swapped)];
    let spread = rel_diff(c11, c12).max(rel_diff(c11, c22)).max(rel_diff(c12, c22));
    let label = if spread < rel_tol {
        StructureLabel::Uniform
    } else if c12 > c11 {
        StructureLabel::Bipartite
    } else if c12 < c22 {
        StructureLabel::Modular
    } else {
        StructureLabel::CorePeriphery
    };
    Ok(Classification {
        label,
        witness: (c11, c12, c22),
        first_block_fraction: first,
        core_fraction: (label == StructureLabel::CorePeriphery).then_some(first),
        swapped,
    })
}

/// Label a learned model; a model that collapsed to one block is uniform.
pub fn classify_model(model: &LearnedModel, rel_tol: f64) -> Result<Classification> {
    if model.blocks() == 1 {
        let c = model.affinity.get(0, 0);
        return Ok(Classification {
            label: StructureLabel::Uniform,
            witness: (c, c, c),
            first_block_fraction: 1.0,
            core_fraction: None,
            swapped: false,
        });
    }
    classify_affinity(&model.affinity, rel_tol)
}

/// True iff the canonical first-block fraction lies in `[lo, hi]`.
pub fn core_fraction_filter(model: &LearnedModel, lo: f64, hi: f64) -> Result<bool> {
    let c = classify_model(model, DEFAULT_REL_TOL)?;
    Ok(c.first_block_fraction >= lo && c.first_block_fraction <= hi)
}

/// Label agreement maximised over block permutations and rescaled by chance:
/// `(max_pi agree(pi) - max_a n_a) / (1 - max_a n_a)` with `n_a` the true
/// block fractions. 1 is perfect recovery, 0 is no better than guessing the
/// largest block.
pub fn overlap(truth: &[usize], estimate: &[usize], blocks: usize) -> Result<f64> {
    if truth.len() != estimate.len() || truth.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "label vectors of length {} and {}",
            truth.len(),
            estimate.len()
        )));
    }
    if blocks == 0 || blocks > 8 || truth.iter().chain(estimate).any(|&l| l >= blocks) {
        return Err(Error::InvalidParameter(format!(
            "labels must lie in 0..{blocks} with 1..=8 blocks"
        )));
    }
    let n = truth.len() as f64;
    let mut confusion = vec![0usize; blocks * blocks];
    let mut sizes = vec![0usize; blocks];
    for (&t, &e) in truth.iter().zip(estimate) {
        confusion[t * blocks + e] += 1;
        sizes[t] += 1;
    }
    let mut perm: Vec<usize> = (0..blocks).collect();
    let mut best = 0;
    permute(&mut perm, 0, &mut |p| {
        let hits = (0..blocks).map(|a| confusion[a * blocks + p[a]]).sum::<usize>();
        best = best.max(hits);
    });
    let chance = *sizes.iter().max().expect("blocks > 0") as f64 / n;
    if chance >= 1.0 {
        return Ok(1.0);
    }
    Ok((best as f64 / n - chance) / (1.0 - chance))
}

fn permute(p: &mut Vec<usize>, k: usize, visit: &mut impl FnMut(&[usize])) {
    if k == p.len() {
        visit(p);
        return;
    }
    for i in k..p.len() {
        p.swap(k, i);
        permute(p, k + 1, visit);
        p.swap(k, i);
    }
}
