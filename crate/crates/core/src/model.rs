//! Parameter types shared by the generators, the likelihood and the inference engine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRACTION_TOL: f64 = 1e-9;

/// Symmetric `m x m` matrix of scaled affinities `c_ab = N p_ab` together with
/// the block fractions `n_a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffinityMatrix {
    m: usize,
    c: Vec<f64>,
    fractions: Vec<f64>,
}

impl AffinityMatrix {
    pub fn new(rows: Vec<Vec<f64>>, fractions: Vec<f64>) -> Result<Self> {
        let m = rows.len();
        if m == 0 || rows.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidParameter(
                "affinity must be a non-empty square matrix".into(),
            ));
        }
        Self::from_flat(m, rows.into_iter().flatten().collect(), fractions)
    }

    pub fn from_flat(m: usize, c: Vec<f64>, fractions: Vec<f64>) -> Result<Self> {
        if m == 0 || c.len() != m * m || fractions.len() != m {
            return Err(Error::InvalidParameter(format!(
                "affinity shape mismatch: m={m}, {} entries, {} fractions",
                c.len(),
                fractions.len()
            )));
        }
        for a in 0..m {
            for b in 0..m {
                let v = c[a * m + b];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidParameter(format!("c[{a}][{b}] = {v} is not >= 0")));
                }
                let w = c[b * m + a];
                if (v - w).abs() > 1e-12 * v.abs().max(w.abs()).max(1.0) {
                    return Err(Error::InvalidParameter(format!("c[{a}][{b}] != c[{b}][{a}]")));
                }
            }
        }
        if fractions.iter().any(|&f| !f.is_finite() || f < 0.0) {
            return Err(Error::InvalidParameter("block fractions must be >= 0".into()));
        }
        let total: f64 = fractions.iter().sum();
        if (total - 1.0).abs() > FRACTION_TOL {
            return Err(Error::InvalidParameter(format!(
                "block fractions sum to {total}, not 1"
            )));
        }
        Ok(Self { m, c, fractions })
    }

    /// Equal block fractions.
    pub fn with_uniform_fractions(rows: Vec<Vec<f64>>) -> Result<Self> {
        let m = rows.len().max(1);
        Self::new(rows, vec![1.0 / m as f64; m])
    }

    pub fn blocks(&self) -> usize {
        self.m
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.c[a * self.m + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.c[a * self.m..(a + 1) * self.m]
    }

    pub fn entries(&self) -> &[f64] {
        &self.c
    }

    pub fn fractions(&self) -> &[f64] {
        &self.fractions
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.c.chunks(self.m).map(<[f64]>::to_vec).collect()
    }

    /// Link probability `p_ab = c_ab / N`.
    pub fn probability(&self, a: usize, b: usize, n: usize) -> f64 {
        self.get(a, b) / n as f64
    }

    /// Plain average of the entries, `sum_ab c_ab / m^2`.
    pub fn entry_mean(&self) -> f64 {
        self.c.iter().sum::<f64>() / (self.m * self.m) as f64
    }

    /// Expected degree of a node with unit degree correction:
    /// `sum_ab c_ab n_a n_b`.
    pub fn mean_degree(&self) -> f64 {
        let mut s = 0.0;
        for a in 0..self.m {
            for b in 0..self.m {
                s += self.get(a, b) * self.fractions[a] * self.fractions[b];
            }
        }
        s
    }

    /// Expected degree of a node in block `a`: `sum_b c_ab n_b`.
    pub fn block_degree(&self, a: usize) -> f64 {
        (0..self.m).map(|b| self.get(a, b) * self.fractions[b]).sum()
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_flat(
            self.m,
            self.c.iter().map(|v| v * factor).collect(),
            self.fractions.clone(),
        )
    }

    /// Same parameters with the block fractions replaced.
    pub fn with_fractions(&self, fractions: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.m, self.c.clone(), fractions)
    }

    /// Relabel blocks: new block `k` is old block `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = self.m;
        let mut c = vec![0.0; m * m];
        for a in 0..m {
            for b in 0..m {
                c[a * m + b] = self.get(perm[a], perm[b]);
            }
        }
        Self {
            m,
            c,
            fractions: perm.iter().map(|&p| self.fractions[p]).collect(),
        }
    }
}

/// Distribution of the degree corrections; every variant has mean one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ThetaDistribution {
    Constant,
    /// Half the nodes at `1 + delta`, half at `1 - delta`.
    Bimodal {
        delta: f64,
    },
    /// Pareto tail `theta^-alpha` above `theta_min = (alpha - 2) / (alpha - 1)`.
    PowerLaw {
        alpha: f64,
    },
}

impl ThetaDistribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Constant => Ok(()),
            Self::Bimodal { delta } if (0.0..1.0).contains(&delta) => Ok(()),
            Self::Bimodal { delta } => Err(Error::InvalidParameter(format!(
                "bimodal delta must lie in [0, 1), got {delta}"
            ))),
            Self::PowerLaw { alpha } if alpha > 3.0 && alpha.is_finite() => Ok(()),
            Self::PowerLaw { alpha } => Err(Error::InvalidParameter(format!(
                "power-law exponent must exceed 3, got {alpha}"
            ))),
        }
    }

    /// Lower cutoff that makes the power-law mean equal to one.
    pub fn power_law_theta_min(alpha: f64) -> f64 {
        (alpha - 2.0) / (alpha - 1.0)
    }

    /// `E[theta log theta]` in nats.
    pub fn mean_theta_log_theta(&self) -> Result<f64> {
        self.validate()?;
        Ok(match *self {
            Self::Constant => 0.0,
            Self::Bimodal { delta } => 0.5 * (xlogx(1.0 + delta) + xlogx(1.0 - delta)),
            Self::PowerLaw { alpha } => Self::power_law_theta_min(alpha).ln() + 1.0 / (alpha - 2.0),
        })
    }
}

pub(crate) fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// Per-node degree corrections together with the law they were drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreeCorrections {
    pub thetas: Vec<f64>,
    pub source: ThetaDistribution,
    pub seed: Option<u64>,
}

impl DegreeCorrections {
    /// All `theta_i = 1` (plain SBM).
    pub fn unit(n: usize) -> Self {
        Self {
            thetas: vec![1.0; n],
            source: ThetaDistribution::Constant,
            seed: None,
        }
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn mean(&self) -> f64 {
        if self.thetas.is_empty() {
            return 0.0;
        }
        self.thetas.iter().sum::<f64>() / self.thetas.len() as f64
    }
}

/// Hard block labels `g_i` in `0..m`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    labels: Vec<usize>,
    blocks: usize,
}

impl Assignment {
    pub fn new(labels: Vec<usize>, blocks: usize) -> Result<Self> {
        if let Some((i, &g)) = labels.iter().enumerate().find(|(_, &g)| g >= blocks) {
            return Err(Error::InvalidParameter(format!(
                "node {i} has label {g} but only {blocks} blocks"
            )));
        }
        Ok(Self { labels, blocks })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> usize {
        self.labels[node]
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.blocks];
        for &g in &self.labels {
            sizes[g] += 1;
        }
        sizes
    }

    /// `n_a = |block a| / N`.
    pub fn fractions(&self) -> Vec<f64> {
        let n = self.labels.len().max(1) as f64;
        self.block_sizes().into_iter().map(|s| s as f64 / n).collect()
    }

    /// Relabel: node in old block `perm[k]` moves to block `k`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut inverse = vec![0; self.blocks];
        for (k, &p) in perm.iter().enumerate() {
            inverse[p] = k;
        }
        Self {
            labels: self.labels.iter().map(|&g| inverse[g]).collect(),
            blocks: self.blocks,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affinity_validation() {
        assert!(AffinityMatrix::with_uniform_fractions(vec![vec![1.0, 2.0], vec![3.0, 1.0]]).is_err());
        assert!(AffinityMatrix::with_uniform_fractions(vec![vec![-1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(AffinityMatrix::new(vec![vec![1.0]], vec![0.7]).is_err());
        let a = AffinityMatrix::with_uniform_fractions(vec![vec![2.0, 10.0], vec![10.0, 2.0]]).unwrap();
        assert_eq!(a.entry_mean(), 6.0);
        assert_eq!(a.mean_degree(), 6.0);
        assert_eq!(a.block_degree(0), 6.0);
    }

    #[test]
    fn permutation_roundtrip() {
        let a = AffinityMatrix::new(vec![vec![4.0, 1.0], vec![1.0, 0.5]], vec![0.3, 0.7]).unwrap();
        let p = a.permuted(&[1, 0]);
        assert_eq!(p.get(0, 0), 0.5);
        assert_eq!(p.fractions(), &[0.7, 0.3]);
        assert_eq!(p.permuted(&[1, 0]), a);

        let g = Assignment::new(vec![0, 1, 1, 2], 3).unwrap();
        let q = g.permuted(&[2, 0, 1]);
        assert_eq!(q.labels(), &[1, 2, 2, 0]);
    }

    #[test]
    fn theta_moments() {
        let b = ThetaDistribution::Bimodal { delta: 0.5 };
        assert!((b.mean_theta_log_theta().unwrap() - 0.130812035).abs() < 1e-8);
        assert_eq!(
            ThetaDistribution::Bimodal { delta: 0.0 }
                .mean_theta_log_theta()
                .unwrap(),
            0.0
        );
        assert!(ThetaDistribution::PowerLaw { alpha: 3.0 }.validate().is_err());
        assert!(ThetaDistribution::Bimodal { delta: 1.0 }.validate().is_err());
        assert!((ThetaDistribution::power_law_theta_min(4.0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn power_law_moment_matches_quadrature() {
        // midpoint rule on theta = theta_min * x, x = u^(-1/(alpha-1)), u in (0,1)
        for alpha in [3.2, 4.0, 6.0, 10.0] {
            let tmin = ThetaDistribution::power_law_theta_min(alpha);
            let k = 2_000_000;
            let mut mean = 0.0;
            let mut tlt = 0.0;
            for s in 0..k {
                let u = (s as f64 + 0.5) / k as f64;
                let theta = tmin * u.powf(-1.0 / (alpha - 1.0));
                mean += theta / k as f64;
                tlt += theta * theta.ln() / k as f64;
            }
            let exact = ThetaDistribution::PowerLaw { alpha }.mean_theta_log_theta().unwrap();
            // the midpoint rule misses part of the heavy tail near u = 0
            assert!((mean - 1.0).abs() < 2e-3, "alpha {alpha}: mean {mean}");
            assert!((tlt - exact).abs() < 5e-3, "alpha {alpha}: {tlt} vs {exact}");
        }
    }
}
