//! Exact log-likelihood of a graph under a (degree-corrected) block model and
//! the sparse-limit average log-likelihoods of the true, block-structure and
//! degree-based models. All values are natural-log units (nats).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::model::{xlogx, AffinityMatrix, Assignment, DegreeCorrections, ThetaDistribution};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoglikReport {
    /// Total log-likelihood over all unordered pairs.
    pub value: f64,
    /// `sum over edges of log q_ij`.
    pub edge_term: f64,
    /// `sum over non-edges of log(1 - q_ij)`.
    pub non_edge_term: f64,
    pub node_count: usize,
    /// First pair found whose observation has probability zero, if any.
    pub impossible_pair: Option<(usize, usize)>,
}

impl LoglikReport {
    pub fn per_node(&self) -> f64 {
        self.value / self.node_count.max(1) as f64
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }

    /// Flat `key=value` record, one per line.
    pub fn to_record(&self) -> String {
        let mut s = format!(
            "units=nats\nvalue={}\nedge_term={}\nnon_edge_term={}\nper_node={}\nnode_count={}\n",
            self.value,
            self.edge_term,
            self.non_edge_term,
            self.per_node(),
            self.node_count
        );
        if let Some((i, j)) = self.impossible_pair {
            s.push_str(&format!("impossible_pair={i},{j}\n"));
        }
        s
    }
}

/// `L = sum_{i<j} [a_ij log q_ij + (1 - a_ij) log(1 - q_ij)]` with
/// `q_ij = theta_i theta_j c_{g_i g_j} / N`.
///
/// Nodes sharing a block and a degree correction are grouped, so the
/// non-edge part costs `O(K^2 + |E|)` for `K` distinct groups.
pub fn exact_loglik(
    g: &Graph,
    affinity: &AffinityMatrix,
    thetas: &DegreeCorrections,
    assign: &Assignment,
) -> Result<LoglikReport> {
    let n = g.node_count();
    if thetas.len() != n || assign.len() != n {
        return Err(Error::InvalidParameter(format!(
            "graph has {n} nodes but {} thetas and {} labels",
            thetas.len(),
            assign.len()
        )));
    }
    if assign.blocks() != affinity.blocks() {
        return Err(Error::InvalidParameter(format!(
            "assignment uses {} blocks, affinity has {}",
            assign.blocks(),
            affinity.blocks()
        )));
    }
    let t = &thetas.thetas;
    if let Some(bad) = t.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidParameter(format!("degree correction {bad} is not >= 0")));
    }

    let mut class_of = vec![0usize; n];
    let mut reps: Vec<usize> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    let mut index: HashMap<(usize, u64), usize> = HashMap::new();
    for v in 0..n {
        let key = (assign.label(v), t[v].to_bits());
        let k = *index.entry(key).or_insert_with(|| {
            reps.push(v);
            sizes.push(0);
            reps.len() - 1
        });
        sizes[k] += 1;
        class_of[v] = k;
    }
    let inv_n = 1.0 / n.max(1) as f64;
    let q = |i: usize, j: usize| t[i] * t[j] * affinity.get(assign.label(i), assign.label(j)) * inv_n;

    let mut edge_term = 0.0;
    let mut impossible_pair = None;
    let mut edges_between: HashMap<(usize, usize), usize> = HashMap::new();
    for (i, j) in g.edges() {
        let qij = q(i, j);
        if qij > 1.0 {
            return Err(Error::ProbabilityDomain { i, j, q: qij });
        }
        if qij == 0.0 && impossible_pair.is_none() {
            impossible_pair = Some((i, j));
        }
        edge_term += qij.ln();
        let (a, b) = (class_of[i], class_of[j]);
        *edges_between.entry((a.min(b), a.max(b))).or_default() += 1;
    }

    let k = reps.len();
    let mut non_edge_term = 0.0;
    for a in 0..k {
        for b in a..k {
            let pairs = if a == b {
                sizes[a] * (sizes[a] - 1) / 2
            } else {
                sizes[a] * sizes[b]
            };
            if pairs == 0 {
                continue;
            }
            let qab = q(reps[a], reps[b]);
            if qab > 1.0 {
                let (i, j) = first_pair(&class_of, a, b);
                return Err(Error::ProbabilityDomain { i, j, q: qab });
            }
            let absent = pairs - edges_between.get(&(a, b)).copied().unwrap_or(0);
            if absent == 0 {
                continue;
            }
            if qab == 1.0 && impossible_pair.is_none() {
                impossible_pair = Some(first_absent_pair(g, &class_of, a, b));
            }
            non_edge_term += absent as f64 * (-qab).ln_1p();
        }
    }
    if let Some((i, j)) = impossible_pair {
        log::debug!("pair ({i}, {j}) is impossible under the given parameters");
    }
    Ok(LoglikReport {
        value: edge_term + non_edge_term,
        edge_term,
        non_edge_term,
        node_count: n,
        impossible_pair,
    })
}

fn first_pair(class_of: &[usize], a: usize, b: usize) -> (usize, usize) {
    let n = class_of.len();
    for i in 0..n {
        for j in i + 1..n {
            let (x, y) = (class_of[i], class_of[j]);
            if (x.min(y), x.max(y)) == (a, b) {
                return (i, j);
            }
        }
    }
    unreachable!("class pair has at least one member pair")
}

fn first_absent_pair(g: &Graph, class_of: &[usize], a: usize, b: usize) -> (usize, usize) {
    let n = class_of.len();
    for i in 0..n {
        for j in i + 1..n {
            let (x, y) = (class_of[i], class_of[j]);
            if (x.min(y), x.max(y)) == (a, b) && !g.has_edge(i, j) {
                return (i, j);
            }
        }
    }
    unreachable!("class pair has at least one absent pair")
}

/// Sparse-limit average log-likelihood per node, split as
/// `n_free - 0.5 * c_tilde * ln N`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticLoglik {
    /// Everything except the `-0.5 c_tilde ln N` term.
    pub n_free: f64,
    pub c_tilde: f64,
}

impl AsymptoticLoglik {
    /// Per-node value at network size `n`.
    pub fn at(&self, n: usize) -> f64 {
        self.n_free - 0.5 * self.c_tilde * (n as f64).ln()
    }
}

/// `sum_ab c_ab n_a n_b log c_ab` (with `0 log 0 = 0`).
pub fn block_term(affinity: &AffinityMatrix) -> f64 {
    let m = affinity.blocks();
    let n = affinity.fractions();
    let mut s = 0.0;
    for a in 0..m {
        for b in 0..m {
            s += n[a] * n[b] * xlogx(affinity.get(a, b));
        }
    }
    s
}

pub fn asymptotic_l_real(affinity: &AffinityMatrix, dist: &ThetaDistribution) -> Result<AsymptoticLoglik> {
    let c = affinity.mean_degree();
    let tlt = dist.mean_theta_log_theta()?;
    Ok(AsymptoticLoglik {
        n_free: 0.5 * (block_term(affinity) + 2.0 * c * tlt - c),
        c_tilde: c,
    })
}

pub fn asymptotic_l_bs(affinity: &AffinityMatrix) -> AsymptoticLoglik {
    let c = affinity.mean_degree();
    AsymptoticLoglik {
        n_free: 0.5 * (block_term(affinity) - c),
        c_tilde: c,
    }
}

/// Degree-based SBM: blocks are the two theta groups (fractions one half
/// each), with affinity `c_tilde theta_a theta_b`.
pub fn asymptotic_l_db(affinity: &AffinityMatrix, dist: &ThetaDistribution) -> Result<AsymptoticLoglik> {
    let group_term = match *dist {
        ThetaDistribution::Constant | ThetaDistribution::Bimodal { .. } => dist.mean_theta_log_theta()?,
        ThetaDistribution::PowerLaw { .. } => {
            return Err(Error::Unsupported(
                "degree-based assignment is defined for two theta groups only".into(),
            ))
        }
    };
    let c = affinity.mean_degree();
    Ok(AsymptoticLoglik {
        n_free: 0.5 * (xlogx(c) + 2.0 * c * group_term - c),
        c_tilde: c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Crossing {
    /// Heterogeneity at which the block-structure and degree-based models tie.
    At(f64),
    NoCrossing,
}

impl Crossing {
    pub fn delta(&self) -> Option<f64> {
        match self {
            Crossing::At(d) => Some(*d),
            Crossing::NoCrossing => None,
        }
    }
}

/// Bimodal heterogeneity `delta` in (0, 1) where the block-structure and
/// degree-based asymptotic log-likelihoods of the `[[c, c r], [c r, c]]`
/// ensemble are equal.
pub fn crossing_delta(c: f64, r: f64) -> Result<Crossing> {
    let affinity = crate::generators::bipartite_affinity(c, r)?;
    crossing_delta_for(&affinity)
}

pub fn crossing_delta_for(affinity: &AffinityMatrix) -> Result<Crossing> {
    let ct = affinity.mean_degree();
    let gap = block_term(affinity) - xlogx(ct);
    // f(delta) = L_bs - L_db (N-free parts, doubled), decreasing in delta
    let f = |d: f64| gap - ct * (xlogx(1.0 + d) + xlogx(1.0 - d));
    let scale = block_term(affinity).abs().max(xlogx(ct).abs()).max(1.0);
    if f(0.0) <= 1e-12 * scale || f(1.0) >= 0.0 {
        return Ok(Crossing::NoCrossing);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let v = f(mid);
        if v.abs() < 1e-12 || hi - lo < 1e-15 {
            return Ok(Crossing::At(mid));
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Crossing::At(0.5 * (lo + hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::bipartite_affinity;

    fn brute(g: &Graph, a: &AffinityMatrix, t: &[f64], labels: &[usize]) -> f64 {
        let n = g.node_count();
        let mut s = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let q = t[i] * t[j] * a.get(labels[i], labels[j]) / n as f64;
                s += if g.has_edge(i, j) { q.ln() } else { (1.0 - q).ln() };
            }
        }
        s
    }

    #[test]
    fn erdos_renyi_reduction() {
        let g = Graph::from_edges(6, vec![(0, 1), (2, 3), (1, 5)]).unwrap();
        let a = AffinityMatrix::new(vec![vec![1.8]], vec![1.0]).unwrap();
        let r = exact_loglik(
            &g,
            &a,
            &DegreeCorrections::unit(6),
            &Assignment::new(vec![0; 6], 1).unwrap(),
        )
        .unwrap();
        let p: f64 = 0.3;
        let expected = 3.0 * p.ln() + 12.0 * (1.0 - p).ln();
        assert!((r.value - expected).abs() < 1e-12);
        assert!((r.edge_term - 3.0 * p.ln()).abs() < 1e-12);
    }

    #[test]
    fn single_pair() {
        let g = Graph::from_edges(2, vec![(0, 1)]).unwrap();
        let a = AffinityMatrix::new(vec![vec![0.6]], vec![1.0]).unwrap();
        let r = exact_loglik(
            &g,
            &a,
            &DegreeCorrections::unit(2),
            &Assignment::new(vec![0, 0], 1).unwrap(),
        )
        .unwrap();
        assert!((r.value - 0.3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        let g = Graph::from_edges(2, vec![(0, 1)]).unwrap();
        let a = AffinityMatrix::new(vec![vec![3.0]], vec![1.0]).unwrap();
        let e = exact_loglik(
            &g,
            &a,
            &DegreeCorrections::unit(2),
            &Assignment::new(vec![0, 0], 1).unwrap(),
        );
        assert!(matches!(e, Err(Error::ProbabilityDomain { i: 0, j: 1, .. })));

        let a = AffinityMatrix::with_uniform_fractions(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = exact_loglik(
            &g,
            &a,
            &DegreeCorrections::unit(2),
            &Assignment::new(vec![0, 1], 2).unwrap(),
        )
        .unwrap();
        assert_eq!(r.value, f64::NEG_INFINITY);
        assert_eq!(r.impossible_pair, Some((0, 1)));

        // q = 1 on an absent pair
        let g = Graph::empty(2);
        let a = AffinityMatrix::new(vec![vec![2.0]], vec![1.0]).unwrap();
        let r = exact_loglik(
            &g,
            &a,
            &DegreeCorrections::unit(2),
            &Assignment::new(vec![0, 0], 1).unwrap(),
        )
        .unwrap();
        assert_eq!(r.value, f64::NEG_INFINITY);
        assert_eq!(r.impossible_pair, Some((0, 1)));
    }

    #[test]
    fn matches_brute_force_on_planted_sample() {
        let a = bipartite_affinity(2.0, 5.0).unwrap();
        let smp = crate::generators::sample_planted(&a, ThetaDistribution::PowerLaw { alpha: 5.0 }, 25, 9).unwrap();
        if smp.clipped_pairs > 0 {
            return;
        }
        let r = exact_loglik(&smp.graph, &a, &smp.thetas, &smp.assignment).unwrap();
        let b = brute(&smp.graph, &a, &smp.thetas.thetas, smp.assignment.labels());
        assert!((r.value - b).abs() < 1e-10 * b.abs().max(1.0));
    }

    #[test]
    fn asymptotic_closed_forms() {
        let a = bipartite_affinity(2.0, 5.0).unwrap();
        let bt = block_term(&a);
        let expected_bt = 0.25 * (4.0 * 2f64.ln() + 20.0 * 10f64.ln());
        assert!((bt - expected_bt).abs() < 1e-12);
        assert!((bt - 12.20607).abs() < 1e-5);

        let d = ThetaDistribution::Bimodal { delta: 0.5 };
        let real = asymptotic_l_real(&a, &d).unwrap();
        let bs = asymptotic_l_bs(&a);
        let db = asymptotic_l_db(&a, &d).unwrap();
        assert_eq!(real.c_tilde, 6.0);
        let tlt = 0.5 * (1.5 * 1.5f64.ln() + 0.5 * 0.5f64.ln());
        assert!((real.n_free - 0.5 * (bt + 12.0 * tlt - 6.0)).abs() < 1e-12);
        assert!((bs.at(80) - 0.5 * (bt - 6.0 - 6.0 * 80f64.ln())).abs() < 1e-12);
        assert!((db.at(80) - 0.5 * (6.0 * 6f64.ln() + 12.0 * tlt - 6.0 - 6.0 * 80f64.ln())).abs() < 1e-12);

        // theta = 1 reduces L_real to L_bs
        let flat = asymptotic_l_real(&a, &ThetaDistribution::Bimodal { delta: 0.0 }).unwrap();
        assert!((flat.n_free - bs.n_free).abs() < 1e-15);
        // uniform affinity reduces L_real to L_db
        let u = bipartite_affinity(3.0, 1.0).unwrap();
        let r = asymptotic_l_real(&u, &d).unwrap();
        let dbu = asymptotic_l_db(&u, &d).unwrap();
        assert!((r.n_free - dbu.n_free).abs() < 1e-12);
        assert!(asymptotic_l_db(&a, &ThetaDistribution::PowerLaw { alpha: 4.0 }).is_err());
    }

    #[test]
    fn l_db_is_increasing_in_delta() {
        let a = bipartite_affinity(2.0, 5.0).unwrap();
        let mut prev = f64::NEG_INFINITY;
        for k in 0..100 {
            let v = asymptotic_l_db(
                &a,
                &ThetaDistribution::Bimodal {
                    delta: k as f64 / 100.0,
                },
            )
            .unwrap()
            .n_free;
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn crossing_examples() {
        let d = crossing_delta(2.0, 5.0).unwrap().delta().unwrap();
        // solved independently with scipy brentq: 0.4822931905859509
        assert!((d - 0.482_293_190_585_950_9).abs() < 1e-9, "{d}");
        let a = bipartite_affinity(2.0, 5.0).unwrap();
        let bs = asymptotic_l_bs(&a);
        let db = asymptotic_l_db(&a, &ThetaDistribution::Bimodal { delta: d }).unwrap();
        for n in [10, 80, 10_000] {
            assert!((bs.at(n) - db.at(n)).abs() < 1e-11);
        }
        assert_eq!(crossing_delta(2.0, 1.0).unwrap(), Crossing::NoCrossing);
        let mut prev = 0.0;
        for r in [1.5, 2.0, 3.0, 5.0, 8.0] {
            let x = crossing_delta(2.0, r).unwrap().delta().unwrap();
            assert!(x > prev, "r={r}: {x} <= {prev}");
            prev = x;
        }
        assert!(crossing_delta(-1.0, 2.0).is_err());
    }
}
