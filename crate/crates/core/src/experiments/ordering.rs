use serde::{Deserialize, Serialize};

use crate::bp::LearnedModel;
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Node order for plotting a learned model, with the Laplacian `L = D - A`
/// of the reordered graph as sparse `(row, col, value)` triples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplacianOrder {
    /// `order[position] = node`.
    pub order: Vec<usize>,
    /// Block of each node in `order`.
    pub blocks: Vec<usize>,
    /// Marginal of that block for each node in `order`.
    pub confidence: Vec<f64>,
    pub entries: Vec<(usize, usize, f64)>,
}

impl LaplacianOrder {
    /// `position[node]`.
    pub fn positions(&self) -> Vec<usize> {
        let mut pos = vec![0; self.order.len()];
        for (p, &v) in self.order.iter().enumerate() {
            pos[v] = p;
        }
        pos
    }
}

/// Sort nodes by argmax block, then by that block's marginal (descending),
/// then by index.
pub fn laplacian_ordering(g: &Graph, model: &LearnedModel) -> Result<LaplacianOrder> {
    let n = g.node_count();
    if model.assignment.len() != n {
        return Err(Error::InvalidParameter(format!(
            "model covers {} nodes, graph has {n}",
            model.assignment.len()
        )));
    }
    let block = |v: usize| model.assignment.label(v);
    let conf = |v: usize| model.marginal(v)[block(v)];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&u, &v| {
        block(u)
            .cmp(&block(v))
            .then(conf(v).total_cmp(&conf(u)))
            .then(u.cmp(&v))
    });
    let mut res = LaplacianOrder {
        blocks: order.iter().map(|&v| block(v)).collect(),
        confidence: order.iter().map(|&v| conf(v)).collect(),
        order,
        entries: Vec::new(),
    };
    let pos = res.positions();
    let mut entries = Vec::with_capacity(n + 2 * g.edge_count());
    for (p, &v) in res.order.iter().enumerate() {
        entries.push((p, p, g.degree(v) as f64));
        for u in g.neighbors(v) {
            entries.push((p, pos[u], -1.0));
        }
    }
    entries.sort_by_key(|e| (e.0, e.1));
    res.entries = entries;
    Ok(res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bp::{restart_select, EmConfig, InitScheme, ModelKind};
    use crate::generators::{bipartite_affinity, sample_sbm};

    #[test]
    fn planted_sample_orders_into_blocks() {
        let a = bipartite_affinity(2.0, 5.0).unwrap();
        let s = sample_sbm(&a, 80, 3).unwrap();
        let m = restart_select(
            &s.graph,
            2,
            ModelKind::Sbm,
            3,
            &InitScheme::MENU,
            1,
            &EmConfig::default(),
        )
        .unwrap()
        .best;
        let o = laplacian_ordering(&s.graph, &m).unwrap();
        let mut seen = o.order.clone();
        seen.sort();
        assert_eq!(seen, (0..80).collect::<Vec<_>>());
        assert!(o.blocks.windows(2).all(|w| w[0] <= w[1]));
        // rows of L sum to zero
        let mut rows = vec![0.0; 80];
        for &(r, _, v) in &o.entries {
            rows[r] += v;
        }
        assert!(rows.iter().all(|&x| x == 0.0));
        // off-diagonal blocks are denser than diagonal ones
        let split = o.blocks.iter().filter(|&&b| b == 0).count();
        let (mut within, mut across) = (0.0, 0.0);
        for &(r, c, v) in &o.entries {
            if r != c && v < 0.0 {
                if (r < split) == (c < split) {
                    within += 1.0;
                } else {
                    across += 1.0;
                }
            }
        }
        let (n0, n1) = (split as f64, 80.0 - split as f64);
        let d_within = within / (n0 * (n0 - 1.0) + n1 * (n1 - 1.0));
        let d_across = across / (2.0 * n0 * n1);
        assert!(d_across > 2.5 * d_within, "{d_across} vs {d_within}");
    }
}
