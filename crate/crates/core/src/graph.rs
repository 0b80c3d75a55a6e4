//! Sparse undirected simple graphs, daily snapshot series and the two scalar
//! network metrics (link density and degree dispersion).

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Undirected simple graph on dense node indices `0..N`.
///
/// Edges are stored once as `(i, j)` with `i < j`, sorted. Adjacency lists are
/// kept in CSR form and sorted, so `has_edge` is a binary search.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_ids: Vec<String>,
    edges: Vec<(u32, u32)>,
    offsets: Vec<usize>,
    neighbors: Vec<u32>,
}

impl Graph {
    /// Graph with `node_count` nodes and no edges.
    pub fn empty(node_count: usize) -> Self {
        Self::from_sorted_unique(default_ids(node_count), Vec::new())
    }

    /// Build from undirected pairs. Self-loops are dropped, duplicates and
    /// reversed duplicates merged.
    pub fn from_edges<I>(node_count: usize, pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        symmetrize(pairs, node_count)
    }

    fn from_sorted_unique(node_ids: Vec<String>, edges: Vec<(u32, u32)>) -> Self {
        let n = node_ids.len();
        let mut degree = vec![0usize; n];
        for &(i, j) in &edges {
            degree[i as usize] += 1;
            degree[j as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut fill = offsets[..n].to_vec();
        let mut neighbors = vec![0u32; 2 * edges.len()];
        for &(i, j) in &edges {
            neighbors[fill[i as usize]] = j;
            fill[i as usize] += 1;
            neighbors[fill[j as usize]] = i;
            fill[j as usize] += 1;
        }
        for v in 0..n {
            neighbors[offsets[v]..offsets[v + 1]].sort_unstable();
        }
        Self {
            node_ids,
            edges,
            offsets,
            neighbors,
        }
    }

    /// Replace the external identifiers (must have one per node).
    pub fn with_node_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.node_count() {
            return Err(Error::InvalidParameter(format!(
                "{} node ids for {} nodes",
                ids.len(),
                self.node_count()
            )));
        }
        self.node_ids = ids;
        Ok(self)
    }

    pub fn node_count(&self) -> usize {
        self.node_ids.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    /// Sorted undirected edges, `i < j`.
    pub fn edges(&self) -> impl ExactSizeIterator<Item = (usize, usize)> + '_ {
        self.edges.iter().map(|&(i, j)| (i as usize, j as usize))
    }

    pub fn neighbors(&self, node: usize) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.neighbors[self.offsets[node]..self.offsets[node + 1]]
            .iter()
            .map(|&v| v as usize)
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.node_count()).map(|v| self.degree(v)).collect()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        if i >= self.node_count() || j >= self.node_count() {
            return false;
        }
        self.neighbors[self.offsets[i]..self.offsets[i + 1]]
            .binary_search(&(j as u32))
            .is_ok()
    }

    pub fn mean_degree(&self) -> f64 {
        if self.node_count() == 0 {
            return 0.0;
        }
        2.0 * self.edge_count() as f64 / self.node_count() as f64
    }

    /// Indices of nodes with at least one edge, ascending.
    pub fn non_isolated(&self) -> Vec<usize> {
        (0..self.node_count()).filter(|&v| self.degree(v) > 0).collect()
    }

    /// Subgraph induced by `nodes` (which must be distinct); node `k` of the
    /// result is `nodes[k]` of `self` and keeps its external id.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut local = vec![u32::MAX; self.node_count()];
        for (k, &v) in nodes.iter().enumerate() {
            if v >= self.node_count() {
                return Err(Error::InvalidNode {
                    index: v,
                    record: k,
                    node_count: self.node_count(),
                });
            }
            if local[v] != u32::MAX {
                return Err(Error::InvalidParameter(format!("node {v} listed twice")));
            }
            local[v] = k as u32;
        }
        let mut edges: Vec<(u32, u32)> = self
            .edges
            .iter()
            .filter_map(|&(i, j)| {
                let (a, b) = (local[i as usize], local[j as usize]);
                (a != u32::MAX && b != u32::MAX).then(|| (a.min(b), a.max(b)))
            })
            .collect();
        edges.sort_unstable();
        let ids = nodes.iter().map(|&v| self.node_ids[v].clone()).collect();
        Ok(Self::from_sorted_unique(ids, edges))
    }

    /// Write the `N=<n>` header followed by one sorted `i j` pair per line.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "N={}", self.node_count())?;
        for &(i, j) in &self.edges {
            writeln!(out, "{i} {j}")?;
        }
        Ok(())
    }

    pub fn to_edge_list_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_edge_list(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("edge list is ASCII")
    }

    /// Parse the edge-list text format. Blank lines and `#` comments are skipped.
    pub fn read_edge_list<R: BufRead>(input: R) -> Result<Graph> {
        let mut node_count = None;
        let mut pairs = Vec::new();
        for (k, line) in input.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = k + 1;
            if node_count.is_none() {
                let n = line
                    .strip_prefix("N=")
                    .and_then(|s| s.trim().parse::<usize>().ok())
                    .ok_or_else(|| Error::Parse {
                        line: lineno,
                        message: format!("expected header `N=<n>`, found `{line}`"),
                    })?;
                node_count = Some(n);
                continue;
            }
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(i)), Some(Ok(j)), None) => pairs.push((i, j)),
                _ => {
                    return Err(Error::Parse {
                        line: lineno,
                        message: format!("expected `i j`, found `{line}`"),
                    })
                }
            }
        }
        let n = node_count.ok_or(Error::Parse {
            line: 0,
            message: "missing `N=<n>` header".into(),
        })?;
        symmetrize(pairs, n)
    }
}

fn default_ids(n: usize) -> Vec<String> {
    (0..n).map(|v| v.to_string()).collect()
}

/// Undirected simple graph from ordered pairs: `{i, j}` is an edge iff `(i, j)`
/// or `(j, i)` occurs. Self-loops are dropped.
pub fn symmetrize<I>(directed_edges: I, node_count: usize) -> Result<Graph>
where
    I: IntoIterator<Item = (usize, usize)>,
{
    let mut set = BTreeSet::new();
    for (record, (i, j)) in directed_edges.into_iter().enumerate() {
        for index in [i, j] {
            if index >= node_count {
                return Err(Error::InvalidNode {
                    index,
                    record,
                    node_count,
                });
            }
        }
        if i != j {
            set.insert((i.min(j) as u32, i.max(j) as u32));
        }
    }
    Ok(Graph::from_sorted_unique(
        default_ids(node_count),
        set.into_iter().collect(),
    ))
}

/// Nodes kept by the metric functions.
fn selected_degrees(g: &Graph, restrict_nonisolated: bool) -> Vec<usize> {
    let degrees = g.degrees();
    if restrict_nonisolated {
        degrees.into_iter().filter(|&d| d > 0).collect()
    } else {
        degrees
    }
}

/// Link density `sum_ij a_ij / N^2` (diagonal included in the denominator).
pub fn density(g: &Graph, restrict_nonisolated: bool) -> Result<f64> {
    let n = selected_degrees(g, restrict_nonisolated).len();
    if n == 0 {
        return Err(Error::EmptyNodeSet("density needs at least one node"));
    }
    Ok(2.0 * g.edge_count() as f64 / (n as f64 * n as f64))
}

/// Ratio of the population variance of the degree sequence to its mean.
pub fn degree_dispersion(g: &Graph, restrict_nonisolated: bool) -> Result<f64> {
    let degrees = selected_degrees(g, restrict_nonisolated);
    if degrees.is_empty() {
        return Err(Error::ZeroMeanDegree);
    }
    let n = degrees.len() as f64;
    let mean = degrees.iter().sum::<usize>() as f64 / n;
    if mean == 0.0 {
        return Err(Error::ZeroMeanDegree);
    }
    let var = degrees.iter().map(|&d| (d as f64 - mean).powi(2)).sum::<f64>() / n;
    Ok(var / mean)
}

/// Directed daily transaction snapshots over a shared node registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSeries {
    dates: Vec<NaiveDate>,
    snapshots: Vec<Vec<(u32, u32)>>,
    registry: Vec<String>,
}

impl SnapshotSeries {
    pub fn new(dates: Vec<NaiveDate>, snapshots: Vec<Vec<(u32, u32)>>, registry: Vec<String>) -> Result<Self> {
        if dates.len() != snapshots.len() {
            return Err(Error::InvalidParameter(format!(
                "{} dates for {} snapshots",
                dates.len(),
                snapshots.len()
            )));
        }
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(format!(
                "dates not strictly increasing at {}",
                w[1]
            )));
        }
        let n = registry.len();
        for (record, &(i, j)) in snapshots.iter().flatten().enumerate() {
            for index in [i as usize, j as usize] {
                if index >= n {
                    return Err(Error::InvalidNode {
                        index,
                        record,
                        node_count: n,
                    });
                }
            }
        }
        Ok(Self {
            dates,
            snapshots,
            registry,
        })
    }

    pub fn empty() -> Self {
        Self {
            dates: Vec::new(),
            snapshots: Vec::new(),
            registry: Vec::new(),
        }
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn registry(&self) -> &[String] {
        &self.registry
    }

    pub fn node_count(&self) -> usize {
        self.registry.len()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Directed lender -> borrower pairs of day `index`.
    pub fn snapshot(&self, index: usize) -> &[(u32, u32)] {
        &self.snapshots[index]
    }

    fn union_of(&self, range: std::ops::Range<usize>) -> Graph {
        let pairs = self.snapshots[range]
            .iter()
            .flatten()
            .map(|&(i, j)| (i as usize, j as usize));
        symmetrize(pairs, self.node_count())
            .expect("series indices are validated at construction")
            .with_node_ids(self.registry.clone())
            .expect("registry length equals node count")
    }

    /// Symmetrized union of all transactions on days `<= upto_day`.
    pub fn aggregate_cumulative(&self, upto_day: NaiveDate) -> Result<Graph> {
        match (self.dates.first(), self.dates.last()) {
            (Some(&first), Some(&last)) if upto_day >= first && upto_day <= last => {
                let end = self.dates.partition_point(|&d| d <= upto_day);
                Ok(self.union_of(0..end))
            }
            _ => Err(Error::DateOutOfRange(upto_day)),
        }
    }

    /// Cumulative aggregate over the first `days` snapshots.
    pub fn aggregate_first(&self, days: usize) -> Result<Graph> {
        if days == 0 || days > self.len() {
            return Err(Error::InvalidParameter(format!(
                "horizon {days} outside 1..={}",
                self.len()
            )));
        }
        Ok(self.union_of(0..days))
    }

    /// Symmetrized union over `[start_day, end_day]`; empty if no day falls in it.
    pub fn aggregate_window(&self, start_day: NaiveDate, end_day: NaiveDate) -> Graph {
        let lo = self.dates.partition_point(|&d| d < start_day);
        let hi = self.dates.partition_point(|&d| d <= end_day).max(lo);
        self.union_of(lo..hi)
    }

    /// Consecutive windows of `len` snapshots (the last one may be shorter).
    pub fn fixed_windows(&self, len: usize) -> Vec<Graph> {
        if len == 0 {
            return Vec::new();
        }
        (0..self.len())
            .step_by(len)
            .map(|lo| self.union_of(lo..(lo + len).min(self.len())))
            .collect()
    }
}
