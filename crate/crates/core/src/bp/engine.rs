use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::stream_rng;
use crate::graph::Graph;
use crate::model::AffinityMatrix;

/// How pairs without an edge enter the message updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NonEdgeMode {
    /// First-order external field `h_a`; messages only live on graph edges.
    #[default]
    MeanField,
    /// Every unordered pair carries its own factor (`q` for edges, `1 - q`
    /// otherwise). Quadratic in `N`; meant for small verification runs.
    Exact,
    /// Non-edges carry no factor at all. The posterior is then the
    /// edge-only one, which BP computes exactly on trees.
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BpConfig {
    /// Stop once the largest message or marginal change in a sweep is below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Weight of the previous message in each update (0 = undamped).
    pub damping: f64,
    pub non_edge: NonEdgeMode,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iters: 1000,
            damping: 0.5,
            non_edge: NonEdgeMode::MeanField,
        }
    }
}

/// Affinity and per-node degree corrections the messages are computed under.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub affinity: AffinityMatrix,
    /// All ones for the plain SBM.
    pub thetas: Vec<f64>,
}

impl ModelParams {
    pub fn sbm(affinity: AffinityMatrix, n: usize) -> Self {
        Self {
            affinity,
            thetas: vec![1.0; n],
        }
    }

    pub fn dcsbm(affinity: AffinityMatrix, thetas: Vec<f64>) -> Self {
        Self { affinity, thetas }
    }

    fn check(&self, g: &Graph) -> Result<()> {
        if self.thetas.len() != g.node_count() {
            return Err(Error::InvalidParameter(format!(
                "{} degree corrections for {} nodes",
                self.thetas.len(),
                g.node_count()
            )));
        }
        if let Some(t) = self.thetas.iter().find(|t| !(**t >= 0.0 && t.is_finite())) {
            return Err(Error::InvalidParameter(format!("degree correction {t} is not >= 0")));
        }
        Ok(())
    }
}

/// Directed message slots. Slot `s` in `offsets[i]..offsets[i+1]` carries the
/// message from `i` to `target[s]`; `reverse[s]` is the opposite slot.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Topology {
    pub(crate) offsets: Vec<usize>,
    pub(crate) target: Vec<u32>,
    pub(crate) reverse: Vec<usize>,
    pub(crate) linked: Vec<bool>,
    pub(crate) mode: NonEdgeMode,
}

impl Topology {
    fn build(g: &Graph, mode: NonEdgeMode) -> Self {
        let n = g.node_count();
        match mode {
            NonEdgeMode::MeanField | NonEdgeMode::Ignore => {
                let mut offsets = vec![0];
                let mut target = Vec::with_capacity(2 * g.edge_count());
                for i in 0..n {
                    target.extend(g.neighbors(i).map(|j| j as u32));
                    offsets.push(target.len());
                }
                let reverse = (0..n)
                    .flat_map(|i| (offsets[i]..offsets[i + 1]).map(move |s| (i, s)))
                    .map(|(i, s)| {
                        let j = target[s] as usize;
                        let pos = target[offsets[j]..offsets[j + 1]]
                            .binary_search(&(i as u32))
                            .expect("adjacency is symmetric");
                        offsets[j] + pos
                    })
                    .collect();
                let linked = vec![true; target.len()];
                Self {
                    offsets,
                    target,
                    reverse,
                    linked,
                    mode,
                }
            }
            NonEdgeMode::Exact => {
                let deg = n.saturating_sub(1);
                let offsets: Vec<usize> = (0..=n).map(|i| i * deg).collect();
                let slot = |i: usize, j: usize| i * deg + if j < i { j } else { j - 1 };
                let mut target = Vec::with_capacity(n * deg);
                let mut reverse = Vec::with_capacity(n * deg);
                let mut linked = Vec::with_capacity(n * deg);
                for i in 0..n {
                    for j in (0..n).filter(|&j| j != i) {
                        target.push(j as u32);
                        reverse.push(slot(j, i));
                        linked.push(g.has_edge(i, j));
                    }
                }
                Self {
                    offsets,
                    target,
                    reverse,
                    linked,
                    mode,
                }
            }
        }
    }

    fn slots(&self) -> usize {
        self.target.len()
    }
}

/// Messages, marginals and the mean-field external field of a BP run.
#[derive(Debug, Clone)]
pub struct BpState {
    blocks: usize,
    node_count: usize,
    pub(crate) topology: Topology,
    pub(crate) messages: Vec<f64>,
    pub(crate) marginals: Vec<f64>,
    field: Vec<f64>,
    pub iterations: usize,
    pub max_residual: f64,
    pub converged: bool,
    rng: ChaCha8Rng,
}

/// Starting point for [`bp_converge`].
#[derive(Debug, Clone)]
pub enum BpInit {
    /// Random normalized messages and marginals; `seed` also drives the sweep order.
    Random { seed: u64 },
    /// Every message and marginal equal to the block fractions.
    Prior { seed: u64 },
    /// Continue from an earlier state on the same graph.
    State(Box<BpState>),
}

const ORDER_STREAM: u64 = 7;

impl BpState {
    pub fn random(g: &Graph, blocks: usize, mode: NonEdgeMode, seed: u64) -> Self {
        let mut rng = stream_rng(seed, ORDER_STREAM);
        let topology = Topology::build(g, mode);
        let mut messages = vec![0.0; topology.slots() * blocks];
        let mut marginals = vec![0.0; g.node_count() * blocks];
        for chunk in messages.chunks_mut(blocks).chain(marginals.chunks_mut(blocks)) {
            for v in chunk.iter_mut() {
                *v = 0.05 + rng.random::<f64>();
            }
            normalize(chunk);
        }
        Self {
            blocks,
            node_count: g.node_count(),
            topology,
            messages,
            marginals,
            field: vec![0.0; blocks],
            iterations: 0,
            max_residual: f64::INFINITY,
            converged: false,
            rng,
        }
    }

    pub fn prior(g: &Graph, fractions: &[f64], mode: NonEdgeMode, seed: u64) -> Self {
        let mut s = Self::random(g, fractions.len(), mode, seed);
        for chunk in s
            .messages
            .chunks_mut(fractions.len())
            .chain(s.marginals.chunks_mut(fractions.len()))
        {
            chunk.copy_from_slice(fractions);
        }
        s
    }

    /// Relabel blocks: new block `k` carries old block `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = self.blocks;
        let relabel = |v: &[f64]| {
            let mut out = vec![0.0; v.len()];
            for (dst, src) in out.chunks_mut(m).zip(v.chunks(m)) {
                for k in 0..m {
                    dst[k] = src[perm[k]];
                }
            }
            out
        };
        Self {
            messages: relabel(&self.messages),
            marginals: relabel(&self.marginals),
            field: relabel(&self.field),
            ..self.clone()
        }
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn mode(&self) -> NonEdgeMode {
        self.topology.mode
    }

    /// Posterior marginal of `node` (length `m`).
    pub fn marginal(&self, node: usize) -> &[f64] {
        &self.marginals[node * self.blocks..(node + 1) * self.blocks]
    }

    pub fn marginals(&self) -> &[f64] {
        &self.marginals
    }

    /// Message from `from` to `to`, if the pair carries one.
    pub fn message(&self, from: usize, to: usize) -> Option<&[f64]> {
        let t = &self.topology;
        let range = t.offsets[from]..t.offsets[from + 1];
        let pos = t.target[range.clone()].iter().position(|&x| x as usize == to)?;
        let s = range.start + pos;
        Some(&self.messages[s * self.blocks..(s + 1) * self.blocks])
    }

    pub fn messages(&self) -> impl Iterator<Item = &[f64]> {
        self.messages.chunks(self.blocks)
    }

    pub fn field(&self) -> &[f64] {
        &self.field
    }

    /// Per-node argmax of the marginals; ties go to the lower block index.
    pub fn hard_assignment(&self) -> Vec<usize> {
        self.marginals
            .chunks(self.blocks)
            .map(|p| {
                let mut best = 0;
                for a in 1..p.len() {
                    if p[a] > p[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }

    /// Remove block `a`, renormalising every vector over the remaining blocks.
    pub(crate) fn drop_block(&mut self, a: usize) {
        let m = self.blocks;
        let shrink = |v: &[f64]| -> Vec<f64> {
            v.chunks(m)
                .flat_map(|c| {
                    let mut kept: Vec<f64> = c.iter().enumerate().filter(|&(b, _)| b != a).map(|(_, &x)| x).collect();
                    if kept.iter().sum::<f64>() <= 0.0 {
                        kept.iter_mut().for_each(|x| *x = 1.0);
                    }
                    normalize(&mut kept);
                    kept
                })
                .collect()
        };
        self.messages = shrink(&self.messages);
        self.marginals = shrink(&self.marginals);
        self.blocks = m - 1;
        self.field = vec![0.0; m - 1];
        self.converged = false;
    }

    fn recompute_field(&mut self, params: &ModelParams) {
        let m = self.blocks;
        let n = self.node_count as f64;
        let mut q = vec![0.0; m];
        for (i, p) in self.marginals.chunks(m).enumerate() {
            for b in 0..m {
                q[b] += params.thetas[i] * p[b];
            }
        }
        for a in 0..m {
            self.field[a] = (0..m).map(|b| params.affinity.get(a, b) * q[b]).sum::<f64>() / n;
        }
    }
}

pub(crate) fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let mx = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return mx;
    }
    mx + v.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Per-node working buffers.
struct Scratch {
    log_u: Vec<f64>,
    total: Vec<f64>,
    zeros: Vec<usize>,
    log_phi: Vec<f64>,
    vals: Vec<f64>,
}

impl Scratch {
    fn new(m: usize) -> Self {
        Self {
            log_u: Vec::new(),
            total: vec![0.0; m],
            zeros: vec![0; m],
            log_phi: vec![0.0; m],
            vals: vec![0.0; m],
        }
    }
}

/// Weighted incoming sums `u_s(a) = sum_b W(a, b) psi^{k->i}_b` for every
/// slot of `i`, stored as logs, plus the node potential.
fn gather(state: &BpState, params: &ModelParams, i: usize, sc: &mut Scratch) {
    let m = state.blocks;
    let t = &state.topology;
    let n = state.node_count as f64;
    let ti = params.thetas[i];
    let aff = &params.affinity;
    let frac = aff.fractions();
    let own = state.marginal(i);
    for a in 0..m {
        let mut lp = frac[a].ln();
        if t.mode == NonEdgeMode::MeanField {
            // field from all other nodes
            let self_part = ti * (0..m).map(|b| aff.get(a, b) * own[b]).sum::<f64>() / n;
            lp -= ti * (state.field[a] - self_part);
        }
        sc.log_phi[a] = lp;
        sc.total[a] = 0.0;
        sc.zeros[a] = 0;
    }
    let range = t.offsets[i]..t.offsets[i + 1];
    sc.log_u.clear();
    sc.log_u.resize(range.len() * m, 0.0);
    for (local, s) in range.enumerate() {
        let k = t.target[s] as usize;
        let inc = &state.messages[t.reverse[s] * m..(t.reverse[s] + 1) * m];
        let scale = ti * params.thetas[k] / n;
        for a in 0..m {
            let row = aff.row(a);
            let dot: f64 = (0..m).map(|b| row[b] * inc[b]).sum();
            let u = if t.linked[s] {
                scale * dot
            } else {
                (1.0 - scale * dot).max(0.0)
            };
            let lu = if u > 0.0 { u.ln() } else { f64::NEG_INFINITY };
            sc.log_u[local * m + a] = lu;
            if lu == f64::NEG_INFINITY {
                sc.zeros[a] += 1;
            } else {
                sc.total[a] += lu;
            }
        }
    }
}

/// `log(phi_a prod_{s != skip} u_s(a))` into `sc.vals`.
fn cavity(sc: &mut Scratch, m: usize, skip: Option<usize>) {
    for a in 0..m {
        let (lu, zeros) = match skip {
            Some(local) => {
                let lu = sc.log_u[local * m + a];
                if lu == f64::NEG_INFINITY {
                    (0.0, sc.zeros[a] - 1)
                } else {
                    (lu, sc.zeros[a])
                }
            }
            None => (0.0, sc.zeros[a]),
        };
        sc.vals[a] = if zeros > 0 {
            f64::NEG_INFINITY
        } else {
            sc.log_phi[a] + sc.total[a] - lu
        };
    }
}

/// Exponentiate and normalise `vals` into `out`; false if every entry is -inf.
fn softmax_into(vals: &[f64], out: &mut [f64]) -> bool {
    let mx = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !mx.is_finite() {
        return false;
    }
    for (o, v) in out.iter_mut().zip(vals) {
        *o = (v - mx).exp();
    }
    normalize(out);
    true
}

fn update_node(
    state: &mut BpState,
    params: &ModelParams,
    damping: f64,
    i: usize,
    sc: &mut Scratch,
    fresh: &mut [f64],
) -> Result<f64> {
    let m = state.blocks;
    gather(state, params, i, sc);
    let range = state.topology.offsets[i]..state.topology.offsets[i + 1];
    let mut residual: f64 = 0.0;
    for (local, s) in range.clone().enumerate() {
        cavity(sc, m, Some(local));
        if !softmax_into(&sc.vals, fresh) {
            return Err(Error::NonFiniteMessage { node: i });
        }
        let msg = &mut state.messages[s * m..(s + 1) * m];
        for a in 0..m {
            let v = (1.0 - damping) * fresh[a] + damping * msg[a];
            residual = residual.max((v - msg[a]).abs());
            msg[a] = v;
        }
        normalize(msg);
    }
    cavity(sc, m, None);
    if !softmax_into(&sc.vals, fresh) {
        return Err(Error::NonFiniteMessage { node: i });
    }
    // the marginal (and so the field) moves at the same damped rate as the
    // messages, otherwise the field runs ahead and the group sizes oscillate
    let old = state.marginal(i).to_vec();
    if !range.is_empty() {
        for a in 0..m {
            fresh[a] = (1.0 - damping) * fresh[a] + damping * old[a];
        }
        normalize(fresh);
    }
    for a in 0..m {
        residual = residual.max((fresh[a] - old[a]).abs());
    }
    if state.topology.mode == NonEdgeMode::MeanField {
        let n = state.node_count as f64;
        for a in 0..m {
            let delta: f64 = (0..m).map(|b| params.affinity.get(a, b) * (fresh[b] - old[b])).sum();
            state.field[a] += params.thetas[i] * delta / n;
        }
    }
    state.marginals[i * m..(i + 1) * m].copy_from_slice(fresh);
    Ok(residual)
}

/// Iterate asynchronous damped BP sweeps (random node order) until the
/// largest message change drops below `cfg.tol` or `cfg.max_iters` sweeps ran.
pub fn bp_converge(g: &Graph, params: &ModelParams, init: BpInit, cfg: &BpConfig) -> Result<BpState> {
    params.check(g)?;
    let m = params.affinity.blocks();
    if m < 1 {
        return Err(Error::InvalidParameter("need at least one block".into()));
    }
    if cfg.non_edge == NonEdgeMode::Exact {
        check_non_edges(g, params)?;
    }
    let mut state = match init {
        BpInit::Random { seed } => BpState::random(g, m, cfg.non_edge, seed),
        BpInit::Prior { seed } => BpState::prior(g, params.affinity.fractions(), cfg.non_edge, seed),
        BpInit::State(s) => *s,
    };
    if state.node_count != g.node_count() || state.blocks != m {
        return Err(Error::InvalidParameter(format!(
            "state has {} nodes and {} blocks, model has {} and {m}",
            state.node_count,
            state.blocks,
            g.node_count()
        )));
    }
    if state.topology.mode != cfg.non_edge {
        state.topology = Topology::build(g, cfg.non_edge);
        state.messages = vec![1.0 / m as f64; state.topology.slots() * m];
    }
    run_sweeps(&mut state, params, cfg)?;
    Ok(state)
}

/// Exact mode needs `q_ij < 1` on every non-edge, otherwise the factor `1 - q_ij`
/// vanishes for some block pair.
fn check_non_edges(g: &Graph, params: &ModelParams) -> Result<()> {
    let n = g.node_count();
    let cmax = params.affinity.entries().iter().cloned().fold(0.0, f64::max);
    for i in 0..n {
        for j in i + 1..n {
            let q = params.thetas[i] * params.thetas[j] * cmax / n as f64;
            if q >= 1.0 && !g.has_edge(i, j) {
                return Err(Error::ProbabilityDomain { i, j, q });
            }
        }
    }
    Ok(())
}

pub(crate) fn run_sweeps(state: &mut BpState, params: &ModelParams, cfg: &BpConfig) -> Result<()> {
    let m = state.blocks;
    let mut order: Vec<usize> = (0..state.node_count).collect();
    let mut sc = Scratch::new(m);
    let mut fresh = vec![0.0; m];
    state.converged = false;
    for _ in 0..cfg.max_iters {
        state.recompute_field(params);
        order.shuffle(&mut state.rng);
        let mut residual: f64 = 0.0;
        for &i in &order {
            residual = residual.max(update_node(state, params, cfg.damping, i, &mut sc, &mut fresh)?);
        }
        state.iterations += 1;
        state.max_residual = residual;
        if residual < cfg.tol {
            state.converged = true;
            break;
        }
    }
    state.recompute_field(params);
    Ok(())
}

/// Bethe free energy per node,
/// `f = -(1/N) [sum_i log Z_i - sum_(ij) log Z_ij + C]`, where `C` is the
/// mean-field non-edge correction (zero in exact mode). Natural logs.
pub fn free_energy(state: &BpState, g: &Graph, params: &ModelParams) -> Result<f64> {
    params.check(g)?;
    let m = state.blocks;
    let t = &state.topology;
    let n = state.node_count;
    let mut sc = Scratch::new(m);
    let mut log_z = 0.0;
    for i in 0..n {
        gather(state, params, i, &mut sc);
        cavity(&mut sc, m, None);
        log_z += log_sum_exp(&sc.vals);
        for s in t.offsets[i]..t.offsets[i + 1] {
            let j = t.target[s] as usize;
            if j < i {
                continue;
            }
            log_z -= pair_normalizer(state, params, i, s).ln();
        }
    }
    if t.mode == NonEdgeMode::MeanField && n > 0 {
        let nf = n as f64;
        let aff = &params.affinity;
        let mut q = vec![0.0; m];
        let mut self_terms = 0.0;
        for i in 0..n {
            let p = state.marginal(i);
            let ti = params.thetas[i];
            for b in 0..m {
                q[b] += ti * p[b];
            }
            let quad: f64 = (0..m)
                .flat_map(|a| (0..m).map(move |b| (a, b)))
                .map(|(a, b)| p[a] * aff.get(a, b) * p[b])
                .sum();
            self_terms += ti * ti * quad;
        }
        let total: f64 = (0..m)
            .flat_map(|a| (0..m).map(move |b| (a, b)))
            .map(|(a, b)| q[a] * aff.get(a, b) * q[b])
            .sum();
        log_z += 0.5 * (total - self_terms) / nf;
    }
    Ok(-log_z / n.max(1) as f64)
}

/// `Z_ij = sum_ab W_ij(a, b) psi^{i->j}_a psi^{j->i}_b` for slot `s` of `i`.
fn pair_normalizer(state: &BpState, params: &ModelParams, i: usize, s: usize) -> f64 {
    let m = state.blocks;
    let t = &state.topology;
    let j = t.target[s] as usize;
    let out = &state.messages[s * m..(s + 1) * m];
    let inc = &state.messages[t.reverse[s] * m..(t.reverse[s] + 1) * m];
    let scale = params.thetas[i] * params.thetas[j] / state.node_count as f64;
    let mut z = 0.0;
    for a in 0..m {
        for b in 0..m {
            let q = scale * params.affinity.get(a, b);
            let w = if t.linked[s] { q } else { 1.0 - q };
            z += w * out[a] * inc[b];
        }
    }
    z
}

/// Expected number of edge endpoints per block pair: entry `(a, b)` sums the
/// two-point edge marginals `P_ij(a, b) + P_ij(b, a)` over edges, so the
/// matrix is symmetric and totals `2|E|`.
pub fn expected_block_edges(state: &BpState, params: &ModelParams) -> Vec<f64> {
    let m = state.blocks;
    let t = &state.topology;
    let mut counts = vec![0.0; m * m];
    let mut joint = vec![0.0; m * m];
    for i in 0..state.node_count {
        for s in t.offsets[i]..t.offsets[i + 1] {
            let j = t.target[s] as usize;
            if j < i || !t.linked[s] {
                continue;
            }
            let out = &state.messages[s * m..(s + 1) * m];
            let inc = &state.messages[t.reverse[s] * m..(t.reverse[s] + 1) * m];
            let mut z = 0.0;
            for a in 0..m {
                for b in 0..m {
                    let w = params.affinity.get(a, b) * out[a] * inc[b];
                    joint[a * m + b] = w;
                    z += w;
                }
            }
            if z <= 0.0 {
                continue;
            }
            for a in 0..m {
                for b in 0..m {
                    let p = joint[a * m + b] / z;
                    counts[a * m + b] += p;
                    counts[b * m + a] += p;
                }
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_block(rows: Vec<Vec<f64>>) -> AffinityMatrix {
        AffinityMatrix::with_uniform_fractions(rows).unwrap()
    }

    #[test]
    fn isolated_single_node_keeps_prior() {
        let g = Graph::empty(1);
        let a = AffinityMatrix::new(vec![vec![3.0, 1.0], vec![1.0, 0.5]], vec![0.3, 0.7]).unwrap();
        for mode in [NonEdgeMode::MeanField, NonEdgeMode::Exact] {
            let cfg = BpConfig {
                non_edge: mode,
                ..Default::default()
            };
            let s = bp_converge(&g, &ModelParams::sbm(a.clone(), 1), BpInit::Random { seed: 1 }, &cfg).unwrap();
            assert!((s.marginal(0)[0] - 0.3).abs() < 1e-15);
            assert!((s.marginal(0)[1] - 0.7).abs() < 1e-15);
        }
    }

    #[test]
    fn normalization_is_preserved() {
        let g = Graph::from_edges(6, vec![(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (2, 3)]).unwrap();
        let p = ModelParams::sbm(two_block(vec![vec![1.0, 4.0], vec![4.0, 1.0]]), 6);
        let cfg = BpConfig {
            max_iters: 7,
            ..Default::default()
        };
        let s = bp_converge(&g, &p, BpInit::Random { seed: 3 }, &cfg).unwrap();
        for v in s.messages().chain(s.marginals().chunks(2)) {
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(v.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn uniform_affinity_gives_paramagnetic_state() {
        let g = Graph::from_edges(5, vec![(0, 1), (1, 2), (3, 4)]).unwrap();
        let a = two_block(vec![vec![2.0, 2.0], vec![2.0, 2.0]]);
        let p = ModelParams::sbm(a.clone(), 5);
        let cfg = BpConfig {
            tol: 1e-13,
            ..Default::default()
        };
        let s = bp_converge(&g, &p, BpInit::Random { seed: 9 }, &cfg).unwrap();
        assert!(s.converged);
        for i in 0..5 {
            assert!((s.marginal(i)[0] - 0.5).abs() < 1e-10);
        }
        let prior = bp_converge(&g, &p, BpInit::Prior { seed: 0 }, &cfg).unwrap();
        let f1 = free_energy(&s, &g, &p).unwrap();
        let f2 = free_energy(&prior, &g, &p).unwrap();
        assert!((f1 - f2).abs() < 1e-10);
    }

    #[test]
    fn exact_topology_is_complete() {
        let g = Graph::from_edges(4, vec![(0, 1), (2, 3)]).unwrap();
        let t = Topology::build(&g, NonEdgeMode::Exact);
        assert_eq!(t.slots(), 12);
        for s in 0..t.slots() {
            assert_eq!(t.reverse[t.reverse[s]], s);
        }
        assert_eq!(t.linked.iter().filter(|&&l| l).count(), 4);
        let t = Topology::build(&g, NonEdgeMode::MeanField);
        assert_eq!(t.slots(), 4);
        for s in 0..t.slots() {
            assert_eq!(t.reverse[t.reverse[s]], s);
        }
    }

    #[test]
    fn expected_edges_total_twice_edge_count() {
        let g = Graph::from_edges(6, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3)]).unwrap();
        let p = ModelParams::sbm(two_block(vec![vec![1.0, 3.0], vec![3.0, 1.0]]), 6);
        let s = bp_converge(&g, &p, BpInit::Random { seed: 2 }, &BpConfig::default()).unwrap();
        let e = expected_block_edges(&s, &p);
        assert!((e.iter().sum::<f64>() - 14.0).abs() < 1e-10);
        assert!((e[1] - e[2]).abs() < 1e-12);
    }
}
