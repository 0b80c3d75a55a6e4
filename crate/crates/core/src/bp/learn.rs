use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{expected_block_edges, free_energy, run_sweeps, BpConfig, BpState, ModelParams, NonEdgeMode};
use crate::error::{Error, Result};
use crate::generators::{derive_seed, stream_rng};
use crate::graph::Graph;
use crate::model::{AffinityMatrix, Assignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sbm,
    DcSbm,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Sbm => "sbm",
            ModelKind::DcSbm => "dcsbm",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sbm" => Ok(ModelKind::Sbm),
            "dcsbm" => Ok(ModelKind::DcSbm),
            other => Err(Error::InvalidParameter(format!("unknown model `{other}`"))),
        }
    }
}

/// Initial affinity for an EM run; all schemes are rescaled so the implied
/// mean degree equals the observed one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    Random,
    Bipartite,
    CorePeriphery,
}

impl InitScheme {
    pub const MENU: [InitScheme; 3] = [InitScheme::Random, InitScheme::Bipartite, InitScheme::CorePeriphery];
}

const SEED_LOW: f64 = 0.5;
const SEED_HIGH: f64 = 1.5;
// random entries are exp(U(-s, s)) so that the start is not below detectability
const RANDOM_LOG_SPREAD: f64 = 1.5;

/// Starting affinity for `scheme` with equal block fractions and mean
/// degree `mean_degree`.
pub fn initial_affinity(
    scheme: InitScheme,
    blocks: usize,
    mean_degree: f64,
    rng: &mut impl Rng,
) -> Result<AffinityMatrix> {
    let m = blocks;
    let mut c = vec![0.0; m * m];
    for a in 0..m {
        for b in a..m {
            let v = match scheme {
                InitScheme::Random => (RANDOM_LOG_SPREAD * (2.0 * rng.random::<f64>() - 1.0)).exp(),
                InitScheme::Bipartite => {
                    if a == b {
                        SEED_LOW
                    } else {
                        SEED_HIGH
                    }
                }
                // block 0 is the core
                InitScheme::CorePeriphery => match (a, b) {
                    (0, 0) => SEED_HIGH,
                    (0, _) => 1.0,
                    _ => SEED_LOW,
                },
            };
            c[a * m + b] = v;
            c[b * m + a] = v;
        }
    }
    let fractions = vec![1.0 / m as f64; m];
    let raw = AffinityMatrix::from_flat(m, c, fractions)?;
    let target = if mean_degree > 0.0 { mean_degree } else { 1.0 };
    raw.scaled(target / raw.mean_degree())
}

/// Closed-form maximum-likelihood parameters for a fixed hard assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardEstimates {
    /// Links between blocks `a` and `b` (each undirected edge counted once).
    pub links: Vec<Vec<usize>>,
    /// `p_ab = m_ab / N` exactly as the closed form is usually quoted.
    pub raw_p: Vec<Vec<f64>>,
    /// `theta_i = k_i / kappa_{g_i}` (sums to one within each block).
    pub raw_thetas: Vec<f64>,
    /// Affinity consistent with mean-one degree corrections:
    /// `c_ab = N e_ab / (N_a N_b)` with `e_ab` ordered endpoint pairs.
    pub affinity: AffinityMatrix,
    /// `theta_i = N_a k_i / kappa_a` (mean one within each block).
    pub thetas: Vec<f64>,
}

pub fn hard_m_step(g: &Graph, assign: &Assignment) -> Result<HardEstimates> {
    let n = g.node_count();
    if assign.len() != n {
        return Err(Error::InvalidParameter(
            "assignment length differs from node count".into(),
        ));
    }
    let m = assign.blocks();
    let mut links = vec![vec![0usize; m]; m];
    for (i, j) in g.edges() {
        let (a, b) = (assign.label(i), assign.label(j));
        links[a][b] += 1;
        if a != b {
            links[b][a] += 1;
        }
    }
    let sizes = assign.block_sizes();
    let mut kappa = vec![0.0; m];
    for v in 0..n {
        kappa[assign.label(v)] += g.degree(v) as f64;
    }
    let nf = n as f64;
    let raw_p = links
        .iter()
        .map(|r| r.iter().map(|&x| x as f64 / nf).collect())
        .collect();
    let ratio = |v: usize, scale: f64| {
        let k = kappa[assign.label(v)];
        if k > 0.0 {
            scale * g.degree(v) as f64 / k
        } else {
            0.0
        }
    };
    let raw_thetas = (0..n).map(|v| ratio(v, 1.0)).collect();
    let thetas = (0..n).map(|v| ratio(v, sizes[assign.label(v)] as f64)).collect();
    let mut c = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            let endpoints = if a == b { 2 * links[a][a] } else { links[a][b] } as f64;
            let denom = (sizes[a] * sizes[b]) as f64;
            c[a * m + b] = if denom > 0.0 { nf * endpoints / denom } else { 0.0 };
        }
    }
    let affinity = AffinityMatrix::from_flat(m, c, assign.fractions())?;
    Ok(HardEstimates {
        links,
        raw_p,
        raw_thetas,
        affinity,
        thetas,
    })
}

/// Soft M-step from the current BP marginals.
///
/// `n_a` is the mean marginal; `c_ab = N e_ab / (K_a K_b)` with `e_ab` the
/// expected endpoint pairs and `K_a` the soft theta-mass of block `a`. For the
/// dcSBM, `theta_i = k_i sum_a psi^i_a N n_a / kappa_a`, which is the hard
/// rule `N_a k_i / kappa_a` when marginals are one-hot.
pub fn m_step(g: &Graph, state: &BpState, params: &ModelParams, model: ModelKind) -> Result<ModelParams> {
    let m = state.blocks();
    let n = g.node_count();
    let nf = n as f64;
    let mut fractions = vec![0.0; m];
    for i in 0..n {
        for (a, p) in state.marginal(i).iter().enumerate() {
            fractions[a] += p / nf;
        }
    }
    let thetas = match model {
        ModelKind::Sbm => vec![1.0; n],
        ModelKind::DcSbm => {
            let mut kappa = vec![0.0; m];
            for i in 0..n {
                for (a, p) in state.marginal(i).iter().enumerate() {
                    kappa[a] += p * g.degree(i) as f64;
                }
            }
            (0..n)
                .map(|i| {
                    let w: f64 = state
                        .marginal(i)
                        .iter()
                        .enumerate()
                        .filter(|&(a, _)| kappa[a] > 0.0)
                        .map(|(a, p)| p * nf * fractions[a] / kappa[a])
                        .sum();
                    g.degree(i) as f64 * w
                })
                .collect()
        }
    };
    let mut mass = vec![0.0; m];
    for i in 0..n {
        for (a, p) in state.marginal(i).iter().enumerate() {
            mass[a] += p * thetas[i];
        }
    }
    let endpoints = expected_block_edges(state, params);
    let mut c = vec![0.0; m * m];
    for a in 0..m {
        for b in 0..m {
            let denom = mass[a] * mass[b];
            c[a * m + b] = if denom > 1e-300 {
                nf * endpoints[a * m + b] / denom
            } else {
                0.0
            };
        }
    }
    // exact symmetry
    for a in 0..m {
        for b in a + 1..m {
            let v = 0.5 * (c[a * m + b] + c[b * m + a]);
            c[a * m + b] = v;
            c[b * m + a] = v;
        }
    }
    let total: f64 = fractions.iter().sum();
    fractions.iter_mut().for_each(|f| *f /= total);
    Ok(ModelParams {
        affinity: AffinityMatrix::from_flat(m, c, fractions)?,
        thetas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmConfig {
    pub bp: BpConfig,
    /// Stop when no affinity entry or block fraction moves by more than this.
    pub tol: f64,
    pub max_rounds: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            bp: BpConfig::default(),
            tol: 1e-5,
            max_rounds: 50,
        }
    }
}

/// Result of one EM run (or the selected run of a restart batch).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnedModel {
    pub model: ModelKind,
    pub affinity: AffinityMatrix,
    /// Learned degree corrections (dcSBM) or all ones (SBM).
    pub thetas: Vec<f64>,
    pub assignment: Assignment,
    /// Row-major `N x m` marginals.
    pub marginals: Vec<f64>,
    /// Bethe free energy per node, nats.
    pub free_energy: f64,
    pub converged: bool,
    pub rounds: usize,
    pub init_scheme: InitScheme,
    pub restarts_used: usize,
    pub seed: u64,
    /// Blocks removed because their fraction fell below `1/N`.
    pub pruned_blocks: usize,
}

impl LearnedModel {
    pub fn blocks(&self) -> usize {
        self.affinity.blocks()
    }

    pub fn block_fractions(&self) -> &[f64] {
        self.affinity.fractions()
    }

    pub fn marginal(&self, node: usize) -> &[f64] {
        let m = self.blocks();
        &self.marginals[node * m..(node + 1) * m]
    }

    /// Block labels of the learned model relabeled by `perm` (new block `k`
    /// is old block `perm[k]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = self.blocks();
        let mut marginals = vec![0.0; self.marginals.len()];
        for (dst, src) in marginals.chunks_mut(m).zip(self.marginals.chunks(m)) {
            for k in 0..m {
                dst[k] = src[perm[k]];
            }
        }
        Self {
            affinity: self.affinity.permuted(perm),
            assignment: self.assignment.permuted(perm),
            marginals,
            ..self.clone()
        }
    }
}

fn param_change(old: &ModelParams, new: &ModelParams) -> f64 {
    let a = old
        .affinity
        .entries()
        .iter()
        .zip(new.affinity.entries())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let b = old
        .affinity
        .fractions()
        .iter()
        .zip(new.affinity.fractions())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    a.max(b)
}

/// EM with an explicit starting point; `state` must match `params` in block count.
pub fn em_from(
    g: &Graph,
    model: ModelKind,
    mut params: ModelParams,
    mut state: BpState,
    cfg: &EmConfig,
    init_scheme: InitScheme,
    seed: u64,
) -> Result<LearnedModel> {
    if g.node_count() == 0 {
        return Err(Error::EmptyNodeSet("cannot learn on an empty graph"));
    }
    let n = g.node_count();
    let mut best: Option<(f64, ModelParams, BpState)> = None;
    let mut converged = false;
    let mut rounds = 0;
    let mut pruned_blocks = 0;
    while rounds < cfg.max_rounds {
        rounds += 1;
        run_sweeps(&mut state, &params, &cfg.bp)?;
        let f = free_energy(&state, g, &params)?;
        if f.is_finite() && best.as_ref().is_none_or(|(bf, _, _)| f < *bf) {
            best = Some((f, params.clone(), state.clone()));
        }
        let mut next = m_step(g, &state, &params, model)?;
        // prune blocks that lost all support
        while next.affinity.blocks() > 1 {
            let Some(a) = next.affinity.fractions().iter().position(|&x| x < 1.0 / n as f64) else {
                break;
            };
            log::warn!("pruning block {a} (fraction {:.3e})", next.affinity.fractions()[a]);
            state.drop_block(a);
            next = prune_params(&next, a)?;
            pruned_blocks += 1;
            best = None;
        }
        let delta = if next.affinity.blocks() == params.affinity.blocks() {
            param_change(&params, &next)
        } else {
            f64::INFINITY
        };
        params = next;
        if delta < cfg.tol && state.converged {
            run_sweeps(&mut state, &params, &cfg.bp)?;
            converged = state.converged;
            break;
        }
    }
    let f_final = free_energy(&state, g, &params)?;
    let (free, params, state) = match best {
        Some((bf, bp, bs)) if !converged && bf < f_final => (bf, bp, bs),
        _ => (f_final, params, state),
    };
    let m = params.affinity.blocks();
    Ok(LearnedModel {
        model,
        assignment: Assignment::new(state.hard_assignment(), m)?,
        marginals: state.marginals().to_vec(),
        affinity: params.affinity,
        thetas: params.thetas,
        free_energy: free,
        converged,
        rounds,
        init_scheme,
        restarts_used: 1,
        seed,
        pruned_blocks,
    })
}

fn prune_params(p: &ModelParams, drop: usize) -> Result<ModelParams> {
    let m = p.affinity.blocks();
    let keep: Vec<usize> = (0..m).filter(|&a| a != drop).collect();
    let c = keep
        .iter()
        .flat_map(|&a| keep.iter().map(move |&b| (a, b)))
        .map(|(a, b)| p.affinity.get(a, b))
        .collect();
    let mut fr: Vec<f64> = keep.iter().map(|&a| p.affinity.fractions()[a]).collect();
    let s: f64 = fr.iter().sum();
    fr.iter_mut().for_each(|x| *x /= s);
    Ok(ModelParams {
        affinity: AffinityMatrix::from_flat(m - 1, c, fr)?,
        thetas: p.thetas.clone(),
    })
}

/// Starting parameters for `scheme` on `g`. For the dcSBM the degree
/// corrections start at `k_i / <k>`.
pub fn initial_params(
    g: &Graph,
    blocks: usize,
    model: ModelKind,
    scheme: InitScheme,
    seed: u64,
) -> Result<ModelParams> {
    let mut rng = stream_rng(seed, 11);
    let mean = g.mean_degree();
    let affinity = initial_affinity(scheme, blocks, mean, &mut rng)?;
    let thetas = match model {
        ModelKind::Sbm => vec![1.0; g.node_count()],
        ModelKind::DcSbm if mean > 0.0 => g.degrees().iter().map(|&k| k as f64 / mean).collect(),
        ModelKind::DcSbm => vec![1.0; g.node_count()],
    };
    Ok(ModelParams { affinity, thetas })
}

/// Alternate BP and the soft M-step from the `init` starting point.
pub fn em_learn(
    g: &Graph,
    blocks: usize,
    model: ModelKind,
    init: InitScheme,
    cfg: &EmConfig,
    seed: u64,
) -> Result<LearnedModel> {
    if blocks < 1 {
        return Err(Error::InvalidParameter("need at least one block".into()));
    }
    let params = initial_params(g, blocks, model, init, seed)?;
    let state = BpState::random(g, blocks, cfg.bp.non_edge, seed);
    em_from(g, model, params, state, cfg, init, seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartRecord {
    pub index: usize,
    pub init: InitScheme,
    pub seed: u64,
    pub free_energy: f64,
    pub converged: bool,
    pub rounds: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RestartOutcome {
    pub best: LearnedModel,
    pub ledger: Vec<RestartRecord>,
}

/// Run `n_restarts` EM learners, cycling through `init_menu`, and keep the
/// converged one with the lowest free energy (ties to the lowest restart
/// index). If nothing converged, the lowest free energy overall is returned
/// as a best-effort result.
pub fn restart_select(
    g: &Graph,
    blocks: usize,
    model: ModelKind,
    n_restarts: usize,
    init_menu: &[InitScheme],
    seed: u64,
    cfg: &EmConfig,
) -> Result<RestartOutcome> {
    if n_restarts == 0 || init_menu.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one restart and one init scheme".into(),
        ));
    }
    let runs: Vec<LearnedModel> = (0..n_restarts)
        .into_par_iter()
        .map(|k| {
            let s = derive_seed(seed, k as u64);
            em_learn(g, blocks, model, init_menu[k % init_menu.len()], cfg, s)
        })
        .collect::<Result<_>>()?;
    let ledger: Vec<RestartRecord> = runs
        .iter()
        .enumerate()
        .map(|(index, r)| RestartRecord {
            index,
            init: r.init_scheme,
            seed: r.seed,
            free_energy: r.free_energy,
            converged: r.converged,
            rounds: r.rounds,
        })
        .collect();
    let best_index = select_min(&ledger);
    let mut best = runs.into_iter().nth(best_index).expect("index within ledger");
    best.restarts_used = n_restarts;
    if !ledger.iter().any(|r| r.converged) {
        log::warn!("no restart converged; returning best-effort model");
    }
    Ok(RestartOutcome { best, ledger })
}

/// Index of the minimum free energy among converged restarts, or among all
/// restarts when none converged. The free energy of a run that stopped short
/// of a fixed point is not comparable, so it only wins by default.
/// NaN never wins, ties go to the lower index.
pub fn select_min(ledger: &[RestartRecord]) -> usize {
    let any_converged = ledger.iter().any(|r| r.converged);
    let mut best: Option<usize> = None;
    for (k, r) in ledger.iter().enumerate() {
        if any_converged && !r.converged {
            continue;
        }
        best = match best {
            Some(b) => {
                let cur = ledger[b].free_energy;
                if r.free_energy < cur || (cur.is_nan() && !r.free_energy.is_nan()) {
                    Some(k)
                } else {
                    Some(b)
                }
            }
            None => Some(k),
        };
    }
    best.unwrap_or(0)
}

/// Convenience for callers that only need the mean-field engine defaults.
pub fn default_em_config() -> EmConfig {
    EmConfig {
        bp: BpConfig {
            non_edge: NonEdgeMode::MeanField,
            ..BpConfig::default()
        },
        ..EmConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{bipartite_affinity, sample_sbm};

    #[test]
    fn hard_m_step_on_complete_bipartite() {
        let g = Graph::from_edges(4, vec![(0, 2), (0, 3), (1, 2), (1, 3)]).unwrap();
        let asg = Assignment::new(vec![0, 0, 1, 1], 2).unwrap();
        let h = hard_m_step(&g, &asg).unwrap();
        assert_eq!(h.links, vec![vec![0, 4], vec![4, 0]]);
        assert_eq!(h.raw_p[0][1], 1.0);
        // every cross pair is linked: probability c_12 / N = 1
        assert_eq!(h.affinity.get(0, 1), 4.0);
        assert_eq!(h.affinity.get(0, 0), 0.0);
        assert!(h.thetas.iter().all(|&t| (t - 1.0).abs() < 1e-15));
        assert!(h.raw_thetas.iter().all(|&t| (t - 0.5).abs() < 1e-15));
    }

    #[test]
    fn hard_m_step_raw_and_consistent_differ() {
        // triangle 0-1-2 in block 0 plus pendant 3 in block 1 attached to 0
        let g = Graph::from_edges(4, vec![(0, 1), (1, 2), (0, 2), (0, 3)]).unwrap();
        let asg = Assignment::new(vec![0, 0, 0, 1], 2).unwrap();
        let h = hard_m_step(&g, &asg).unwrap();
        assert_eq!(h.raw_p[0][0], 3.0 / 4.0);
        assert!((h.affinity.get(0, 0) - 4.0 * 6.0 / 9.0).abs() < 1e-12);
        assert!((h.affinity.get(0, 1) - 4.0 * 1.0 / 3.0).abs() < 1e-12);
        // star centre alone in its block
        assert_eq!(h.raw_thetas[3], 1.0);
        assert_eq!(h.thetas[3], 1.0);
    }

    #[test]
    fn star_center_alone() {
        let g = Graph::from_edges(4, vec![(0, 1), (0, 2), (0, 3)]).unwrap();
        let asg = Assignment::new(vec![0, 1, 1, 1], 2).unwrap();
        let h = hard_m_step(&g, &asg).unwrap();
        assert_eq!(h.raw_thetas[0], 1.0);
        assert!((h.raw_thetas[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn initial_affinities_preserve_mean_degree() {
        let mut rng = stream_rng(1, 0);
        for scheme in InitScheme::MENU {
            let a = initial_affinity(scheme, 2, 6.0, &mut rng).unwrap();
            assert!((a.mean_degree() - 6.0).abs() < 1e-12);
        }
        let b = initial_affinity(InitScheme::Bipartite, 2, 6.0, &mut rng).unwrap();
        assert!(b.get(0, 1) > b.get(0, 0));
        let cp = initial_affinity(InitScheme::CorePeriphery, 2, 6.0, &mut rng).unwrap();
        assert!(cp.get(0, 0) > cp.get(0, 1) && cp.get(0, 1) > cp.get(1, 1));
    }

    #[test]
    fn em_recovers_planted_bipartite() {
        let a = bipartite_affinity(2.0, 5.0).unwrap();
        let smp = sample_sbm(&a, 200, 5).unwrap();
        let out = restart_select(
            &smp.graph,
            2,
            ModelKind::Sbm,
            4,
            &InitScheme::MENU,
            3,
            &EmConfig::default(),
        )
        .unwrap();
        let l = &out.best;
        let (x, y) = (l.affinity.get(0, 1), l.affinity.get(0, 0).max(l.affinity.get(1, 1)));
        assert!(x > 2.0 * y, "learned {:?}", l.affinity.rows());
        let min = out.ledger.iter().map(|r| r.free_energy).fold(f64::INFINITY, f64::min);
        assert_eq!(l.free_energy, min);
    }
}
