//! Randomized invariant checks shared by `properties.rs` and `acceptance.rs`.

use std::collections::BTreeSet;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::Rng;

use blockstruct::bp::{
    bp_converge, em_from, restart_select, select_min, BpConfig, BpInit, BpState, EmConfig, InitScheme, ModelKind,
    ModelParams, NonEdgeMode, RestartRecord,
};
use blockstruct::classify::{classify_affinity, normalize_affinity, DEFAULT_REL_TOL};
use blockstruct::experiments::LabelShares;
use blockstruct::generators::{bipartite_affinity, sample_planted, sample_sbm, stream_rng};
use blockstruct::graph::symmetrize;
use blockstruct::ingest::{generate_surrogate, parse_transactions, write_transactions, ParseMode, SurrogateParams};
use blockstruct::likelihood::exact_loglik;
use blockstruct::{AffinityMatrix, Assignment, DegreeCorrections, Graph, ThetaDistribution};

pub const CASES: u32 = 256;

#[allow(dead_code)] // used by acceptance.rs only
pub type Check = fn() -> Result<(), String>;

#[allow(dead_code)]
pub fn all() -> Vec<(&'static str, Check)> {
    vec![
        ("bp_normalization", bp_normalization),
        ("normalize_affinity_idempotent", normalize_affinity_idempotent),
        ("symmetrize_idempotent", symmetrize_idempotent),
        (
            "classifier_block_permutation_invariance",
            classifier_block_permutation_invariance,
        ),
        ("loglik_node_permutation_invariance", loglik_node_permutation_invariance),
        ("bp_block_permutation_equivariance", bp_block_permutation_equivariance),
        ("em_block_permutation_equivariance", em_block_permutation_equivariance),
        ("seed_determinism", seed_determinism),
        ("label_fractions_sum_to_one", label_fractions_sum_to_one),
        ("min_free_energy_selection", min_free_energy_selection),
        ("cumulative_aggregation_monotone", cumulative_aggregation_monotone),
        ("transaction_log_round_trip", transaction_log_round_trip),
    ]
}

fn run<S: Strategy>(strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn err(e: impl std::fmt::Display) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

fn random_graph(n: usize, p: f64, seed: u64) -> Graph {
    let mut rng = stream_rng(seed, 0);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, edges).expect("valid edges")
}

fn random_affinity(m: usize, seed: u64) -> AffinityMatrix {
    let mut rng = stream_rng(seed, 1);
    let mut rows = vec![vec![0.0; m]; m];
    for a in 0..m {
        for b in a..m {
            let v = 0.2 + 4.0 * rng.random::<f64>();
            rows[a][b] = v;
            rows[b][a] = v;
        }
    }
    let raw: Vec<f64> = (0..m).map(|_| 0.2 + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    AffinityMatrix::new(rows, raw.iter().map(|x| x / s).collect()).expect("valid affinity")
}

fn random_thetas(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 2);
    (0..n).map(|_| 0.5 + rng.random::<f64>()).collect()
}

fn modes() -> impl Strategy<Value = NonEdgeMode> {
    prop_oneof![
        Just(NonEdgeMode::MeanField),
        Just(NonEdgeMode::Exact),
        Just(NonEdgeMode::Ignore)
    ]
}

fn swap_perm(m: usize, k: usize) -> Vec<usize> {
    // a cyclic shift by k
    (0..m).map(|a| (a + k) % m).collect()
}

/// Every message and marginal is a probability vector after any number of sweeps.
pub fn bp_normalization() -> Result<(), String> {
    let s = (2usize..25, 0.0f64..0.6, 1usize..4, modes(), 1usize..20, any::<u64>());
    run(s, |(n, p, m, mode, iters, seed)| {
        let g = random_graph(n, p, seed);
        let aff = random_affinity(m, seed)
            .scaled((0.9 * n as f64 / 9.45).min(1.0))
            .map_err(err)?;
        let params = ModelParams::dcsbm(aff, random_thetas(n, seed));
        let cfg = BpConfig {
            max_iters: iters,
            non_edge: mode,
            ..BpConfig::default()
        };
        let st = bp_converge(&g, &params, BpInit::Random { seed }, &cfg).map_err(err)?;
        for v in st.marginals().chunks(m).chain(st.messages()) {
            let sum: f64 = v.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12, "sum {sum}");
            prop_assert!(v.iter().all(|x| *x >= 0.0));
        }
        Ok(())
    })
}

/// Normalizing a normalized affinity changes nothing, and the label ignores scale.
pub fn normalize_affinity_idempotent() -> Result<(), String> {
    run(
        (
            0.01f64..20.0,
            0.01f64..20.0,
            0.01f64..20.0,
            0.05f64..0.95,
            0.01f64..100.0,
        ),
        |(a, b, c, f, k)| {
            let aff = AffinityMatrix::new(vec![vec![a, b], vec![b, c]], vec![f, 1.0 - f]).map_err(err)?;
            let once = normalize_affinity(&aff).map_err(err)?;
            let again = AffinityMatrix::new(once.clone(), vec![f, 1.0 - f]).map_err(err)?;
            let twice = normalize_affinity(&again).map_err(err)?;
            for (x, y) in once.iter().flatten().zip(twice.iter().flatten()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let l1 = classify_affinity(&aff, DEFAULT_REL_TOL).map_err(err)?.label;
            let l2 = classify_affinity(&aff.scaled(k).map_err(err)?, DEFAULT_REL_TOL)
                .map_err(err)?
                .label;
            prop_assert_eq!(l1, l2);
            Ok(())
        },
    )
}

/// Symmetrizing an undirected graph's edge list returns the same graph.
pub fn symmetrize_idempotent() -> Result<(), String> {
    run((1usize..40, 0.0f64..0.5, any::<u64>()), |(n, p, seed)| {
        let g = random_graph(n, p, seed);
        let both = g.edges().flat_map(|(i, j)| [(i, j), (j, i)]);
        let h = symmetrize(both, n).map_err(err)?;
        prop_assert_eq!(&h, &g);
        let again = symmetrize(h.edges(), n).map_err(err)?;
        prop_assert_eq!(&again, &g);
        for (i, j) in g.edges() {
            prop_assert!(i != j && g.has_edge(j, i));
        }
        Ok(())
    })
}

/// Swapping the two blocks of an affinity leaves the label and witness unchanged.
pub fn classifier_block_permutation_invariance() -> Result<(), String> {
    run(
        (0.01f64..20.0, 0.01f64..20.0, 0.01f64..20.0, 0.05f64..0.95),
        |(a, b, c, f)| {
            let aff = AffinityMatrix::new(vec![vec![a, b], vec![b, c]], vec![f, 1.0 - f]).map_err(err)?;
            let x = classify_affinity(&aff, DEFAULT_REL_TOL).map_err(err)?;
            let y = classify_affinity(&aff.permuted(&[1, 0]), DEFAULT_REL_TOL).map_err(err)?;
            prop_assert_eq!(x.label, y.label);
            prop_assert_eq!(x.witness, y.witness);
            if a != c {
                prop_assert_eq!(x.first_block_fraction, y.first_block_fraction);
            }
            Ok(())
        },
    )
}

/// Relabeling nodes leaves the exact log-likelihood unchanged.
pub fn loglik_node_permutation_invariance() -> Result<(), String> {
    run((2usize..30, 0.0f64..0.5, 1usize..4, any::<u64>()), |(n, p, m, seed)| {
        let g = random_graph(n, p, seed);
        let aff = random_affinity(m, seed).scaled(0.2).map_err(err)?;
        let mut rng = stream_rng(seed, 3);
        // a few repeated theta values so grouping is exercised
        let levels = [0.5, 1.0, 1.5];
        let thetas: Vec<f64> = (0..n).map(|_| levels[rng.random_range(0..3)]).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        // node v of the relabeled graph is node perm[v] of the original
        let mut inv = vec![0; n];
        for (v, &u) in perm.iter().enumerate() {
            inv[u] = v;
        }
        let h = Graph::from_edges(n, g.edges().map(|(i, j)| (inv[i], inv[j]))).map_err(err)?;
        let tc = |t: Vec<f64>| DegreeCorrections {
            thetas: t,
            source: ThetaDistribution::Constant,
            seed: None,
        };
        let a = exact_loglik(
            &g,
            &aff,
            &tc(thetas.clone()),
            &Assignment::new(labels.clone(), m).map_err(err)?,
        )
        .map_err(err)?;
        let b = exact_loglik(
            &h,
            &aff,
            &tc(perm.iter().map(|&u| thetas[u]).collect()),
            &Assignment::new(perm.iter().map(|&u| labels[u]).collect(), m).map_err(err)?,
        )
        .map_err(err)?;
        prop_assert!(
            (a.value - b.value).abs() <= 1e-9 * a.value.abs().max(1.0),
            "{} vs {}",
            a.value,
            b.value
        );
        Ok(())
    })
}

/// Permuting the blocks of the parameters permutes the BP marginals.
pub fn bp_block_permutation_equivariance() -> Result<(), String> {
    let s = (2usize..20, 0.05f64..0.5, 2usize..4, 1usize..3, modes(), any::<u64>());
    run(s, |(n, p, m, k, mode, seed)| {
        let g = random_graph(n, p, seed);
        let aff = random_affinity(m, seed)
            .scaled((0.9 * n as f64 / 9.45).min(1.0))
            .map_err(err)?;
        let thetas = random_thetas(n, seed);
        let perm = swap_perm(m, k % m);
        let cfg = BpConfig {
            tol: 1e-12,
            max_iters: 300,
            non_edge: mode,
            ..BpConfig::default()
        };
        let a = bp_converge(
            &g,
            &ModelParams::dcsbm(aff.clone(), thetas.clone()),
            BpInit::Prior { seed },
            &cfg,
        )
        .map_err(err)?;
        let b = bp_converge(
            &g,
            &ModelParams::dcsbm(aff.permuted(&perm), thetas),
            BpInit::Prior { seed },
            &cfg,
        )
        .map_err(err)?;
        for i in 0..n {
            for (c, &src) in perm.iter().enumerate() {
                let d = (b.marginal(i)[c] - a.marginal(i)[src]).abs();
                prop_assert!(d < 1e-9, "node {i}: {d}");
            }
        }
        Ok(())
    })
}

/// EM started from block-permuted parameters reaches the same free energy,
/// block count and label.
pub fn em_block_permutation_equivariance() -> Result<(), String> {
    let s = (10usize..40, 0usize..2, any::<u64>());
    run(s, |(n, which, seed)| {
        let model = [ModelKind::Sbm, ModelKind::DcSbm][which];
        let planted = bipartite_affinity(2.0, 5.0).map_err(err)?;
        let g = sample_sbm(&planted, n, seed).map_err(err)?.graph;
        let aff = random_affinity(2, seed).scaled(2.0).map_err(err)?;
        let thetas = vec![1.0; n];
        let cfg = EmConfig::default();
        // a random start; the prior state is an unstable symmetric point where
        // rounding alone decides which basin EM falls into
        let start = BpState::random(&g, 2, cfg.bp.non_edge, seed);
        let learn = |a: AffinityMatrix, state: BpState| {
            em_from(
                &g,
                model,
                ModelParams::dcsbm(a, thetas.clone()),
                state,
                &cfg,
                InitScheme::Random,
                seed,
            )
        };
        let x = learn(aff.clone(), start.clone()).map_err(err)?;
        let y = learn(aff.permuted(&[1, 0]), start.permuted(&[1, 0])).map_err(err)?;
        // an unconverged run is not a fixed point, so rounding differences
        // between the two block orders can grow without bound
        if !(x.converged && y.converged) {
            return Ok(());
        }
        prop_assert_eq!(x.blocks(), y.blocks());
        prop_assert!(
            (x.free_energy - y.free_energy).abs() < 1e-8,
            "{} vs {}",
            x.free_energy,
            y.free_energy
        );
        // converged fixed points can sit on a flat family of equal free energy
        // (c_11 moved by 5e-2 with the BP tolerance alone on one probe), so the
        // parameters themselves are path dependent and are not compared
        let cx = blockstruct::classify::classify_model(&x, DEFAULT_REL_TOL).map_err(err)?;
        let cy = blockstruct::classify::classify_model(&y, DEFAULT_REL_TOL).map_err(err)?;
        prop_assert_eq!(cx.label, cy.label);
        Ok(())
    })
}

/// The same seed reproduces samples, surrogate series and the restart pipeline bit for bit.
pub fn seed_determinism() -> Result<(), String> {
    run((10usize..30, 0.0f64..0.9, any::<u64>()), |(n, delta, seed)| {
        let aff = bipartite_affinity(2.0, 5.0).map_err(err)?;
        let dist = ThetaDistribution::Bimodal { delta };
        let a = sample_planted(&aff, dist, n, seed).map_err(err)?;
        let b = sample_planted(&aff, dist, n, seed).map_err(err)?;
        prop_assert_eq!(&a.graph, &b.graph);
        prop_assert_eq!(&a.thetas.thetas, &b.thetas.thetas);
        let cfg = EmConfig::default();
        let x = restart_select(&a.graph, 2, ModelKind::DcSbm, 3, &InitScheme::MENU, seed, &cfg).map_err(err)?;
        let y = restart_select(&a.graph, 2, ModelKind::DcSbm, 3, &InitScheme::MENU, seed, &cfg).map_err(err)?;
        prop_assert_eq!(
            serde_json::to_string(&x).map_err(err)?,
            serde_json::to_string(&y).map_err(err)?
        );
        let p = SurrogateParams::default();
        let s1 = generate_surrogate(&p, 5, n, seed).map_err(err)?;
        let s2 = generate_surrogate(&p, 5, n, seed).map_err(err)?;
        prop_assert_eq!(s1, s2);
        Ok(())
    })
}

/// Label shares and block fractions are distributions.
pub fn label_fractions_sum_to_one() -> Result<(), String> {
    let labels = prop::collection::vec(0usize..4, 1..200);
    run((labels, 1usize..6), |(labels, m)| {
        let mut shares = LabelShares::default();
        for &l in &labels {
            shares.add(blockstruct::classify::StructureLabel::ALL[l]);
        }
        let total: f64 = blockstruct::classify::StructureLabel::ALL
            .iter()
            .map(|&l| shares.fraction(l))
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert_eq!(shares.total(), labels.len());
        let assign = Assignment::new(labels.iter().map(|l| l % m).collect(), m).map_err(err)?;
        let f: f64 = assign.fractions().iter().sum();
        prop_assert!((f - 1.0).abs() < 1e-12);
        Ok(())
    })
}

/// Selection returns the first minimum among converged restarts (all restarts
/// when none converged), skipping NaN, and the restart pipeline's best model
/// carries exactly that free energy.
pub fn min_free_energy_selection() -> Result<(), String> {
    let energy = prop_oneof![4 => -5.0f64..5.0, 1 => Just(f64::NAN), 1 => Just(0.5)];
    let entries = prop::collection::vec((energy, any::<bool>()), 1..30);
    run((entries, 8usize..30, any::<u64>()), |(entries, n, seed)| {
        let ledger: Vec<RestartRecord> = entries
            .iter()
            .enumerate()
            .map(|(index, &(free_energy, converged))| RestartRecord {
                index,
                init: InitScheme::Random,
                seed: 0,
                free_energy,
                converged,
                rounds: 1,
            })
            .collect();
        let k = select_min(&ledger);
        let any_converged = entries.iter().any(|e| e.1);
        let pool: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].1 || !any_converged).collect();
        prop_assert!(pool.contains(&k));
        let finite: Vec<f64> = pool.iter().map(|&i| entries[i].0).filter(|x| !x.is_nan()).collect();
        if let Some(min) = finite.iter().cloned().reduce(f64::min) {
            prop_assert_eq!(entries[k].0, min);
            prop_assert!(pool
                .iter()
                .filter(|&&i| i < k)
                .all(|&i| entries[i].0.is_nan() || entries[i].0 > min));
        } else {
            prop_assert_eq!(k, pool[0]);
        }
        let g = random_graph(n, 0.25, seed);
        if g.edge_count() > 0 {
            let out =
                restart_select(&g, 2, ModelKind::Sbm, 3, &InitScheme::MENU, seed, &EmConfig::default()).map_err(err)?;
            let best = out.ledger[select_min(&out.ledger)].free_energy;
            prop_assert_eq!(out.best.free_energy.to_bits(), best.to_bits());
            for r in out.ledger.iter().filter(|r| r.converged || !out.best.converged) {
                prop_assert!(r.free_energy.partial_cmp(&out.best.free_energy) != Some(std::cmp::Ordering::Less));
            }
        }
        Ok(())
    })
}

fn random_log(seed: u64, rows: usize, banks: usize, days: usize) -> String {
    let mut rng = stream_rng(seed, 4);
    let mut text = String::from("date,lender,borrower,amount\n");
    let mut lines: Vec<(u32, usize, usize)> = (0..rows)
        .map(|_| {
            (
                rng.random_range(0..days as u32),
                rng.random_range(0..banks),
                rng.random_range(0..banks),
            )
        })
        .collect();
    lines.sort_by_key(|l| l.0);
    for (d, l, b) in lines {
        text.push_str(&format!(
            "2015-03-{:02},B{l},B{b},{}\n",
            d + 1,
            1 + rng.random_range(0..1000)
        ));
    }
    text
}

/// Cumulative aggregates only gain edges.
pub fn cumulative_aggregation_monotone() -> Result<(), String> {
    run(
        (1usize..120, 2usize..15, 1usize..20, any::<u64>()),
        |(rows, banks, days, seed)| {
            let log =
                parse_transactions(random_log(seed, rows, banks, days).as_bytes(), ParseMode::Strict).map_err(err)?;
            let s = log.series;
            let mut prev: BTreeSet<(usize, usize)> = BTreeSet::new();
            for k in 1..=s.len() {
                let g = s.aggregate_first(k).map_err(err)?;
                prop_assert_eq!(g.node_count(), s.node_count());
                let cur: BTreeSet<(usize, usize)> = g.edges().collect();
                prop_assert!(prev.is_subset(&cur));
                prev = cur;
            }
            Ok(())
        },
    )
}

/// Writing and re-parsing a log keeps every (date, lender, borrower) triple and
/// the canonical text is a fixed point.
pub fn transaction_log_round_trip() -> Result<(), String> {
    run(
        (0usize..120, 2usize..15, 1usize..20, any::<u64>()),
        |(rows, banks, days, seed)| {
            let text = random_log(seed, rows, banks, days);
            let first = parse_transactions(text.as_bytes(), ParseMode::Strict).map_err(err)?;
            let mut out = Vec::new();
            write_transactions(&first.series, &mut out).map_err(err)?;
            let second = parse_transactions(out.as_slice(), ParseMode::Strict).map_err(err)?;
            let mut out2 = Vec::new();
            write_transactions(&second.series, &mut out2).map_err(err)?;
            prop_assert_eq!(&out, &out2);
            let triples = |s: &blockstruct::SnapshotSeries| -> BTreeSet<(String, String, String)> {
                let ids = s.registry();
                (0..s.len())
                    .flat_map(|k| {
                        s.snapshot(k).iter().map(move |&(l, b)| {
                            (
                                s.dates()[k].to_string(),
                                ids[l as usize].clone(),
                                ids[b as usize].clone(),
                            )
                        })
                    })
                    .collect()
            };
            let expected: BTreeSet<(String, String, String)> = text
                .lines()
                .skip(1)
                .map(|l| {
                    let f: Vec<&str> = l.split(',').collect();
                    (f[0].to_string(), f[1].to_string(), f[2].to_string())
                })
                .collect();
            prop_assert_eq!(triples(&first.series), expected.clone());
            prop_assert_eq!(triples(&second.series), expected);
            Ok(())
        },
    )
}
