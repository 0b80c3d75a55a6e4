use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use blockstruct::bp::{restart_select, EmConfig, InitScheme, LearnedModel, ModelKind, RestartRecord};
use blockstruct::classify::{classify_affinity, classify_model, normalize_affinity, Classification, DEFAULT_REL_TOL};
use blockstruct::experiments::{
    laplacian_ordering, run_aggregation_sweep, run_crossing_experiment, run_structure_fraction_bimodal,
    run_structure_fraction_powerlaw, write_csv, AggConfig, RunManifest, SweepConfig,
};
use blockstruct::generators::{bipartite_affinity, sample_planted};
use blockstruct::graph::{degree_dispersion, density, Graph, SnapshotSeries};
use blockstruct::ingest::{
    generate_surrogate, parse_transactions, surrogate_banks, write_transactions, ParseMode, SurrogateParams,
};
use blockstruct::{AffinityMatrix, ThetaDistribution};

use crate::config::{layered, Flags};
use crate::{
    AggregateArgs, ClassifyArgs, Command, Common, GenModel, GenerateArgs, InferArgs, OrderArgs, SweepArgs, SweepName,
    UsageError,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate(a) => generate(a),
        Command::Infer(a) => infer(a),
        Command::Classify(a) => classify(a),
        Command::Sweep(a) => sweep(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Order(a) => order(a),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn manifest<T: Serialize>(dir: &Path, command: &str, seed: Option<u64>, settings: &T, outputs: &[&str]) -> Result<()> {
    let m = RunManifest::new(command, seed, settings, outputs.iter().map(|s| s.to_string()).collect())?;
    m.write(&dir.join("manifest.json"))?;
    Ok(())
}

fn read_graph(path: &Path) -> Result<Graph> {
    let f = File::open(path).with_context(|| format!("cannot open graph {}", path.display()))?;
    Graph::read_edge_list(BufReader::new(f)).with_context(|| format!("cannot parse graph {}", path.display()))
}

fn read_series(path: &Path, mode: ParseMode) -> Result<SnapshotSeries> {
    let f = File::open(path).with_context(|| format!("cannot open transaction log {}", path.display()))?;
    let log =
        parse_transactions(BufReader::new(f), mode).with_context(|| format!("cannot parse {}", path.display()))?;
    if log.self_loops > 0 {
        log::warn!("{} self-transactions ignored", log.self_loops);
    }
    if !log.skipped.is_empty() {
        log::warn!("{} malformed rows skipped", log.skipped.len());
    }
    Ok(log.series)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct GenerateSettings {
    n: usize,
    c: f64,
    r: f64,
    theta: String,
    delta: f64,
    alpha: f64,
    seed: u64,
    days: usize,
    banks: usize,
    surrogate: SurrogateParams,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        Self {
            n: 80,
            c: 2.0,
            r: 5.0,
            theta: "bimodal".into(),
            delta: 0.5,
            alpha: 4.0,
            seed: 1,
            days: 250,
            banks: 80,
            surrogate: SurrogateParams::default(),
        }
    }
}

fn generate(a: GenerateArgs) -> Result<()> {
    let Common { out, config, seed } = a.common;
    let mut f = Flags::default();
    f.set("n", a.n)
        .set("c", a.c)
        .set("r", a.r)
        .set("theta", a.theta)
        .set("delta", a.delta)
        .set("alpha", a.alpha)
        .set("seed", seed)
        .set("days", a.days)
        .set("banks", a.banks);
    let s: GenerateSettings = layered(&GenerateSettings::default(), config.as_deref(), f.0)?;
    prepare_out(&out)?;
    match a.model {
        GenModel::Surrogate => {
            s.surrogate.validate().map_err(|e| usage(e.to_string()))?;
            let series = generate_surrogate(&s.surrogate, s.days, s.banks, s.seed)?;
            let mut w = BufWriter::new(File::create(out.join("transactions.csv"))?);
            write_transactions(&series, &mut w)?;
            w.flush()?;
            let (activity, roles) = surrogate_banks(&s.surrogate, s.banks, s.seed);
            let rows: Vec<BankRow> = series
                .registry()
                .iter()
                .enumerate()
                .map(|(i, id)| BankRow {
                    bank: id.clone(),
                    role: if roles[i] { "lender" } else { "borrower" },
                    activity: activity[i],
                })
                .collect();
            write_csv(&out.join("banks.csv"), &rows)?;
            manifest(
                &out,
                "generate surrogate",
                Some(s.seed),
                &s,
                &["transactions.csv", "banks.csv"],
            )?;
            let links: usize = (0..series.len()).map(|k| series.snapshot(k).len()).sum();
            println!("surrogate: {} banks, {} days, {links} daily links", s.banks, s.days);
        }
        GenModel::Sbm | GenModel::Dcsbm => {
            let dist = match (a.model, s.theta.as_str()) {
                (GenModel::Sbm, _) | (_, "constant") => ThetaDistribution::Constant,
                (_, "bimodal") => ThetaDistribution::Bimodal { delta: s.delta },
                (_, "powerlaw") => ThetaDistribution::PowerLaw { alpha: s.alpha },
                (_, other) => return Err(usage(format!("unknown theta distribution `{other}`"))),
            };
            dist.validate().map_err(|e| usage(e.to_string()))?;
            let aff = bipartite_affinity(s.c, s.r).map_err(|e| usage(e.to_string()))?;
            let sample = sample_planted(&aff, dist, s.n, s.seed)?;
            let mut w = BufWriter::new(File::create(out.join("graph.txt"))?);
            sample.graph.write_edge_list(&mut w)?;
            w.flush()?;
            write_json(&out.join("sample.json"), &sample.metadata())?;
            let name = if matches!(a.model, GenModel::Sbm) {
                "generate sbm"
            } else {
                "generate dcsbm"
            };
            manifest(&out, name, Some(s.seed), &s, &["graph.txt", "sample.json"])?;
            println!(
                "{} nodes, {} edges, mean degree {:.3}, clipped pairs {}",
                sample.graph.node_count(),
                sample.graph.edge_count(),
                sample.graph.mean_degree(),
                sample.clipped_pairs
            );
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct BankRow {
    bank: String,
    role: &'static str,
    activity: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct InferSettings {
    model: ModelKind,
    blocks: usize,
    restarts: usize,
    seed: u64,
    init: Vec<InitScheme>,
    em: EmConfig,
    rel_tol: f64,
}

impl Default for InferSettings {
    fn default() -> Self {
        Self {
            model: ModelKind::Sbm,
            blocks: 2,
            restarts: 20,
            seed: 1,
            init: InitScheme::MENU.to_vec(),
            em: EmConfig::default(),
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

/// Contents of `learned.json`.
#[derive(Serialize, Deserialize)]
struct LearnedFile {
    learned: LearnedModel,
    classification: Option<Classification>,
    ledger: Vec<RestartRecord>,
}

#[derive(Serialize)]
struct AssignmentRow {
    node: usize,
    node_id: String,
    block: usize,
    marginals: String,
}

fn infer(a: InferArgs) -> Result<()> {
    let Common { out, config, seed } = a.common;
    let mut f = Flags::default();
    f.set("model", a.model.as_deref())
        .set("blocks", a.blocks)
        .set("restarts", a.restarts)
        .set("seed", seed);
    let s: InferSettings = layered(&InferSettings::default(), config.as_deref(), f.0)?;
    if s.blocks < 1 || s.restarts < 1 || s.init.is_empty() {
        return Err(usage("blocks, restarts and the init list must be non-empty"));
    }
    let g = read_graph(&a.input)?;
    if g.node_count() == 0 {
        bail!("graph {} has no nodes", a.input.display());
    }
    prepare_out(&out)?;
    let outcome = restart_select(&g, s.blocks, s.model, s.restarts, &s.init, s.seed, &s.em)?;
    let learned = outcome.best;
    let classification = if learned.blocks() <= 2 {
        Some(classify_model(&learned, s.rel_tol)?)
    } else {
        None
    };
    let rows: Vec<AssignmentRow> = (0..g.node_count())
        .map(|v| AssignmentRow {
            node: v,
            node_id: g.node_ids()[v].clone(),
            block: learned.assignment.label(v),
            marginals: learned
                .marginal(v)
                .iter()
                .map(|x| format!("{x:.6}"))
                .collect::<Vec<_>>()
                .join(";"),
        })
        .collect();
    write_csv(&out.join("assignment.csv"), &rows)?;
    write_csv(&out.join("restarts.csv"), &outcome.ledger)?;
    let summary = match &classification {
        Some(c) => c.to_record(),
        None => format!("{} blocks (no two-block label)", learned.blocks()),
    };
    println!(
        "{} model: {summary}; free energy {:.6}; converged {}",
        s.model, learned.free_energy, learned.converged
    );
    if !outcome.ledger.iter().any(|r| r.converged) {
        eprintln!("warning: no restart converged; result is best effort");
    }
    write_json(
        &out.join("learned.json"),
        &LearnedFile {
            learned,
            classification,
            ledger: outcome.ledger,
        },
    )?;
    manifest(
        &out,
        "infer",
        Some(s.seed),
        &s,
        &["learned.json", "assignment.csv", "restarts.csv"],
    )?;
    Ok(())
}

fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|_| usage(format!("`{x}` is not a number")))
        })
        .collect()
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let rel_tol = a.rel_tol.unwrap_or(DEFAULT_REL_TOL);
    let (c, aff) = match (&a.input, &a.affinity) {
        (Some(path), _) => {
            let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            let file: LearnedFile = serde_json::from_reader(BufReader::new(f))
                .with_context(|| format!("cannot parse {}", path.display()))?;
            (classify_model(&file.learned, rel_tol)?, file.learned.affinity)
        }
        (None, Some(text)) => {
            let rows = text.split(';').map(parse_list).collect::<Result<Vec<_>>>()?;
            let aff = match &a.fractions {
                Some(fr) => AffinityMatrix::new(rows, parse_list(fr)?),
                None => AffinityMatrix::with_uniform_fractions(rows),
            }
            .map_err(|e| usage(e.to_string()))?;
            (classify_affinity(&aff, rel_tol).map_err(|e| usage(e.to_string()))?, aff)
        }
        (None, None) => return Err(usage("need --input or --affinity")),
    };
    prepare_out(&a.out)?;
    #[derive(Serialize)]
    struct Out {
        classification: Classification,
        normalized: Vec<Vec<f64>>,
        rel_tol: f64,
    }
    let normalized = normalize_affinity(&aff)?;
    write_json(
        &a.out.join("classification.json"),
        &Out {
            classification: c,
            normalized,
            rel_tol,
        },
    )?;
    #[derive(Serialize)]
    struct Settings<'a> {
        input: Option<&'a PathBuf>,
        affinity: Vec<Vec<f64>>,
        fractions: &'a [f64],
        rel_tol: f64,
    }
    manifest(
        &a.out,
        "classify",
        None,
        &Settings {
            input: a.input.as_ref(),
            affinity: aff.rows(),
            fractions: aff.fractions(),
            rel_tol,
        },
        &["classification.json"],
    )?;
    println!("{}", c.to_record());
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct AggSettings {
    #[serde(flatten)]
    agg: AggConfig,
    input: Option<PathBuf>,
    days: usize,
    banks: usize,
    surrogate: SurrogateParams,
}

impl Default for AggSettings {
    fn default() -> Self {
        Self {
            agg: AggConfig::default(),
            input: None,
            days: 250,
            banks: 80,
            surrogate: SurrogateParams::default(),
        }
    }
}

fn sweep(a: SweepArgs) -> Result<()> {
    if a.name == SweepName::Agg {
        return sweep_agg(a);
    }
    let Common { out, config, seed } = a.common;
    for (flag, set) in [
        ("--input", a.input.is_some()),
        ("--days", a.days.is_some()),
        ("--banks", a.banks.is_some()),
    ] {
        if set {
            return Err(usage(format!("{flag} only applies to `sweep agg`")));
        }
    }
    let base = match a.name {
        SweepName::Fig1 => SweepConfig {
            grid: (0..=9).map(|k| k as f64 / 10.0).collect(),
            ..Default::default()
        },
        SweepName::Fig3 => SweepConfig {
            grid: vec![3.2, 3.5, 4.0, 5.0, 6.0, 8.0, 10.0],
            ..Default::default()
        },
        _ => SweepConfig::default(),
    };
    let mut f = Flags::default();
    f.set("samples_per_point", a.samples)
        .set("restarts_per_sample", a.restarts)
        .set("grid", a.grid)
        .set("n", a.n)
        .set("c", a.c)
        .set("r", a.r)
        .set("models", a.models)
        .set("seed", seed);
    let cfg: SweepConfig = layered(&base, config.as_deref(), f.0)?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    prepare_out(&out)?;
    let (file, name) = match a.name {
        SweepName::Fig1 => {
            let r = run_crossing_experiment(&cfg)?;
            write_csv(&out.join("fig1_crossing.csv"), &r.points)?;
            for p in &r.points {
                println!(
                    "delta {:.2}: L_real {} L_bs {} L_db {} L_bp {}",
                    p.delta,
                    fmt_opt(p.l_real_mean),
                    fmt_opt(p.l_bs_mean),
                    fmt_opt(p.l_db_mean),
                    fmt_opt(p.l_bp_mean)
                );
            }
            ("fig1_crossing.csv", "sweep fig1")
        }
        SweepName::Fig2 | SweepName::Fig3 => {
            let r = if a.name == SweepName::Fig2 {
                run_structure_fraction_bimodal(&cfg)
            } else {
                run_structure_fraction_powerlaw(&cfg)
            }
            .map_err(param_err)?;
            let file = if a.name == SweepName::Fig2 {
                "fig2_fraction_bimodal.csv"
            } else {
                "fig3_fraction_powerlaw.csv"
            };
            write_csv(&out.join(file), &r.points)?;
            for p in &r.points {
                println!(
                    "{} {}: bipartite {:.3} core-periphery {:.3} ({} samples)",
                    p.param, p.model, p.fraction_bipartite, p.fraction_core_periphery, p.samples
                );
            }
            (
                file,
                if a.name == SweepName::Fig2 {
                    "sweep fig2"
                } else {
                    "sweep fig3"
                },
            )
        }
        SweepName::Agg => unreachable!("handled above"),
    };
    manifest(&out, name, Some(cfg.seed), &cfg, &[file])?;
    Ok(())
}

/// Bad parameters are usage errors; anything else is a runtime failure.
fn param_err(e: blockstruct::Error) -> anyhow::Error {
    match e {
        blockstruct::Error::InvalidParameter(m) => usage(m),
        other => other.into(),
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{v:.4}"))
}

fn sweep_agg(a: SweepArgs) -> Result<()> {
    let Common { out, config, seed } = a.common;
    for (flag, set) in [
        ("--samples", a.samples.is_some()),
        ("--n", a.n.is_some()),
        ("--c", a.c.is_some()),
        ("--r", a.r.is_some()),
    ] {
        if set {
            return Err(usage(format!("{flag} does not apply to `sweep agg`")));
        }
    }
    let horizons = match a.grid {
        Some(g) => Some(
            g.iter()
                .map(|&x| {
                    if x >= 1.0 && x.fract() == 0.0 {
                        Ok(x as usize)
                    } else {
                        Err(usage(format!("horizon {x} is not a whole number of days")))
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        None => None,
    };
    let mut f = Flags::default();
    f.set("restarts", a.restarts)
        .set("horizons", horizons)
        .set("models", a.models)
        .set("seed", seed)
        .set("input", a.input)
        .set("days", a.days)
        .set("banks", a.banks);
    let s: AggSettings = layered(&AggSettings::default(), config.as_deref(), f.0)?;
    let series = match &s.input {
        Some(path) => read_series(path, ParseMode::Strict)?,
        None => {
            s.surrogate.validate().map_err(|e| usage(e.to_string()))?;
            generate_surrogate(&s.surrogate, s.days, s.banks, s.agg.seed)?
        }
    };
    if let Some(h) = s.agg.horizons.iter().find(|&&h| h == 0 || h > series.len()) {
        return Err(usage(format!("horizon {h} outside 1..={} days", series.len())));
    }
    prepare_out(&out)?;
    let r = run_aggregation_sweep(&series, &s.agg)?;
    write_csv(&out.join("agg_sweep.csv"), &r.points)?;
    for p in &r.points {
        println!(
            "{:3} days {:6}: rho {:.4} r_p {:.3} label {}",
            p.horizon_days,
            p.model.to_string(),
            p.rho,
            p.r_p,
            p.label.map_or("-".to_string(), |l| l.to_string())
        );
    }
    manifest(&out, "sweep agg", Some(s.agg.seed), &s, &["agg_sweep.csv"])?;
    Ok(())
}

#[derive(Serialize)]
struct MetricsRow {
    window: usize,
    start: String,
    end: String,
    days: usize,
    nodes: usize,
    non_isolated: usize,
    edges: usize,
    rho: Option<f64>,
    r_p: Option<f64>,
}

fn metrics(window: usize, start: String, end: String, days: usize, g: &Graph) -> MetricsRow {
    MetricsRow {
        window,
        start,
        end,
        days,
        nodes: g.node_count(),
        non_isolated: g.non_isolated().len(),
        edges: g.edge_count(),
        rho: density(g, true).ok(),
        r_p: degree_dispersion(g, true).ok(),
    }
}

fn aggregate(a: AggregateArgs) -> Result<()> {
    let mode = if a.lenient {
        ParseMode::Lenient
    } else {
        ParseMode::Strict
    };
    let series = read_series(&a.input, mode)?;
    if series.is_empty() {
        bail!("transaction log {} has no rows", a.input.display());
    }
    prepare_out(&a.out)?;
    let dates = series.dates();
    let mut outputs = vec!["metrics.csv".to_string()];
    let mut rows = Vec::new();
    let write_graph = |g: &Graph, name: &str| -> Result<()> {
        let mut w = BufWriter::new(File::create(a.out.join(name))?);
        g.write_edge_list(&mut w)?;
        w.flush()?;
        Ok(())
    };
    match a.window {
        Some(len) => {
            if len == 0 {
                return Err(usage("--window must be at least 1"));
            }
            for (k, g) in series.fixed_windows(len).iter().enumerate() {
                let lo = k * len;
                let hi = (lo + len).min(series.len()) - 1;
                let name = format!("window_{k:03}.txt");
                write_graph(g, &name)?;
                outputs.push(name);
                rows.push(metrics(k, dates[lo].to_string(), dates[hi].to_string(), hi - lo + 1, g));
            }
        }
        None => {
            let days = a.days.unwrap_or(series.len());
            if days == 0 || days > series.len() {
                return Err(usage(format!("--days must lie in 1..={}", series.len())));
            }
            let g = series.aggregate_first(days)?;
            write_graph(&g, "aggregate.txt")?;
            outputs.push("aggregate.txt".into());
            rows.push(metrics(0, dates[0].to_string(), dates[days - 1].to_string(), days, &g));
        }
    }
    write_csv(&a.out.join("metrics.csv"), &rows)?;
    let ids: Vec<String> = series.registry().to_vec();
    write_csv(
        &a.out.join("nodes.csv"),
        &ids.iter()
            .enumerate()
            .map(|(i, id)| (i, id.as_str()))
            .collect::<Vec<_>>(),
    )?;
    outputs.push("nodes.csv".into());
    for r in &rows {
        println!(
            "{}..{} ({} days): {} edges on {} active banks, rho {} r_p {}",
            r.start,
            r.end,
            r.days,
            r.edges,
            r.non_isolated,
            fmt_opt(r.rho),
            fmt_opt(r.r_p)
        );
    }
    #[derive(Serialize)]
    struct Settings<'a> {
        input: &'a Path,
        days: Option<usize>,
        window: Option<usize>,
        lenient: bool,
    }
    let outs: Vec<&str> = outputs.iter().map(String::as_str).collect();
    manifest(
        &a.out,
        "aggregate",
        None,
        &Settings {
            input: &a.input,
            days: a.days,
            window: a.window,
            lenient: a.lenient,
        },
        &outs,
    )?;
    Ok(())
}

fn order(a: OrderArgs) -> Result<()> {
    let g = read_graph(&a.graph)?;
    let f = File::open(&a.learned).with_context(|| format!("cannot open {}", a.learned.display()))?;
    let file: LearnedFile =
        serde_json::from_reader(BufReader::new(f)).with_context(|| format!("cannot parse {}", a.learned.display()))?;
    let o = laplacian_ordering(&g, &file.learned)?;
    prepare_out(&a.out)?;
    #[derive(Serialize)]
    struct OrderRow {
        position: usize,
        node: usize,
        node_id: String,
        block: usize,
        marginal: f64,
    }
    let rows: Vec<OrderRow> = o
        .order
        .iter()
        .enumerate()
        .map(|(p, &v)| OrderRow {
            position: p,
            node: v,
            node_id: g.node_ids()[v].clone(),
            block: o.blocks[p],
            marginal: o.confidence[p],
        })
        .collect();
    write_csv(&a.out.join("laplacian_order.csv"), &rows)?;
    #[derive(Serialize)]
    struct Entry {
        row: usize,
        col: usize,
        value: f64,
    }
    let entries: Vec<Entry> = o
        .entries
        .iter()
        .map(|&(row, col, value)| Entry { row, col, value })
        .collect();
    write_csv(&a.out.join("laplacian_entries.csv"), &entries)?;
    #[derive(Serialize)]
    struct Settings<'a> {
        graph: &'a Path,
        learned: &'a Path,
    }
    manifest(
        &a.out,
        "order",
        Some(file.learned.seed),
        &Settings {
            graph: &a.graph,
            learned: &a.learned,
        },
        &["laplacian_order.csv", "laplacian_entries.csv"],
    )?;
    println!("ordered {} nodes, {} Laplacian entries", rows.len(), entries.len());
    Ok(())
}
