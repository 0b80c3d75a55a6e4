//! Transaction logs to snapshot series, and the synthetic two-role surrogate.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::stream_rng;
use crate::graph::SnapshotSeries;

/// One parsed row of a transaction log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransactionRecord {
    pub date: NaiveDate,
    pub lender: String,
    pub borrower: String,
    /// Parsed for validation only; the pipeline is unweighted.
    pub amount: Option<f64>,
    pub line: usize,
}

impl TransactionRecord {
    pub fn is_self_loop(&self) -> bool {
        self.lender == self.borrower
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    /// The first malformed row aborts with its line number.
    #[default]
    Strict,
    /// Malformed rows are skipped and counted.
    Lenient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedLog {
    pub series: SnapshotSeries,
    pub records: Vec<TransactionRecord>,
    /// `(line, reason)` of every row dropped in lenient mode.
    pub skipped: Vec<(usize, String)>,
    pub self_loops: usize,
    /// Rows repeating a (date, lender, borrower) triple already seen.
    pub duplicates: usize,
}

const HEADER: [&str; 3] = ["date", "lender", "borrower"];

fn parse_row(
    row: &csv::StringRecord,
    line: usize,
    with_amount: bool,
) -> std::result::Result<TransactionRecord, String> {
    let expected = if with_amount { 4 } else { 3 };
    if row.len() != expected {
        return Err(format!("expected {expected} fields, found {}", row.len()));
    }
    let date =
        NaiveDate::parse_from_str(row[0].trim(), "%Y-%m-%d").map_err(|e| format!("bad date {:?}: {e}", &row[0]))?;
    let lender = row[1].trim();
    let borrower = row[2].trim();
    if lender.is_empty() || borrower.is_empty() {
        return Err("empty bank id".into());
    }
    let amount = if with_amount && !row[3].trim().is_empty() {
        let v: f64 = row[3].trim().parse().map_err(|_| format!("bad amount {:?}", &row[3]))?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(format!("amount {v} is not positive"));
        }
        Some(v)
    } else {
        None
    };
    Ok(TransactionRecord {
        date,
        lender: lender.to_string(),
        borrower: borrower.to_string(),
        amount,
        line,
    })
}

/// Read a `date,lender,borrower[,amount]` CSV log into one directed snapshot
/// per distinct date. Ids are registered in order of first appearance
/// (lender before borrower within a row); same-day repeats of a pair collapse.
pub fn parse_transactions<R: Read>(input: R, mode: ParseMode) -> Result<ParsedLog> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut rows = reader.records();
    let with_amount = match rows.next() {
        None => {
            return Ok(ParsedLog {
                series: SnapshotSeries::empty(),
                records: Vec::new(),
                skipped: Vec::new(),
                self_loops: 0,
                duplicates: 0,
            })
        }
        Some(header) => {
            let header = header?;
            let names: Vec<String> = header.iter().map(|h| h.to_ascii_lowercase()).collect();
            let base_ok = names.len() >= 3 && names[..3] == HEADER;
            match (base_ok, names.len()) {
                (true, 3) => false,
                (true, 4) if names[3] == "amount" => true,
                _ => {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!(
                            "header must be date,lender,borrower[,amount], got {:?}",
                            names.join(",")
                        ),
                    })
                }
            }
        }
    };

    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for row in rows {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.iter().all(|f| f.is_empty()) {
            continue;
        }
        match parse_row(&row, line, with_amount) {
            Ok(r) => records.push(r),
            Err(message) => match mode {
                ParseMode::Strict => return Err(Error::Parse { line, message }),
                ParseMode::Lenient => {
                    log::warn!("line {line}: {message} (skipped)");
                    skipped.push((line, message));
                }
            },
        }
    }

    let mut index: HashMap<String, u32> = HashMap::new();
    let mut registry = Vec::new();
    let mut intern = |id: &str| -> u32 {
        if let Some(&k) = index.get(id) {
            return k;
        }
        let k = registry.len() as u32;
        registry.push(id.to_string());
        index.insert(id.to_string(), k);
        k
    };
    let mut days: BTreeMap<NaiveDate, BTreeSet<(u32, u32)>> = BTreeMap::new();
    let mut self_loops = 0;
    let mut duplicates = 0;
    for r in &records {
        let l = intern(&r.lender);
        let b = intern(&r.borrower);
        if r.is_self_loop() {
            self_loops += 1;
        }
        if !days.entry(r.date).or_default().insert((l, b)) {
            duplicates += 1;
        }
    }
    let (dates, snapshots): (Vec<_>, Vec<_>) = days
        .into_iter()
        .map(|(d, pairs)| (d, pairs.into_iter().collect::<Vec<_>>()))
        .unzip();
    Ok(ParsedLog {
        series: SnapshotSeries::new(dates, snapshots, registry)?,
        records,
        skipped,
        self_loops,
        duplicates,
    })
}

/// Canonical log: header `date,lender,borrower`, days ascending, rows sorted
/// by lender then borrower id within a day. Re-parsing and writing again
/// gives the same bytes.
pub fn write_transactions<W: Write>(series: &SnapshotSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    let ids = series.registry();
    for (k, date) in series.dates().iter().enumerate() {
        let day = date.format("%Y-%m-%d").to_string();
        let mut rows: Vec<(&str, &str)> = series
            .snapshot(k)
            .iter()
            .map(|&(l, b)| (ids[l as usize].as_str(), ids[b as usize].as_str()))
            .collect();
        rows.sort_unstable();
        for (l, b) in rows {
            w.write_record([day.as_str(), l, b])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Hidden two-role market: every bank is a persistent lender or borrower.
/// Bank `i` is active on a day with probability `a_i`, drawn once from a
/// Pareto law `a_min * U^(-1/(gamma-1))` capped at 1; an active lender and
/// an active borrower trade with probability `min(1, pair_scale * a_l * a_b)`.
/// Two active banks of the same role trade at `role_noise` times that rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurrogateParams {
    pub lender_fraction: f64,
    pub activity_exponent: f64,
    pub activity_min: f64,
    pub pair_scale: f64,
    /// Same-role trading rate relative to lender-borrower trading.
    pub role_noise: f64,
    pub start_date: NaiveDate,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        Self {
            lender_fraction: 0.5,
            activity_exponent: 1.6,
            activity_min: 0.3,
            pair_scale: 0.08,
            role_noise: 0.2,
            start_date: NaiveDate::from_ymd_opt(2014, 1, 2).expect("valid date"),
        }
    }
}

impl SurrogateParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(self.lender_fraction > 0.0 && self.lender_fraction < 1.0) {
            return bad("lender_fraction must lie in (0, 1)");
        }
        if !(self.activity_exponent > 1.0 && self.activity_exponent.is_finite()) {
            return bad("activity_exponent must be > 1");
        }
        if !(self.activity_min > 0.0 && self.activity_min <= 1.0) {
            return bad("activity_min must lie in (0, 1]");
        }
        if !(self.pair_scale > 0.0 && self.pair_scale.is_finite()) {
            return bad("pair_scale must be > 0");
        }
        if !(0.0..=1.0).contains(&self.role_noise) {
            return bad("role_noise must lie in [0, 1]");
        }
        Ok(())
    }
}

const ACTIVITY_STREAM: u64 = 21;
const TRADE_STREAM: u64 = 22;

/// Monday to Friday dates starting at `start` (moved forward to a weekday).
pub fn working_days(start: NaiveDate, count: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(count);
    let mut d = start;
    while out.len() < count {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d += Duration::days(1);
    }
    out
}

/// Per-bank activity probabilities and roles (`true` = lender) of the surrogate.
pub fn surrogate_banks(params: &SurrogateParams, n_banks: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = stream_rng(seed, ACTIVITY_STREAM);
    let expo = 1.0 / (params.activity_exponent - 1.0);
    let activity = (0..n_banks)
        .map(|_| {
            let u: f64 = 1.0 - rng.random::<f64>();
            (params.activity_min * u.powf(-expo)).min(1.0)
        })
        .collect();
    let lenders = (n_banks as f64 * params.lender_fraction).round() as usize;
    let roles = (0..n_banks).map(|i| i < lenders).collect();
    (activity, roles)
}

/// Deterministic daily series over `days` working days for banks `bank_000`, ...
pub fn generate_surrogate(params: &SurrogateParams, days: usize, n_banks: usize, seed: u64) -> Result<SnapshotSeries> {
    params.validate()?;
    if n_banks < 2 {
        return Err(Error::InvalidParameter("need at least two banks".into()));
    }
    let (activity, roles) = surrogate_banks(params, n_banks, seed);
    let mut rng = stream_rng(seed, TRADE_STREAM);
    let dates = working_days(params.start_date, days);
    let mut snapshots = Vec::with_capacity(days);
    let mut active = Vec::with_capacity(n_banks);
    for _ in 0..days {
        active.clear();
        active.extend((0..n_banks).filter(|&i| rng.random::<f64>() < activity[i]));
        let mut pairs = BTreeSet::new();
        for (x, &u) in active.iter().enumerate() {
            for &v in &active[x + 1..] {
                let same = roles[u] == roles[v];
                let weight = if same { params.role_noise } else { 1.0 };
                let p = (params.pair_scale * weight * activity[u] * activity[v]).min(1.0);
                if p <= 0.0 || rng.random::<f64>() >= p {
                    continue;
                }
                let forward = if same { rng.random::<bool>() } else { roles[u] };
                pairs.insert(if forward {
                    (u as u32, v as u32)
                } else {
                    (v as u32, u as u32)
                });
            }
        }
        snapshots.push(pairs.into_iter().collect());
    }
    let registry = (0..n_banks).map(|i| format!("bank_{i:03}")).collect();
    SnapshotSeries::new(dates, snapshots, registry)
}
