//! The precision experiment: run a policy over a scenario, score it per
//! 10-trial interval, aggregate over seeds and compare algorithms.
//!
//! A run is a pure function of `(scenario, algorithm, seed)`. Each concern
//! draws from its own ChaCha stream of the seed (target preferences,
//! colleague history, policy, user choice), so algorithms sharing a seed face
//! the same simulated newcomer and the runs can be compared pairwise.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cf::CfModel;
use crate::context::{build_profile, write_transaction_log, ContextState, ItemIdx, Transaction, UserProfile};
use crate::policy::{select_list, Algorithm, Branch, PolicyConfig, SelectionInputs};
use crate::rl::QTable;
use crate::scenario::Scenario;
use crate::simulator::{generate_colleague_history, next_event_in, target_user};
use crate::{Error, Result};

pub const INTERVAL_WIDTH: usize = 10;
/// One-sided level for the cold-start paired test.
pub const SIGNIFICANCE: f64 = 0.05;
/// Leading share of trials in the cold-start window (trials 1–20 of 100).
pub const EARLY_FRACTION: f64 = 0.2;
/// Trailing share of trials in the late window (trials 61–100 of 100).
pub const LATE_FRACTION: f64 = 0.4;

const STREAM_TARGET: u64 = 1;
const STREAM_HISTORY: u64 = 2;
const STREAM_POLICY: u64 = 3;
const STREAM_CHOICE: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub trials: Option<usize>,
    pub n_recommend: Option<usize>,
    /// Warm-start table, e.g. a reloaded snapshot.
    pub initial_table: Option<QTable>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    /// 0-based; logs and reports number trials from 1.
    pub trial_index: usize,
    pub state: ContextState,
    pub algorithm: Algorithm,
    pub recommended: Vec<ItemIdx>,
    pub branches: Vec<Branch>,
    pub chosen: Option<ItemIdx>,
    /// 1 for the chosen item, 0 for every other recommended item.
    pub rewards: Vec<f64>,
    pub epsilon_used: f64,
}

impl TrialRecord {
    pub fn is_good(&self) -> bool {
        self.chosen.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalPrecision {
    /// 1-based, inclusive.
    pub interval_start: usize,
    pub interval_end: usize,
    pub precision: f64,
}

impl IntervalPrecision {
    pub fn width(&self) -> usize {
        self.interval_end + 1 - self.interval_start
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionReport {
    pub scenario: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub intervals: Vec<IntervalPrecision>,
    pub overall: f64,
}

impl PrecisionReport {
    pub fn from_records(scenario: &str, algorithm: Algorithm, seed: u64, records: &[TrialRecord]) -> Self {
        let intervals = records
            .chunks(INTERVAL_WIDTH)
            .enumerate()
            .map(|(i, chunk)| IntervalPrecision {
                interval_start: i * INTERVAL_WIDTH + 1,
                interval_end: i * INTERVAL_WIDTH + chunk.len(),
                precision: chunk.iter().filter(|r| r.is_good()).count() as f64 / chunk.len() as f64,
            })
            .collect();
        let overall = if records.is_empty() {
            0.0
        } else {
            records.iter().filter(|r| r.is_good()).count() as f64 / records.len() as f64
        };
        Self { scenario: scenario.to_owned(), algorithm, seed, intervals, overall }
    }

    pub fn trials(&self) -> usize {
        self.intervals.last().map_or(0, |iv| iv.interval_end)
    }

    /// Precision over the trials `first..=last` covered by whole intervals.
    pub fn window(&self, first: usize, last: usize) -> Option<f64> {
        let (mut good, mut n) = (0.0, 0usize);
        for iv in self.intervals.iter().filter(|iv| iv.interval_start >= first && iv.interval_end <= last) {
            good += iv.precision * iv.width() as f64;
            n += iv.width();
        }
        (n > 0).then(|| good / n as f64)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub records: Vec<TrialRecord>,
    pub report: PrecisionReport,
    pub q_table: QTable,
    /// The target's own transactions, one per good trial.
    pub transactions: Vec<Transaction>,
    pub colleague_history: Vec<Transaction>,
}

pub fn run_experiment(scenario: &Scenario, algorithm: Algorithm, seed: u64) -> Result<ExperimentRun> {
    run_experiment_with(scenario, algorithm, seed, &RunOptions::default())
}

pub fn run_experiment_with(
    scenario: &Scenario,
    algorithm: Algorithm,
    seed: u64,
    opts: &RunOptions,
) -> Result<ExperimentRun> {
    let trials = opts.trials.unwrap_or(scenario.trials);
    if trials == 0 || trials > scenario.event_sequence.len() {
        return Err(Error::invalid(
            "trials",
            format!("{trials} requested, scenario scripts {} events", scenario.event_sequence.len()),
        ));
    }
    let n = opts.n_recommend.unwrap_or(scenario.n_recommend);
    let actions = &scenario.actions;
    let policy = PolicyConfig::new(
        scenario.policy.epsilon_start,
        scenario.policy.epsilon_end,
        scenario.policy.decay_trials.unwrap_or(trials),
        algorithm,
    )?;

    let user = target_user(scenario, &mut stream(seed, STREAM_TARGET));
    let colleague_history = if algorithm.uses_cf() {
        generate_colleague_history(scenario, &mut stream(seed, STREAM_HISTORY))
    } else {
        Vec::new()
    };
    let colleague_profiles = scenario
        .colleagues()
        .into_iter()
        .map(|(u, g)| build_profile(&colleague_history, u, g, actions))
        .collect::<Result<Vec<_>>>()?;
    let model = CfModel::new(colleague_profiles, actions.len(), scenario.cf)?;

    let mut table = match &opts.initial_table {
        Some(t) => t.clone(),
        None => QTable::new(scenario.rl)?,
    };
    let mut policy_rng = stream(seed, STREAM_POLICY);
    let mut choice_rng = stream(seed, STREAM_CHOICE);
    let target_id = scenario.target.user_id.as_str();
    let group = scenario.target.group_id.as_str();

    let mut transactions: Vec<Transaction> = Vec::new();
    let mut records = Vec::with_capacity(trials);
    let mut profile = UserProfile::empty(target_id, group, actions.len());

    for t in 0..trials {
        let (s, s_next) = next_event_in(&scenario.event_sequence, trials, t)?;
        let epsilon = policy.epsilon_at(t);
        let inputs =
            SelectionInputs { algorithm, table: &table, model: &model, target: &profile, state: s, actions, epsilon };
        let trace = select_list(&inputs, n, &mut policy_rng)?;
        let chosen = user.user_choice(s, &trace.chosen, scenario.position_discount, &mut choice_rng);
        let rewards: Vec<f64> = trace.chosen.iter().map(|&a| if Some(a) == chosen { 1.0 } else { 0.0 }).collect();

        if let Some(item) = chosen {
            transactions.push(Transaction::chosen(target_id, actions.id(item)));
        }
        if algorithm.uses_q_table() {
            for (&a, &r) in trace.chosen.iter().zip(&rewards) {
                table.update(s, a, r, s_next, actions)?;
            }
        }
        if algorithm.uses_cf() && chosen.is_some() {
            // snapshot refresh between trials
            profile = build_profile(&transactions, target_id, group, actions)?;
        }
        records.push(TrialRecord {
            trial_index: t,
            state: s,
            algorithm,
            recommended: trace.chosen,
            branches: trace.branch,
            chosen,
            rewards,
            epsilon_used: trace.epsilon_used,
        });
    }

    let report = PrecisionReport::from_records(&scenario.name, algorithm, seed, &records);
    Ok(ExperimentRun { records, report, q_table: table, transactions, colleague_history })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EventRecord {
    pub trial: usize,
    pub time_slot: String,
    pub social_group: String,
    pub cognitive_tag: String,
    pub algorithm: Algorithm,
    pub epsilon: f64,
    pub recommended: Vec<RecommendedItem>,
    pub chosen: Option<String>,
    pub reward: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecommendedItem {
    pub item_id: String,
    pub branch: Branch,
    pub reward: f64,
}

pub fn write_event_log<W: Write>(mut w: W, scenario: &Scenario, records: &[TrialRecord]) -> Result<()> {
    for r in records {
        let names = scenario.space.names(r.state);
        let rec = EventRecord {
            trial: r.trial_index + 1,
            time_slot: names.time_slot,
            social_group: names.social_group,
            cognitive_tag: names.cognitive_tag,
            algorithm: r.algorithm,
            epsilon: r.epsilon_used,
            recommended: r
                .recommended
                .iter()
                .zip(&r.branches)
                .zip(&r.rewards)
                .map(|((&a, &branch), &reward)| RecommendedItem {
                    item_id: scenario.actions.id(a).to_owned(),
                    branch,
                    reward,
                })
                .collect(),
            chosen: r.chosen.map(|a| scenario.actions.id(a).to_owned()),
            reward: if r.is_good() { 1.0 } else { 0.0 },
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PrecisionRow {
    algorithm: Algorithm,
    seed: u64,
    interval_start: usize,
    interval_end: usize,
    precision: f64,
}

/// Columns: `algorithm, seed, interval_start, interval_end, precision`.
pub fn write_precision_csv<W: Write>(w: W, reports: &[PrecisionReport]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in reports {
        for iv in &r.intervals {
            out.serialize(PrecisionRow {
                algorithm: r.algorithm,
                seed: r.seed,
                interval_start: iv.interval_start,
                interval_end: iv.interval_end,
                precision: iv.precision,
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a precision CSV back into one report per `(algorithm, seed)`.
pub fn read_precision_csv<R: std::io::Read>(r: R, scenario: &str) -> Result<Vec<PrecisionReport>> {
    let mut grouped: BTreeMap<(Algorithm, u64), Vec<IntervalPrecision>> = BTreeMap::new();
    for row in csv::Reader::from_reader(r).deserialize::<PrecisionRow>() {
        let row = row?;
        grouped.entry((row.algorithm, row.seed)).or_default().push(IntervalPrecision {
            interval_start: row.interval_start,
            interval_end: row.interval_end,
            precision: row.precision,
        });
    }
    Ok(grouped
        .into_iter()
        .map(|((algorithm, seed), mut intervals)| {
            intervals.sort_by_key(|iv| iv.interval_start);
            let n: usize = intervals.iter().map(|iv| iv.width()).sum();
            let good: f64 = intervals.iter().map(|iv| iv.precision * iv.width() as f64).sum();
            PrecisionReport {
                scenario: scenario.to_owned(),
                algorithm,
                seed,
                intervals,
                overall: if n == 0 { 0.0 } else { good / n as f64 },
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    /// Mean and sample standard deviation; a single value has sd 0.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd =
            if n < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() };
        Some(Self { mean, sd, n })
    }

    pub fn standard_error(&self) -> f64 {
        self.sd / (self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalStat {
    pub interval_start: usize,
    pub interval_end: usize,
    pub stat: Stat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub scenario: String,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub intervals: Vec<IntervalStat>,
}

fn same_grid(a: &PrecisionReport, b: &PrecisionReport) -> bool {
    a.intervals.len() == b.intervals.len()
        && a.intervals
            .iter()
            .zip(&b.intervals)
            .all(|(x, y)| x.interval_start == y.interval_start && x.interval_end == y.interval_end)
}

/// Per-interval mean and standard deviation across seeds.
pub fn aggregate(reports: &[PrecisionReport]) -> Result<Aggregate> {
    let first = reports.first().ok_or(Error::EmptyInput("aggregate"))?;
    for r in reports {
        if r.scenario != first.scenario || r.algorithm != first.algorithm {
            return Err(Error::Mismatch(format!(
                "cannot aggregate {}/{} with {}/{}",
                first.scenario, first.algorithm, r.scenario, r.algorithm
            )));
        }
        if !same_grid(first, r) {
            return Err(Error::Mismatch(format!("seed {} has a different interval grid", r.seed)));
        }
    }
    let intervals = first
        .intervals
        .iter()
        .enumerate()
        .map(|(i, iv)| {
            let values: Vec<f64> = reports.iter().map(|r| r.intervals[i].precision).collect();
            IntervalStat {
                interval_start: iv.interval_start,
                interval_end: iv.interval_end,
                stat: Stat::of(&values).expect("non-empty"),
            }
        })
        .collect();
    Ok(Aggregate {
        scenario: first.scenario.clone(),
        algorithm: first.algorithm,
        seeds: reports.iter().map(|r| r.seed).collect(),
        intervals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictLabel {
    Tie,
    CfqlDominates,
    CfqlDominated,
    Mixed,
}

impl VerdictLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            VerdictLabel::Tie => "tie",
            VerdictLabel::CfqlDominates => "cfql-dominates",
            VerdictLabel::CfqlDominated => "cfql-dominated",
            VerdictLabel::Mixed => "mixed",
        }
    }
}

/// One-sided paired t-test of `mean(cfql − ql) > 0` on the early window.
#[derive(Debug, Clone, PartialEq)]
pub struct ColdStartCheck {
    pub first_trial: usize,
    pub last_trial: usize,
    pub cfql_mean: f64,
    pub ql_mean: f64,
    pub diff: Stat,
    pub t_statistic: f64,
    pub p_value: f64,
    pub holds: bool,
}

/// `mean(cfql − rival) ≥ −SE(cfql − rival)` on the late window, for each rival.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderingCheck {
    pub first_trial: usize,
    pub last_trial: usize,
    pub cfql_mean: f64,
    pub cf_mean: f64,
    pub ql_mean: f64,
    pub diff_cf: Stat,
    pub diff_ql: Stat,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalComparison {
    pub interval_start: usize,
    pub interval_end: usize,
    pub cf: Stat,
    pub ql: Stat,
    pub cfql: Stat,
    pub delta_cfql_cf: f64,
    pub delta_cfql_ql: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub intervals: Vec<IntervalComparison>,
    pub label: VerdictLabel,
    pub cold_start: Option<ColdStartCheck>,
    pub late_ordering: Option<OrderingCheck>,
}

impl Comparison {
    /// Both acceptance inequalities hold.
    pub fn verdict_holds(&self) -> bool {
        self.cold_start.as_ref().is_some_and(|c| c.holds) && self.late_ordering.as_ref().is_some_and(|c| c.holds)
    }
}

/// Window bounds (1-based, inclusive) snapped to interval boundaries.
pub fn windows(trials: usize) -> ((usize, usize), (usize, usize)) {
    let snap = |x: f64| ((x / INTERVAL_WIDTH as f64).round() as usize) * INTERVAL_WIDTH;
    let early_end = snap(trials as f64 * EARLY_FRACTION).clamp(INTERVAL_WIDTH.min(trials), trials);
    let late_start = trials.saturating_sub(snap(trials as f64 * LATE_FRACTION)) + 1;
    ((1, early_end), (late_start.min(trials), trials))
}

fn by_seed(reports: &[PrecisionReport]) -> BTreeMap<u64, &PrecisionReport> {
    reports.iter().map(|r| (r.seed, r)).collect()
}

fn paired(a: &[PrecisionReport], b: &[PrecisionReport], first: usize, last: usize) -> Option<Vec<f64>> {
    let bm = by_seed(b);
    a.iter().map(|ra| Some(ra.window(first, last)? - bm.get(&ra.seed)?.window(first, last)?)).collect()
}

fn window_mean(reports: &[PrecisionReport], first: usize, last: usize) -> Option<f64> {
    let v: Option<Vec<f64>> = reports.iter().map(|r| r.window(first, last)).collect();
    Stat::of(&v?).map(|s| s.mean)
}

/// Per-interval deltas plus the cold-start and late-ordering checks.
pub fn compare(cf: &[PrecisionReport], ql: &[PrecisionReport], cfql: &[PrecisionReport]) -> Result<Comparison> {
    let aggs = [aggregate(cf)?, aggregate(ql)?, aggregate(cfql)?];
    for (agg, want) in aggs.iter().zip(Algorithm::ALL) {
        if agg.algorithm != want {
            return Err(Error::Mismatch(format!("expected {want} reports, got {}", agg.algorithm)));
        }
    }
    let [a_cf, a_ql, a_cfql] = &aggs;
    if a_cf.scenario != a_ql.scenario || a_cf.scenario != a_cfql.scenario {
        return Err(Error::Mismatch(format!(
            "scenarios differ: {}, {}, {}",
            a_cf.scenario, a_ql.scenario, a_cfql.scenario
        )));
    }
    let mut seeds = a_cf.seeds.clone();
    seeds.sort_unstable();
    for other in [a_ql, a_cfql] {
        let mut s = other.seeds.clone();
        s.sort_unstable();
        if s != seeds {
            return Err(Error::Mismatch(format!("{} was run on different seeds", other.algorithm)));
        }
    }
    if !same_grid(&cf[0], &ql[0]) || !same_grid(&cf[0], &cfql[0]) {
        return Err(Error::Mismatch("algorithms were run with different trial counts".into()));
    }

    let intervals: Vec<IntervalComparison> = (0..a_cf.intervals.len())
        .map(|i| {
            let (c, q, h) = (a_cf.intervals[i].stat, a_ql.intervals[i].stat, a_cfql.intervals[i].stat);
            IntervalComparison {
                interval_start: a_cf.intervals[i].interval_start,
                interval_end: a_cf.intervals[i].interval_end,
                cf: c,
                ql: q,
                cfql: h,
                delta_cfql_cf: h.mean - c.mean,
                delta_cfql_ql: h.mean - q.mean,
            }
        })
        .collect();

    let deltas: Vec<f64> = intervals.iter().flat_map(|iv| [iv.delta_cfql_cf, iv.delta_cfql_ql]).collect();
    let label = if deltas.iter().all(|&d| d == 0.0) {
        VerdictLabel::Tie
    } else if deltas.iter().all(|&d| d >= 0.0) {
        VerdictLabel::CfqlDominates
    } else if deltas.iter().all(|&d| d <= 0.0) {
        VerdictLabel::CfqlDominated
    } else {
        VerdictLabel::Mixed
    };

    let ((e0, e1), (l0, l1)) = windows(cf[0].trials());
    let cold_start = (|| {
        let d = Stat::of(&paired(cfql, ql, e0, e1)?)?;
        let (t_statistic, p_value) = one_sided_paired_t(&d);
        Some(ColdStartCheck {
            first_trial: e0,
            last_trial: e1,
            cfql_mean: window_mean(cfql, e0, e1)?,
            ql_mean: window_mean(ql, e0, e1)?,
            diff: d,
            t_statistic,
            p_value,
            holds: d.mean > 0.0 && p_value < SIGNIFICANCE,
        })
    })();
    let late_ordering = (|| {
        let diff_cf = Stat::of(&paired(cfql, cf, l0, l1)?)?;
        let diff_ql = Stat::of(&paired(cfql, ql, l0, l1)?)?;
        Some(OrderingCheck {
            first_trial: l0,
            last_trial: l1,
            cfql_mean: window_mean(cfql, l0, l1)?,
            cf_mean: window_mean(cf, l0, l1)?,
            ql_mean: window_mean(ql, l0, l1)?,
            holds: diff_cf.mean >= -diff_cf.standard_error() && diff_ql.mean >= -diff_ql.standard_error(),
            diff_cf,
            diff_ql,
        })
    })();

    Ok(Comparison { scenario: a_cf.scenario.clone(), seeds, intervals, label, cold_start, late_ordering })
}

/// Returns `(t, p)` for H1: mean difference > 0.
fn one_sided_paired_t(d: &Stat) -> (f64, f64) {
    if d.n < 2 {
        return (f64::NAN, 1.0);
    }
    let se = d.standard_error();
    if se == 0.0 {
        let p = if d.mean > 0.0 { 0.0 } else { 1.0 };
        return (if d.mean > 0.0 { f64::INFINITY } else { 0.0 }, p);
    }
    let t = d.mean / se;
    let dist = StudentsT::new(0.0, 1.0, (d.n - 1) as f64).expect("valid degrees of freedom");
    (t, 1.0 - dist.cdf(t))
}

#[derive(Debug, Serialize)]
struct ComparisonRow {
    kind: &'static str,
    interval_start: Option<usize>,
    interval_end: Option<usize>,
    cf_mean: Option<f64>,
    cf_sd: Option<f64>,
    ql_mean: Option<f64>,
    ql_sd: Option<f64>,
    cfql_mean: Option<f64>,
    cfql_sd: Option<f64>,
    delta_cfql_cf: Option<f64>,
    delta_cfql_ql: Option<f64>,
    check: String,
    holds: Option<bool>,
}

impl ComparisonRow {
    fn blank(kind: &'static str) -> Self {
        Self {
            kind,
            interval_start: None,
            interval_end: None,
            cf_mean: None,
            cf_sd: None,
            ql_mean: None,
            ql_sd: None,
            cfql_mean: None,
            cfql_sd: None,
            delta_cfql_cf: None,
            delta_cfql_ql: None,
            check: String::new(),
            holds: None,
        }
    }
}

/// Interval rows, one row per window check, then the verdict row.
pub fn write_comparison_csv<W: Write>(w: W, cmp: &Comparison) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for iv in &cmp.intervals {
        out.serialize(ComparisonRow {
            interval_start: Some(iv.interval_start),
            interval_end: Some(iv.interval_end),
            cf_mean: Some(iv.cf.mean),
            cf_sd: Some(iv.cf.sd),
            ql_mean: Some(iv.ql.mean),
            ql_sd: Some(iv.ql.sd),
            cfql_mean: Some(iv.cfql.mean),
            cfql_sd: Some(iv.cfql.sd),
            delta_cfql_cf: Some(iv.delta_cfql_cf),
            delta_cfql_ql: Some(iv.delta_cfql_ql),
            ..ComparisonRow::blank("interval")
        })?;
    }
    if let Some(c) = &cmp.cold_start {
        out.serialize(ComparisonRow {
            interval_start: Some(c.first_trial),
            interval_end: Some(c.last_trial),
            ql_mean: Some(c.ql_mean),
            cfql_mean: Some(c.cfql_mean),
            delta_cfql_ql: Some(c.diff.mean),
            check: format!("cold-start: cfql > ql, paired t={:.3}, one-sided p={:.4}", c.t_statistic, c.p_value),
            holds: Some(c.holds),
            ..ComparisonRow::blank("window")
        })?;
    }
    if let Some(c) = &cmp.late_ordering {
        out.serialize(ComparisonRow {
            interval_start: Some(c.first_trial),
            interval_end: Some(c.last_trial),
            cf_mean: Some(c.cf_mean),
            ql_mean: Some(c.ql_mean),
            cfql_mean: Some(c.cfql_mean),
            delta_cfql_cf: Some(c.diff_cf.mean),
            delta_cfql_ql: Some(c.diff_ql.mean),
            check: format!(
                "late ordering: cfql >= max(cf, ql) - 1 SE (SE cf={:.4}, ql={:.4})",
                c.diff_cf.standard_error(),
                c.diff_ql.standard_error()
            ),
            holds: Some(c.holds),
            ..ComparisonRow::blank("window")
        })?;
    }
    out.serialize(ComparisonRow {
        check: cmp.label.as_str().to_owned(),
        holds: Some(cmp.verdict_holds()),
        ..ComparisonRow::blank("verdict")
    })?;
    out.flush()?;
    Ok(())
}

/// Metadata written next to each run's outputs; `report` uses it to find
/// and cross-check the runs in a directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: String,
    pub algorithm: Algorithm,
    pub seed: u64,
    pub trials: usize,
    pub n_recommend: usize,
    pub overall_precision: f64,
    pub precision_csv: String,
    pub event_log: String,
    pub transaction_log: String,
}

pub fn run_stem(algorithm: Algorithm, seed: u64) -> String {
    format!("{algorithm}_seed{seed}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::File { path: path.to_owned(), source })
}

/// Writes precision CSV, event log, transaction log and manifest for one run.
pub fn write_run_outputs(
    dir: &Path,
    scenario: &Scenario,
    run: &ExperimentRun,
    n_recommend: usize,
) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|source| Error::File { path: dir.to_owned(), source })?;
    let stem = run_stem(run.report.algorithm, run.report.seed);
    let manifest = RunManifest {
        scenario: scenario.name.clone(),
        algorithm: run.report.algorithm,
        seed: run.report.seed,
        trials: run.records.len(),
        n_recommend,
        overall_precision: run.report.overall,
        precision_csv: format!("precision_{stem}.csv"),
        event_log: format!("events_{stem}.jsonl"),
        transaction_log: format!("transactions_{stem}.jsonl"),
    };
    let mut w = create(&dir.join(&manifest.precision_csv))?;
    write_precision_csv(&mut w, std::slice::from_ref(&run.report))?;
    w.flush()?;
    let mut w = create(&dir.join(&manifest.event_log))?;
    write_event_log(&mut w, scenario, &run.records)?;
    w.flush()?;
    let mut w = create(&dir.join(&manifest.transaction_log))?;
    write_transaction_log(&mut w, &run.transactions)?;
    w.flush()?;
    let mut w = create(&dir.join(format!("run_{stem}.json")))?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(manifest)
}

/// `count` seeds: the scenario's own list first, then consecutive integers past its maximum.
pub fn sweep_seeds(scenario: &Scenario, count: usize) -> Vec<u64> {
    let mut seeds: Vec<u64> = scenario.seeds.iter().copied().take(count).collect();
    let mut next = scenario.seeds.iter().max().map_or(0, |m| m + 1);
    while seeds.len() < count {
        if !seeds.contains(&next) {
            seeds.push(next);
        }
        next += 1;
    }
    seeds
}

/// Runs every algorithm on every seed. Results come back ordered by
/// `(algorithm, seed)` whatever order the parallel runs finish in.
pub fn run_sweep(scenario: &Scenario, seeds: &[u64]) -> Result<Vec<ExperimentRun>> {
    let jobs: Vec<(Algorithm, u64)> = Algorithm::ALL.iter().flat_map(|&a| seeds.iter().map(move |&s| (a, s))).collect();
    jobs.par_iter().map(|&(a, s)| run_experiment(scenario, a, s)).collect()
}

/// Runs the sweep and writes per-run outputs plus a combined `precision.csv`.
pub fn sweep_to_dir(scenario: &Scenario, seeds: &[u64], dir: &Path) -> Result<Vec<ExperimentRun>> {
    let runs = run_sweep(scenario, seeds)?;
    for run in &runs {
        write_run_outputs(dir, scenario, run, scenario.n_recommend)?;
    }
    let reports: Vec<PrecisionReport> = runs.iter().map(|r| r.report.clone()).collect();
    let mut w = create(&dir.join("precision.csv"))?;
    write_precision_csv(&mut w, &reports)?;
    w.flush()?;
    Ok(runs)
}

/// Loads every run listed by a `run_*.json` manifest in `dir`.
pub fn load_reports(dir: &Path) -> Result<Vec<PrecisionReport>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::File { path: dir.to_owned(), source })?;
    let mut manifests: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("run_") && n.ends_with(".json"))
        })
        .collect();
    manifests.sort();
    let mut reports = Vec::new();
    for path in manifests {
        let file = File::open(&path).map_err(|source| Error::File { path: path.clone(), source })?;
        let m: RunManifest = serde_json::from_reader(BufReader::new(file))?;
        let csv_path = dir.join(&m.precision_csv);
        let file = File::open(&csv_path).map_err(|source| Error::File { path: csv_path.clone(), source })?;
        let mut found = read_precision_csv(file, &m.scenario)?;
        found.retain(|r| r.algorithm == m.algorithm && r.seed == m.seed);
        if found.len() != 1 {
            return Err(Error::Mismatch(format!(
                "{} does not hold run {}",
                csv_path.display(),
                run_stem(m.algorithm, m.seed)
            )));
        }
        reports.append(&mut found);
    }
    Ok(reports)
}

/// Splits reports by algorithm and compares them.
pub fn compare_reports(reports: &[PrecisionReport]) -> Result<Comparison> {
    let pick =
        |a: Algorithm| -> Vec<PrecisionReport> { reports.iter().filter(|r| r.algorithm == a).cloned().collect() };
    let (cf, ql, cfql) = (pick(Algorithm::Cf), pick(Algorithm::Ql), pick(Algorithm::Cfql));
    for (a, v) in [(Algorithm::Cf, &cf), (Algorithm::Ql, &ql), (Algorithm::Cfql, &cfql)] {
        if v.is_empty() {
            return Err(Error::Mismatch(format!("no {a} runs found")));
        }
    }
    compare(&cf, &ql, &cfql)
}
