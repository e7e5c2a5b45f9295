//! Synthetic logs, algorithm runs over replayed streams, and the per-log
//! metrics table.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::Write;
use std::sync::Arc;
use std::time::Duration;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::heuristic::HeuristicMode;
use crate::par;
use crate::petri::{Activity, Label, Net, WorkflowNet};
use crate::search::{astar_scratch, SearchError, SearchMetrics};
use crate::spn::SyncProductNet;
use crate::stream::{
    replay_log_as_stream, Algorithm, Engine, EngineError, EventLog, EventResult, StreamOrder,
};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Noise {
    pub swap_p: f64,
    pub drop_p: f64,
    pub insert_p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorConfig {
    pub n_traces: usize,
    pub noise: Noise,
    pub max_len: usize,
    pub seed: u64,
    /// Attempts per trace before giving up.
    pub retries: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_traces: 10,
            noise: Noise::default(),
            max_len: 8,
            seed: 0,
            retries: 1000,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerateError {
    #[error("probability {0} is outside [0, 1]")]
    BadProbability(f64),
    #[error("max_len must be at least 1")]
    BadLength,
    #[error("no non-empty trace of at most {max_len} events found in {retries} attempts")]
    RetriesExhausted { max_len: usize, retries: usize },
}

/// Random model executions with per-position noise. Deterministic in the seed.
pub fn generate_log(
    model: &WorkflowNet,
    cfg: &GeneratorConfig,
) -> Result<Vec<Vec<Activity>>, GenerateError> {
    let n = cfg.noise;
    for p in [n.swap_p, n.drop_p, n.insert_p] {
        if !(0.0..=1.0).contains(&p) {
            return Err(GenerateError::BadProbability(p));
        }
    }
    if cfg.max_len == 0 {
        return Err(GenerateError::BadLength);
    }
    let alphabet: Vec<Activity> = model.alphabet().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.n_traces);
    for _ in 0..cfg.n_traces {
        let trace = (0..cfg.retries)
            .find_map(|_| {
                let run = random_run(model, cfg.max_len, &mut rng)?;
                let mut t = add_noise(run, &n, &alphabet, &mut rng);
                t.truncate(cfg.max_len);
                (!t.is_empty()).then_some(t)
            })
            .ok_or(GenerateError::RetriesExhausted {
                max_len: cfg.max_len,
                retries: cfg.retries,
            })?;
        log.push(trace);
    }
    Ok(log)
}

/// Visible labels of one random walk from the initial to the final marking,
/// or `None` if it dead-ends or runs too long.
fn random_run(model: &WorkflowNet, max_len: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Activity>> {
    let mut m = model.initial_marking().clone();
    let mut labels = Vec::new();
    // silent cycles could loop forever without this cap
    for _ in 0..max_len * 4 + 16 {
        if &m == model.final_marking() {
            return Some(labels);
        }
        let enabled = model.enabled_transitions(&m);
        let &t = enabled.choose(rng)?;
        m = model.fire(&m, t).ok()?;
        if let Label::Visible(a) = model.label(t) {
            labels.push(a.clone());
            if labels.len() > max_len {
                return None;
            }
        }
    }
    None
}

fn add_noise(
    mut trace: Vec<Activity>,
    noise: &Noise,
    alphabet: &[Activity],
    rng: &mut ChaCha8Rng,
) -> Vec<Activity> {
    for i in 0..trace.len().saturating_sub(1) {
        if rng.gen_bool(noise.swap_p) {
            trace.swap(i, i + 1);
        }
    }
    let mut out = Vec::with_capacity(trace.len() + 2);
    for a in trace {
        if !alphabet.is_empty() && rng.gen_bool(noise.insert_p) {
            out.push(alphabet[rng.gen_range(0..alphabet.len())].clone());
        }
        if !rng.gen_bool(noise.drop_p) {
            out.push(a);
        }
    }
    if !alphabet.is_empty() && rng.gen_bool(noise.insert_p) {
        out.push(alphabet[rng.gen_range(0..alphabet.len())].clone());
    }
    out
}

/// Per-trace outcome of one algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRun {
    pub costs: Vec<u32>,
    pub metrics: SearchMetrics,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct AlgorithmRun {
    pub algorithm: Algorithm,
    pub traces: IndexMap<String, TraceRun>,
    /// Per-event results in arrival order.
    pub events: Vec<EventResult>,
}

/// Replays `log` as a stream through a fresh engine.
pub fn run_algorithm(
    model: &Arc<WorkflowNet>,
    log: &EventLog,
    algorithm: Algorithm,
    mode: HeuristicMode,
    order: StreamOrder,
) -> Result<AlgorithmRun, RunError> {
    let mut engine = Engine::new(model.clone(), algorithm, mode)
        .map_err(|e| RunError::Model(e.to_string()))?;
    let cases: Vec<&String> = log.traces.keys().collect();
    let mut events = replay_log_as_stream(&log.trace_list(), order);
    for e in &mut events {
        // stream case ids are positions; map back to the log's ids
        let pos: usize = e.case.parse().expect("numeric case id");
        e.case = cases[pos - 1].clone();
    }
    let mut traces: IndexMap<String, TraceRun> = log
        .traces
        .keys()
        .map(|k| {
            (
                k.clone(),
                TraceRun {
                    costs: Vec::new(),
                    metrics: SearchMetrics::default(),
                    elapsed: Duration::ZERO,
                },
            )
        })
        .collect();
    let mut results = Vec::with_capacity(events.len());
    for r in engine.process_batch(&events) {
        let r = r?;
        let t = traces.get_mut(&r.case).expect("case from log");
        t.costs.push(r.cost());
        t.metrics.merge(&r.metrics);
        t.elapsed += r.elapsed;
        results.push(r);
    }
    Ok(AlgorithmRun {
        algorithm,
        traces,
        events: results,
    })
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid model: {0}")]
    Model(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("no optimal cost for case {case}, prefix {prefix}")]
    MissingOracle { case: String, prefix: usize },
}

/// Optimal cost of every prefix of every trace, by from-scratch search.
pub fn oracle_costs(
    model: &Arc<WorkflowNet>,
    log: &EventLog,
    mode: HeuristicMode,
) -> Result<IndexMap<String, Vec<u32>>, RunError> {
    let items: Vec<(&String, &Vec<Activity>)> = log.traces.iter().collect();
    let costs = par::map(&items, |(_, trace)| -> Result<Vec<u32>, RunError> {
        let mut spn = SyncProductNet::build(model.clone(), &trace[..1])
            .map_err(|e| RunError::Model(e.to_string()))?;
        let mut out = Vec::with_capacity(trace.len());
        for (i, a) in trace.iter().enumerate() {
            if i > 0 {
                spn.extend(a.clone());
            }
            out.push(astar_scratch(&spn, mode, spn.initial_marking())?.alignment.total_cost);
        }
        Ok(out)
    });
    items
        .into_iter()
        .zip(costs)
        .map(|((case, _), c)| Ok((case.clone(), c?)))
        .collect()
}

/// Averages per trace and false-positive counts of one algorithm on one log.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub algorithm: Algorithm,
    pub traces: usize,
    pub avg_queued: f64,
    pub avg_visited: f64,
    pub traces_with_fp: usize,
    pub variants_with_fp: usize,
    /// `None` when wall time is not recorded.
    pub avg_time_ms: Option<f64>,
    pub avg_lps: f64,
}

/// A trace is a false positive if some emitted prefix cost exceeds the
/// optimal cost of that prefix. Variants are distinct activity sequences.
pub fn compute_metrics(
    log: &EventLog,
    run: &AlgorithmRun,
    oracle: &IndexMap<String, Vec<u32>>,
    wall_time: bool,
) -> Result<MetricsRecord, RunError> {
    let n = log.traces.len();
    let mut fp_traces = 0;
    let mut fp_variants: BTreeSet<&[Activity]> = BTreeSet::new();
    let (mut queued, mut visited, mut lps) = (0u64, 0u64, 0u64);
    let mut time = Duration::ZERO;
    for (case, trace) in &log.traces {
        let Some(r) = run.traces.get(case) else {
            return Err(RunError::MissingOracle {
                case: case.clone(),
                prefix: 0,
            });
        };
        let opt = oracle.get(case);
        let mut fp = false;
        for (i, &c) in r.costs.iter().enumerate() {
            let o = opt.and_then(|o| o.get(i)).ok_or_else(|| RunError::MissingOracle {
                case: case.clone(),
                prefix: i + 1,
            })?;
            fp |= c > *o;
        }
        if fp {
            fp_traces += 1;
            fp_variants.insert(trace.as_slice());
        }
        queued += r.metrics.queued;
        visited += r.metrics.visited;
        lps += r.metrics.lps_solved;
        time += r.elapsed;
    }
    let avg = |x: u64| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    Ok(MetricsRecord {
        algorithm: run.algorithm,
        traces: n,
        avg_queued: avg(queued),
        avg_visited: avg(visited),
        traces_with_fp: fp_traces,
        variants_with_fp: fp_variants.len(),
        avg_time_ms: wall_time.then(|| {
            if n == 0 {
                0.0
            } else {
                time.as_secs_f64() * 1000.0 / n as f64
            }
        }),
        avg_lps: avg(lps),
    })
}

/// All algorithms on one log. Oracle costs come from the lazy incremental
/// run when it is among `algorithms`, otherwise from a from-scratch pass.
pub fn evaluate_log(
    model: &Arc<WorkflowNet>,
    log: &EventLog,
    algorithms: &[Algorithm],
    mode: HeuristicMode,
    order: StreamOrder,
    wall_time: bool,
) -> Result<(Vec<AlgorithmRun>, Vec<MetricsRecord>), RunError> {
    let runs: Vec<Result<AlgorithmRun, RunError>> =
        par::map(algorithms, |&alg| run_algorithm(model, log, alg, mode, order));
    let runs: Vec<AlgorithmRun> = runs.into_iter().collect::<Result<_, _>>()?;
    let oracle = match runs.iter().find(|r| r.algorithm == Algorithm::Ias) {
        Some(ias) => ias
            .traces
            .iter()
            .map(|(k, t)| (k.clone(), t.costs.clone()))
            .collect(),
        None => oracle_costs(model, log, mode)?,
    };
    let metrics = runs
        .iter()
        .map(|r| compute_metrics(log, r, &oracle, wall_time))
        .collect::<Result<_, _>>()?;
    Ok((runs, metrics))
}

pub const METRIC_COLUMNS: [&str; 6] = [
    "avg_queued",
    "avg_visited",
    "traces_with_fp",
    "variants_with_fp",
    "avg_time_ms",
    "avg_lps",
];

fn metric_cells(m: &MetricsRecord) -> [String; 6] {
    [
        format!("{:.2}", m.avg_queued),
        format!("{:.2}", m.avg_visited),
        m.traces_with_fp.to_string(),
        m.variants_with_fp.to_string(),
        m.avg_time_ms.map_or("-".into(), |t| format!("{t:.3}")),
        format!("{:.2}", m.avg_lps),
    ]
}

/// One row per log; columns grouped by metric, then algorithm.
#[derive(Debug, Clone, Default)]
pub struct MetricsTable {
    pub algorithms: Vec<Algorithm>,
    pub rows: Vec<(String, Vec<MetricsRecord>)>,
}

impl MetricsTable {
    pub fn new(algorithms: Vec<Algorithm>) -> Self {
        MetricsTable {
            algorithms,
            rows: Vec::new(),
        }
    }

    /// `records` must follow the table's algorithm order.
    pub fn push(&mut self, log: impl Into<String>, records: Vec<MetricsRecord>) {
        assert_eq!(
            records.iter().map(|r| r.algorithm).collect::<Vec<_>>(),
            self.algorithms
        );
        self.rows.push((log.into(), records));
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["log".to_string()];
        for col in METRIC_COLUMNS {
            for a in &self.algorithms {
                h.push(format!("{col}:{a}"));
            }
        }
        h
    }

    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|(log, recs)| {
                let per_alg: Vec<[String; 6]> = recs.iter().map(metric_cells).collect();
                let mut row = vec![log.clone()];
                for k in 0..METRIC_COLUMNS.len() {
                    row.extend(per_alg.iter().map(|c| c[k].clone()));
                }
                row
            })
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.header())?;
        for row in self.cells() {
            wr.write_record(row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Space-aligned text rendering.
    pub fn render_text(&self) -> String {
        let mut rows = vec![self.header()];
        rows.extend(self.cells());
        let ncols = rows[0].len();
        let widths: Vec<usize> = (0..ncols)
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (cell, &w))| {
                    if i == 0 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", line.join("  ").trim_end());
        }
        out
    }
}

/// Column lookup for tests and tools reading the CSV back.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<HashMap<String, String>>, csv::Error> {
    let mut rd = csv::Reader::from_reader(text.as_bytes());
    let headers = rd.headers()?.clone();
    rd.records()
        .map(|r| {
            let r = r?;
            Ok(headers
                .iter()
                .zip(r.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect())
        })
        .collect()
}
