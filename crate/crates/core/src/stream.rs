//! Event-at-a-time processing of interleaved cases.
//!
//! Each case owns its product net and the state of the configured algorithm.
//! Cases never share state, so a batch of events can be split by case,
//! processed in parallel, and merged back by arrival index.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{MoveRecord, PrefixAlignment};
use crate::heuristic::HeuristicMode;
use crate::occ::{occ_process_event, OccState, Window};
use crate::par;
use crate::petri::{Activity, WorkflowNet};
use crate::search::{astar_inc, Refresh, SearchCache, SearchError, SearchMetrics};
use crate::spn::{SpnError, SyncProductNet};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub case: String,
    pub activity: Activity,
    /// Arrival sequence number.
    pub index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    /// Incremental search, lazy heuristic refresh.
    Ias,
    /// Incremental search, eager heuristic refresh.
    Iasr,
    Occ(Window),
}

impl Algorithm {
    /// Whether every emitted prefix-alignment is optimal.
    pub fn is_exact(&self) -> bool {
        !matches!(self, Algorithm::Occ(Window::Finite(_)))
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Algorithm::Ias => f.write_str("ias"),
            Algorithm::Iasr => f.write_str("iasr"),
            Algorithm::Occ(Window::Infinite) => f.write_str("occ"),
            Algorithm::Occ(Window::Finite(w)) => write!(f, "occ-w{w}"),
        }
    }
}

impl FromStr for Algorithm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ias" => Ok(Algorithm::Ias),
            "iasr" => Ok(Algorithm::Iasr),
            "occ" => Ok(Algorithm::Occ(Window::Infinite)),
            _ => s
                .strip_prefix("occ-w")
                .and_then(|w| w.parse::<Window>().ok())
                .map(Algorithm::Occ)
                .ok_or_else(|| format!("unknown algorithm `{s}`")),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("case {case}: rejected event: {reason}")]
    Rejected { case: String, reason: String },
    #[error("case {case}: {source}")]
    Search { case: String, source: SearchError },
}

#[derive(Debug, Clone)]
pub struct EventResult {
    pub case: String,
    /// Position of the event within its case, from 1.
    pub event_index: usize,
    pub arrival: u64,
    pub alignment: PrefixAlignment,
    pub metrics: SearchMetrics,
    pub elapsed: Duration,
}

impl EventResult {
    pub fn cost(&self) -> u32 {
        self.alignment.total_cost
    }
}

#[derive(Debug, Clone)]
enum AlgorithmState {
    Incremental(SearchCache, Refresh),
    Windowed(OccState),
}

#[derive(Debug, Clone)]
struct CaseEntry {
    spn: SyncProductNet,
    state: AlgorithmState,
}

#[derive(Debug, Clone)]
pub struct Engine {
    model: Arc<WorkflowNet>,
    algorithm: Algorithm,
    mode: HeuristicMode,
    cases: IndexMap<String, CaseEntry>,
}

impl Engine {
    /// Validates the model once.
    pub fn new(
        model: Arc<WorkflowNet>,
        algorithm: Algorithm,
        mode: HeuristicMode,
    ) -> Result<Self, SpnError> {
        let report = model.validate();
        if !report.is_ok() {
            return Err(SpnError::InvalidModel(
                report
                    .violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; "),
            ));
        }
        Ok(Engine {
            model,
            algorithm,
            mode,
            cases: IndexMap::new(),
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.algorithm
    }

    pub fn model(&self) -> &Arc<WorkflowNet> {
        &self.model
    }

    pub fn case_count(&self) -> usize {
        self.cases.len()
    }

    /// Trace received so far for `case`.
    pub fn trace(&self, case: &str) -> Option<&[Activity]> {
        self.cases.get(case).map(|e| e.spn.trace())
    }

    /// Rough memory held by the case table, in bytes.
    pub fn byte_estimate(&self) -> usize {
        self.cases
            .iter()
            .map(|(k, e)| {
                let state = match &e.state {
                    AlgorithmState::Incremental(c, _) => c.byte_estimate(),
                    AlgorithmState::Windowed(o) => o
                        .alignment
                        .as_ref()
                        .map_or(0, |a| a.moves.len() * std::mem::size_of::<crate::alignment::Move>()),
                };
                k.len()
                    + state
                    + std::mem::size_of_val(e.spn.transitions())
            })
            .sum()
    }

    /// Parses and processes one raw event.
    pub fn process_raw(
        &mut self,
        case: &str,
        activity: &str,
        arrival: u64,
    ) -> Result<EventResult, EngineError> {
        let event = make_event(case, activity, arrival)?;
        self.process_event(&event)
    }

    pub fn process_event(&mut self, event: &Event) -> Result<EventResult, EngineError> {
        let entry = self.cases.get_mut(&event.case);
        let (result, fresh) = match entry {
            Some(entry) => (step(entry, event, self.mode, true), None),
            None => {
                let mut entry = new_case(&self.model, self.algorithm, &event.activity);
                (step(&mut entry, event, self.mode, false), Some(entry))
            }
        };
        if let (Ok(_), Some(entry)) = (&result, fresh) {
            self.cases.insert(event.case.clone(), entry);
        }
        result
    }

    /// Processes a batch, running distinct cases in parallel. Results come
    /// back in arrival order and equal those of one-by-one processing.
    pub fn process_batch(&mut self, events: &[Event]) -> Vec<Result<EventResult, EngineError>> {
        struct Job<'a> {
            existing: Option<&'a mut CaseEntry>,
            created: Option<CaseEntry>,
            events: Vec<usize>,
        }
        let mut groups: IndexMap<&str, Vec<usize>> = IndexMap::new();
        for (i, e) in events.iter().enumerate() {
            groups.entry(e.case.as_str()).or_default().push(i);
        }
        let Engine {
            model,
            algorithm,
            mode,
            cases,
        } = self;
        let mut existing: HashMap<&str, &mut CaseEntry> = cases
            .iter_mut()
            .filter(|(k, _)| groups.contains_key(k.as_str()))
            .map(|(k, v)| (k.as_str(), v))
            .collect();
        let mut jobs: Vec<Job<'_>> = groups
            .iter()
            .map(|(case, idx)| Job {
                existing: existing.remove(case),
                created: None,
                events: idx.clone(),
            })
            .collect();
        let (model, algorithm, mode) = (&*model, *algorithm, *mode);
        let done = par::map_mut(&mut jobs, |job| {
            let mut out = Vec::with_capacity(job.events.len());
            for &i in &job.events {
                let ev = &events[i];
                let r = match (job.existing.as_deref_mut(), job.created.as_mut()) {
                    (Some(en), _) | (None, Some(en)) => step(en, ev, mode, true),
                    (None, None) => {
                        let mut en = new_case(model, algorithm, &ev.activity);
                        let r = step(&mut en, ev, mode, false);
                        if r.is_ok() {
                            job.created = Some(en);
                        }
                        r
                    }
                };
                out.push((i, r));
            }
            out
        });
        let created: Vec<(String, CaseEntry)> = groups
            .keys()
            .zip(jobs)
            .filter_map(|(case, job)| job.created.map(|en| (case.to_string(), en)))
            .collect();
        cases.extend(created);
        let mut results: Vec<Option<Result<EventResult, EngineError>>> = vec![None; events.len()];
        for (i, r) in done.into_iter().flatten() {
            results[i] = Some(r);
        }
        results.into_iter().map(|r| r.expect("every event processed")).collect()
    }
}

fn new_case(model: &Arc<WorkflowNet>, algorithm: Algorithm, first: &Activity) -> CaseEntry {
    let spn = SyncProductNet::build(model.clone(), std::slice::from_ref(first))
        .expect("model validated and trace non-empty");
    let state = match algorithm {
        Algorithm::Ias => {
            AlgorithmState::Incremental(SearchCache::new(spn.initial_marking().clone()), Refresh::Lazy)
        }
        Algorithm::Iasr => AlgorithmState::Incremental(
            SearchCache::new(spn.initial_marking().clone()),
            Refresh::Eager,
        ),
        Algorithm::Occ(w) => AlgorithmState::Windowed(OccState::new(w)),
    };
    CaseEntry { spn, state }
}

fn step(
    entry: &mut CaseEntry,
    event: &Event,
    mode: HeuristicMode,
    extend: bool,
) -> Result<EventResult, EngineError> {
    if extend {
        entry.spn.extend(event.activity.clone());
    }
    let out = match &mut entry.state {
        AlgorithmState::Incremental(cache, refresh) => astar_inc(&entry.spn, cache, mode, *refresh),
        AlgorithmState::Windowed(state) => occ_process_event(&entry.spn, state, mode),
    };
    let out = out.map_err(|source| EngineError::Search {
        case: event.case.clone(),
        source,
    })?;
    Ok(EventResult {
        case: event.case.clone(),
        event_index: entry.spn.trace_len(),
        arrival: event.index,
        alignment: out.alignment,
        metrics: out.metrics,
        elapsed: out.elapsed,
    })
}

fn make_event(case: &str, activity: &str, arrival: u64) -> Result<Event, EngineError> {
    let reject = |reason: &str| EngineError::Rejected {
        case: case.to_string(),
        reason: reason.to_string(),
    };
    if activity == "τ" {
        return Err(reject("silent label τ is not an observable activity"));
    }
    let activity = Activity::new(activity).map_err(|_| reject("empty activity"))?;
    Ok(Event {
        case: case.to_string(),
        activity,
        index: arrival,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum StreamOrder {
    /// One trace after another, in log order.
    #[default]
    Sequential,
    /// One event of every unfinished trace per round.
    RoundRobin,
}

impl FromStr for StreamOrder {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(StreamOrder::Sequential),
            "round-robin" => Ok(StreamOrder::RoundRobin),
            _ => Err(format!("unknown order `{s}` (expected sequential or round-robin)")),
        }
    }
}

/// Turns a log into a stream with case ids "1".."n".
pub fn replay_log_as_stream(log: &[Vec<Activity>], order: StreamOrder) -> Vec<Event> {
    let mut out = Vec::with_capacity(log.iter().map(Vec::len).sum());
    let push = |case: usize, a: &Activity, out: &mut Vec<Event>| {
        let index = out.len() as u64;
        out.push(Event {
            case: (case + 1).to_string(),
            activity: a.clone(),
            index,
        });
    };
    match order {
        StreamOrder::Sequential => {
            for (c, trace) in log.iter().enumerate() {
                for a in trace {
                    push(c, a, &mut out);
                }
            }
        }
        StreamOrder::RoundRobin => {
            let longest = log.iter().map(Vec::len).max().unwrap_or(0);
            for round in 0..longest {
                for (c, trace) in log.iter().enumerate() {
                    if let Some(a) = trace.get(round) {
                        push(c, a, &mut out);
                    }
                }
            }
        }
    }
    out
}

/// A log read from a file: traces keyed by case id in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EventLog {
    pub traces: IndexMap<String, Vec<Activity>>,
}

impl EventLog {
    pub fn from_traces(traces: Vec<Vec<Activity>>) -> Self {
        EventLog {
            traces: traces
                .into_iter()
                .enumerate()
                .map(|(i, t)| ((i + 1).to_string(), t))
                .collect(),
        }
    }

    pub fn trace_list(&self) -> Vec<Vec<Activity>> {
        self.traces.values().cloned().collect()
    }

    pub fn num_events(&self) -> usize {
        self.traces.values().map(Vec::len).sum()
    }

    /// Writes `case,activity` CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["case", "activity"])?;
        for (case, trace) in &self.traces {
            for a in trace {
                wr.write_record([case.as_str(), a.as_str()])?;
            }
        }
        wr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum InputError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

#[derive(Debug, Deserialize)]
struct JsonEvent {
    case: serde_json::Value,
    activity: String,
}

/// Raw `(case, activity)` pairs in file order. Accepts line-delimited JSON
/// objects with `case` and `activity`, or CSV with those two columns.
pub fn parse_events(text: &str) -> Result<Vec<(String, String)>, InputError> {
    let first = text.lines().find(|l| !l.trim().is_empty());
    match first {
        None => Ok(Vec::new()),
        Some(l) if l.trim_start().starts_with('{') => parse_json_lines(text),
        Some(_) => parse_csv(text),
    }
}

fn parse_json_lines(text: &str) -> Result<Vec<(String, String)>, InputError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let ev: JsonEvent = serde_json::from_str(line).map_err(|e| InputError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        let case = match ev.case {
            serde_json::Value::String(s) => s,
            serde_json::Value::Number(n) => n.to_string(),
            other => {
                return Err(InputError::Malformed {
                    line: i + 1,
                    message: format!("case id must be a string or number, got {other}"),
                })
            }
        };
        out.push((case, ev.activity));
    }
    Ok(out)
}

fn parse_csv(text: &str) -> Result<Vec<(String, String)>, InputError> {
    let mut rd = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let malformed = |line: usize, message: String| InputError::Malformed { line, message };
    let headers = rd.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| malformed(1, format!("missing `{name}` column")))
    };
    let (ci, ai) = (col("case")?, col("activity")?);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| malformed(line, e.to_string()))?;
        match (rec.get(ci), rec.get(ai)) {
            (Some(c), Some(a)) => out.push((c.to_string(), a.to_string())),
            _ => return Err(malformed(line, "too few columns".into())),
        }
    }
    Ok(out)
}

/// Groups parsed events into traces; empty and τ activities are errors.
pub fn parse_log(text: &str) -> Result<EventLog, InputError> {
    let mut log = EventLog::default();
    for (i, (case, activity)) in parse_events(text)?.into_iter().enumerate() {
        let ev = make_event(&case, &activity, i as u64).map_err(|e| InputError::Malformed {
            line: i + 2,
            message: e.to_string(),
        })?;
        log.traces.entry(case).or_default().push(ev.activity);
    }
    Ok(log)
}

pub fn read_log(path: &Path) -> Result<EventLog, InputError> {
    let text = std::fs::read_to_string(path).map_err(|source| InputError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_log(&text)
}

/// One line of per-event output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputRecord {
    pub case: String,
    pub event_index: usize,
    pub cost: u32,
    pub alignment: Vec<MoveRecord>,
    pub queued: u64,
    pub visited: u64,
    pub lps: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub case: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StreamRecord {
    Result(OutputRecord),
    Error(ErrorRecord),
}

impl StreamRecord {
    pub fn new(result: &Result<EventResult, EngineError>, model: &WorkflowNet, trace: &[Activity]) -> Self {
        match result {
            Ok(r) => StreamRecord::Result(OutputRecord {
                case: r.case.clone(),
                event_index: r.event_index,
                cost: r.cost(),
                alignment: r.alignment.records(model, trace),
                queued: r.metrics.queued,
                visited: r.metrics.visited,
                lps: r.metrics.lps_solved,
            }),
            Err(e) => StreamRecord::Error(ErrorRecord {
                case: match e {
                    EngineError::Rejected { case, .. } | EngineError::Search { case, .. } => case.clone(),
                },
                error: e.to_string(),
            }),
        }
    }
}

/// Destination for per-event records.
pub trait Sink {
    fn emit(&mut self, record: &StreamRecord) -> io::Result<()>;
}

impl Sink for Vec<StreamRecord> {
    fn emit(&mut self, record: &StreamRecord) -> io::Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Writes one JSON object per line.
pub struct JsonLinesSink<W: Write> {
    out: W,
}

impl<W: Write> JsonLinesSink<W> {
    pub fn new(out: W) -> Self {
        JsonLinesSink { out }
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

impl<W: Write> Sink for JsonLinesSink<W> {
    fn emit(&mut self, record: &StreamRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }
}

/// Reads line-delimited records back.
pub fn read_records<R: BufRead>(r: R) -> Result<Vec<StreamRecord>, InputError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| InputError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| InputError::Malformed {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
