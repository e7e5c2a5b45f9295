//! Labeled Petri nets, markings and the firing rule, plus structural
//! workflow-net validation.
//!
//! Places and transitions are interned: every net keeps its textual ids but
//! all algorithms work on dense indices. Arc weights are always 1.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;
use thiserror::Error;

pub type PlaceIdx = u32;
pub type TransitionIdx = usize;

/// A visible activity name. Never empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Activity(Arc<str>);

impl Activity {
    pub fn new(name: &str) -> Result<Self, PetriError> {
        if name.is_empty() {
            return Err(PetriError::EmptyLabel);
        }
        Ok(Activity(Arc::from(name)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Transition label: a visible activity or the silent label τ.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Visible(Activity),
    Silent,
}

impl Label {
    pub fn visible(name: &str) -> Result<Self, PetriError> {
        Activity::new(name).map(Label::Visible)
    }

    pub fn is_silent(&self) -> bool {
        matches!(self, Label::Silent)
    }

    pub fn activity(&self) -> Option<&Activity> {
        match self {
            Label::Visible(a) => Some(a),
            Label::Silent => None,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Visible(a) => write!(f, "{a}"),
            Label::Silent => f.write_str("τ"),
        }
    }
}

/// Multiset of places, stored sparsely as `(place, count)` pairs sorted by
/// place index with no zero counts. Equality, hashing and ordering are
/// therefore canonical.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Marking(SmallVec<[(PlaceIdx, u32); 4]>);

impl Marking {
    pub fn empty() -> Self {
        Marking(SmallVec::new())
    }

    pub fn from_places<I: IntoIterator<Item = PlaceIdx>>(places: I) -> Self {
        let mut m = Marking::empty();
        for p in places {
            m.add(p, 1);
        }
        m
    }

    pub fn from_counts<I: IntoIterator<Item = (PlaceIdx, u32)>>(counts: I) -> Self {
        let mut m = Marking::empty();
        for (p, c) in counts {
            m.add(p, c);
        }
        m
    }

    pub fn get(&self, place: PlaceIdx) -> u32 {
        match self.0.binary_search_by_key(&place, |&(p, _)| p) {
            Ok(i) => self.0[i].1,
            Err(_) => 0,
        }
    }

    pub fn contains(&self, place: PlaceIdx) -> bool {
        self.get(place) > 0
    }

    pub fn add(&mut self, place: PlaceIdx, count: u32) {
        if count == 0 {
            return;
        }
        match self.0.binary_search_by_key(&place, |&(p, _)| p) {
            Ok(i) => self.0[i].1 += count,
            Err(i) => self.0.insert(i, (place, count)),
        }
    }

    /// Removes one token. Returns `false` (and leaves the marking untouched)
    /// when the place is unmarked.
    fn take(&mut self, place: PlaceIdx) -> bool {
        match self.0.binary_search_by_key(&place, |&(p, _)| p) {
            Ok(i) => {
                if self.0[i].1 == 1 {
                    self.0.remove(i);
                } else {
                    self.0[i].1 -= 1;
                }
                true
            }
            Err(_) => false,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (PlaceIdx, u32)> + '_ {
        self.0.iter().copied()
    }

    pub fn places(&self) -> impl Iterator<Item = PlaceIdx> + '_ {
        self.0.iter().map(|&(p, _)| p)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().map(|&(_, c)| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PetriError {
    #[error("activity labels must be non-empty")]
    EmptyLabel,
    #[error("unknown transition index {0}")]
    UnknownTransition(TransitionIdx),
    #[error("unknown node id `{0}`")]
    UnknownId(String),
    #[error("duplicate node id `{0}`")]
    DuplicateId(String),
    #[error("arc {0} -> {1} must connect a place and a transition")]
    BadArc(String, String),
    #[error("transition `{transition}` is not enabled: place `{place}` is unmarked")]
    NotEnabled { transition: String, place: String },
    #[error("step {index}: transition `{transition}` is not enabled: place `{place}` is unmarked")]
    SequenceNotEnabled {
        index: usize,
        transition: String,
        place: String,
    },
}

/// Read access to the structure of a plain (weight-1) Petri net.
pub trait Net {
    fn num_places(&self) -> usize;
    fn num_transitions(&self) -> usize;
    fn preset(&self, t: TransitionIdx) -> &[PlaceIdx];
    fn postset(&self, t: TransitionIdx) -> &[PlaceIdx];
    fn place_name(&self, p: PlaceIdx) -> String;
    fn transition_name(&self, t: TransitionIdx) -> String;

    fn enabled(&self, m: &Marking, t: TransitionIdx) -> Result<bool, PetriError> {
        if t >= self.num_transitions() {
            return Err(PetriError::UnknownTransition(t));
        }
        Ok(self.preset(t).iter().all(|&p| m.contains(p)))
    }

    /// Fires `t` at `m`, returning the successor marking.
    fn fire(&self, m: &Marking, t: TransitionIdx) -> Result<Marking, PetriError> {
        if t >= self.num_transitions() {
            return Err(PetriError::UnknownTransition(t));
        }
        let pre = self.preset(t);
        let post = self.postset(t);
        let mut next = m.clone();
        for &p in pre {
            if post.contains(&p) {
                // self-loop: +1 -1
                if !m.contains(p) {
                    return Err(PetriError::NotEnabled {
                        transition: self.transition_name(t),
                        place: self.place_name(p),
                    });
                }
                continue;
            }
            if !next.take(p) {
                return Err(PetriError::NotEnabled {
                    transition: self.transition_name(t),
                    place: self.place_name(p),
                });
            }
        }
        for &p in post {
            if !pre.contains(&p) {
                next.add(p, 1);
            }
        }
        Ok(next)
    }

    fn fire_sequence(&self, m: &Marking, ts: &[TransitionIdx]) -> Result<Marking, PetriError> {
        let mut cur = m.clone();
        for (index, &t) in ts.iter().enumerate() {
            cur = self.fire(&cur, t).map_err(|e| match e {
                PetriError::NotEnabled { transition, place } => PetriError::SequenceNotEnabled {
                    index,
                    transition,
                    place,
                },
                other => other,
            })?;
        }
        Ok(cur)
    }

    /// Transitions enabled at `m`, ascending by index.
    fn enabled_transitions(&self, m: &Marking) -> Vec<TransitionIdx> {
        (0..self.num_transitions())
            .filter(|&t| self.preset(t).iter().all(|&p| m.contains(p)))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub id: String,
    pub label: Label,
    pub pre: SmallVec<[PlaceIdx; 4]>,
    pub post: SmallVec<[PlaceIdx; 4]>,
}

/// A labeled Petri net with initial and final marking. Whether it is a
/// proper workflow net is checked separately by [`WorkflowNet::validate`].
#[derive(Debug, Clone)]
pub struct WorkflowNet {
    places: Vec<String>,
    place_index: HashMap<String, PlaceIdx>,
    transitions: Vec<Transition>,
    transition_index: HashMap<String, TransitionIdx>,
    initial: Marking,
    final_marking: Marking,
}

/// Serialized net document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetDocument {
    pub places: Vec<String>,
    pub transitions: Vec<TransitionDocument>,
    pub arcs: Vec<(String, String)>,
    pub initial: std::collections::BTreeMap<String, u32>,
    #[serde(rename = "final")]
    pub final_marking: std::collections::BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TransitionDocument {
    pub id: String,
    /// `null` stands for τ.
    pub label: Option<String>,
}

/// Incremental construction of a [`WorkflowNet`] from textual ids.
#[derive(Debug, Default, Clone)]
pub struct NetBuilder {
    places: Vec<String>,
    transitions: Vec<(String, Option<String>)>,
    arcs: Vec<(String, String)>,
    initial: Vec<(String, u32)>,
    final_marking: Vec<(String, u32)>,
}

impl NetBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn place(mut self, id: &str) -> Self {
        self.places.push(id.to_string());
        self
    }

    pub fn places(mut self, ids: &[&str]) -> Self {
        self.places.extend(ids.iter().map(|s| s.to_string()));
        self
    }

    pub fn transition(mut self, id: &str, label: Option<&str>) -> Self {
        self.transitions
            .push((id.to_string(), label.map(|s| s.to_string())));
        self
    }

    pub fn arc(mut self, src: &str, tgt: &str) -> Self {
        self.arcs.push((src.to_string(), tgt.to_string()));
        self
    }

    pub fn arcs(mut self, arcs: &[(&str, &str)]) -> Self {
        self.arcs
            .extend(arcs.iter().map(|(s, t)| (s.to_string(), t.to_string())));
        self
    }

    pub fn initial(mut self, place: &str) -> Self {
        self.initial.push((place.to_string(), 1));
        self
    }

    pub fn final_place(mut self, place: &str) -> Self {
        self.final_marking.push((place.to_string(), 1));
        self
    }

    pub fn document(&self) -> NetDocument {
        NetDocument {
            places: self.places.clone(),
            transitions: self
                .transitions
                .iter()
                .map(|(id, label)| TransitionDocument {
                    id: id.clone(),
                    label: label.clone(),
                })
                .collect(),
            arcs: self.arcs.clone(),
            initial: self.initial.iter().cloned().collect(),
            final_marking: self.final_marking.iter().cloned().collect(),
        }
    }

    pub fn build(self) -> Result<WorkflowNet, PetriError> {
        WorkflowNet::from_document(&self.document())
    }
}

impl WorkflowNet {
    pub fn from_document(doc: &NetDocument) -> Result<Self, PetriError> {
        let mut place_index = HashMap::new();
        for (i, p) in doc.places.iter().enumerate() {
            if p.is_empty() {
                return Err(PetriError::UnknownId(p.clone()));
            }
            if place_index.insert(p.clone(), i as PlaceIdx).is_some() {
                return Err(PetriError::DuplicateId(p.clone()));
            }
        }
        let mut transition_index = HashMap::new();
        let mut transitions = Vec::with_capacity(doc.transitions.len());
        for (i, t) in doc.transitions.iter().enumerate() {
            if place_index.contains_key(&t.id) || transition_index.insert(t.id.clone(), i).is_some()
            {
                return Err(PetriError::DuplicateId(t.id.clone()));
            }
            let label = match &t.label {
                Some(name) => Label::visible(name)?,
                None => Label::Silent,
            };
            transitions.push(Transition {
                id: t.id.clone(),
                label,
                pre: SmallVec::new(),
                post: SmallVec::new(),
            });
        }
        for (src, tgt) in &doc.arcs {
            match (
                place_index.get(src),
                transition_index.get(src),
                place_index.get(tgt),
                transition_index.get(tgt),
            ) {
                (Some(&p), None, None, Some(&t)) => {
                    if !transitions[t].pre.contains(&p) {
                        transitions[t].pre.push(p);
                    }
                }
                (None, Some(&t), Some(&p), None) => {
                    if !transitions[t].post.contains(&p) {
                        transitions[t].post.push(p);
                    }
                }
                (None, None, _, _) => return Err(PetriError::UnknownId(src.clone())),
                (_, _, None, None) => return Err(PetriError::UnknownId(tgt.clone())),
                _ => return Err(PetriError::BadArc(src.clone(), tgt.clone())),
            }
        }
        for t in &mut transitions {
            t.pre.sort_unstable();
            t.post.sort_unstable();
        }
        let marking = |m: &std::collections::BTreeMap<String, u32>| -> Result<Marking, PetriError> {
            let mut out = Marking::empty();
            for (p, &c) in m {
                let idx = *place_index
                    .get(p)
                    .ok_or_else(|| PetriError::UnknownId(p.clone()))?;
                out.add(idx, c);
            }
            Ok(out)
        };
        let initial = marking(&doc.initial)?;
        let final_marking = marking(&doc.final_marking)?;
        Ok(WorkflowNet {
            places: doc.places.clone(),
            place_index,
            transitions,
            transition_index,
            initial,
            final_marking,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, NetFileError> {
        let doc: NetDocument = serde_json::from_str(text)?;
        Ok(Self::from_document(&doc)?)
    }

    pub fn to_document(&self) -> NetDocument {
        let mut arcs = Vec::new();
        for t in &self.transitions {
            for &p in &t.pre {
                arcs.push((self.places[p as usize].clone(), t.id.clone()));
            }
            for &p in &t.post {
                arcs.push((t.id.clone(), self.places[p as usize].clone()));
            }
        }
        let named = |m: &Marking| {
            m.iter()
                .map(|(p, c)| (self.places[p as usize].clone(), c))
                .collect()
        };
        NetDocument {
            places: self.places.clone(),
            transitions: self
                .transitions
                .iter()
                .map(|t| TransitionDocument {
                    id: t.id.clone(),
                    label: t.label.activity().map(|a| a.as_str().to_string()),
                })
                .collect(),
            arcs,
            initial: named(&self.initial),
            final_marking: named(&self.final_marking),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("net document serializes")
    }

    pub fn initial_marking(&self) -> &Marking {
        &self.initial
    }

    pub fn final_marking(&self) -> &Marking {
        &self.final_marking
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn transition(&self, t: TransitionIdx) -> &Transition {
        &self.transitions[t]
    }

    pub fn place_ids(&self) -> &[String] {
        &self.places
    }

    pub fn place_by_id(&self, id: &str) -> Option<PlaceIdx> {
        self.place_index.get(id).copied()
    }

    pub fn transition_by_id(&self, id: &str) -> Option<TransitionIdx> {
        self.transition_index.get(id).copied()
    }

    pub fn label(&self, t: TransitionIdx) -> &Label {
        &self.transitions[t].label
    }

    /// Distinct visible labels, sorted.
    pub fn alphabet(&self) -> Vec<Activity> {
        let mut out: Vec<Activity> = self
            .transitions
            .iter()
            .filter_map(|t| t.label.activity().cloned())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Structural workflow-net check. Violations are returned as data.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let np = self.places.len();
        if np == 0 {
            violations.push(Violation::NoPlaces);
            return ValidationReport { violations };
        }
        let mut has_in = vec![false; np];
        let mut has_out = vec![false; np];
        for t in &self.transitions {
            for &p in &t.post {
                has_in[p as usize] = true;
            }
            for &p in &t.pre {
                has_out[p as usize] = true;
            }
        }
        let sources: Vec<PlaceIdx> = (0..np as PlaceIdx).filter(|&p| !has_in[p as usize]).collect();
        let sinks: Vec<PlaceIdx> = (0..np as PlaceIdx).filter(|&p| !has_out[p as usize]).collect();
        let names = |ps: &[PlaceIdx]| ps.iter().map(|&p| self.places[p as usize].clone()).collect();

        match sources.len() {
            0 => violations.push(Violation::NoSource),
            1 => {}
            _ => violations.push(Violation::MultipleSources(names(&sources))),
        }
        match sinks.len() {
            0 => violations.push(Violation::NoSink),
            1 => {}
            _ => violations.push(Violation::MultipleSinks(names(&sinks))),
        }
        let source = (sources.len() == 1).then(|| sources[0]);
        let sink = (sinks.len() == 1).then(|| sinks[0]);
        if np == 1 || (source.is_some() && source == sink) {
            violations.push(Violation::SourceEqualsSink(self.places[0].clone()));
        }
        if let Some(src) = source {
            if self.initial != Marking::from_places([src]) {
                violations.push(Violation::InitialMarking {
                    expected: self.places[src as usize].clone(),
                });
            }
        }
        if let Some(snk) = sink {
            if self.final_marking != Marking::from_places([snk]) {
                violations.push(Violation::FinalMarking {
                    expected: self.places[snk as usize].clone(),
                });
            }
        }
        for t in &self.transitions {
            if t.pre.is_empty() {
                violations.push(Violation::TransitionWithoutInput(t.id.clone()));
            }
            if t.post.is_empty() {
                violations.push(Violation::TransitionWithoutOutput(t.id.clone()));
            }
        }
        if let (Some(src), Some(snk)) = (source, sink) {
            if src != snk {
                let off_path = self.nodes_off_path(src, snk);
                if !off_path.is_empty() {
                    violations.push(Violation::NotOnPath(off_path));
                }
            }
        }
        ValidationReport { violations }
    }

    // Forward reachability from the source and backward reachability from the
    // sink; with the short-circuit arc added this is exactly strong
    // connectedness of the net.
    fn nodes_off_path(&self, source: PlaceIdx, sink: PlaceIdx) -> Vec<String> {
        let np = self.places.len();
        let nt = self.transitions.len();
        // node ids: places 0..np, transitions np..np+nt
        let mut succ = vec![Vec::new(); np + nt];
        let mut pred = vec![Vec::new(); np + nt];
        for (ti, t) in self.transitions.iter().enumerate() {
            let tn = np + ti;
            for &p in &t.pre {
                succ[p as usize].push(tn);
                pred[tn].push(p as usize);
            }
            for &p in &t.post {
                succ[tn].push(p as usize);
                pred[p as usize].push(tn);
            }
        }
        let reach = |start: usize, adj: &[Vec<usize>]| {
            let mut seen = vec![false; np + nt];
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(n) = queue.pop_front() {
                for &m in &adj[n] {
                    if !seen[m] {
                        seen[m] = true;
                        queue.push_back(m);
                    }
                }
            }
            seen
        };
        let fwd = reach(source as usize, &succ);
        let bwd = reach(sink as usize, &pred);
        (0..np + nt)
            .filter(|&n| !(fwd[n] && bwd[n]))
            .map(|n| {
                if n < np {
                    self.places[n].clone()
                } else {
                    self.transitions[n - np].id.clone()
                }
            })
            .collect()
    }

    /// Every reachable marking from the initial marking, breadth-first.
    /// Fails once more than `bound` markings were found.
    pub fn reachable_markings(&self, bound: usize) -> Option<Vec<Marking>> {
        let mut seen: HashSet<Marking> = HashSet::new();
        let mut order = Vec::new();
        let mut queue = VecDeque::from([self.initial.clone()]);
        seen.insert(self.initial.clone());
        while let Some(m) = queue.pop_front() {
            for t in self.enabled_transitions(&m) {
                let next = self.fire(&m, t).expect("enabled");
                if seen.insert(next.clone()) {
                    if seen.len() > bound {
                        return None;
                    }
                    queue.push_back(next);
                }
            }
            order.push(m);
        }
        Some(order)
    }
}

impl Net for WorkflowNet {
    fn num_places(&self) -> usize {
        self.places.len()
    }
    fn num_transitions(&self) -> usize {
        self.transitions.len()
    }
    fn preset(&self, t: TransitionIdx) -> &[PlaceIdx] {
        &self.transitions[t].pre
    }
    fn postset(&self, t: TransitionIdx) -> &[PlaceIdx] {
        &self.transitions[t].post
    }
    fn place_name(&self, p: PlaceIdx) -> String {
        self.places[p as usize].clone()
    }
    fn transition_name(&self, t: TransitionIdx) -> String {
        self.transitions[t].id.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoPlaces,
    NoSource,
    NoSink,
    MultipleSources(Vec<String>),
    MultipleSinks(Vec<String>),
    SourceEqualsSink(String),
    InitialMarking { expected: String },
    FinalMarking { expected: String },
    TransitionWithoutInput(String),
    TransitionWithoutOutput(String),
    NotOnPath(Vec<String>),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoPlaces => f.write_str("net has no places"),
            Violation::NoSource => f.write_str("no source place (every place has a producer)"),
            Violation::NoSink => f.write_str("no sink place (every place has a consumer)"),
            Violation::MultipleSources(ps) => write!(f, "multiple source places: {}", ps.join(", ")),
            Violation::MultipleSinks(ps) => write!(f, "multiple sink places: {}", ps.join(", ")),
            Violation::SourceEqualsSink(p) => write!(f, "source equals sink: {p}"),
            Violation::InitialMarking { expected } => {
                write!(f, "initial marking must be exactly [{expected}]")
            }
            Violation::FinalMarking { expected } => {
                write!(f, "final marking must be exactly [{expected}]")
            }
            Violation::TransitionWithoutInput(t) => write!(f, "transition {t} has no input place"),
            Violation::TransitionWithoutOutput(t) => {
                write!(f, "transition {t} has no output place")
            }
            Violation::NotOnPath(ns) => {
                write!(f, "not on a path from source to sink: {}", ns.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        for v in &self.violations {
            writeln!(f, "violation: {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum NetFileError {
    #[error("malformed net document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Net(#[from] PetriError),
}
