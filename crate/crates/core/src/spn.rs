//! Trace nets and synchronous product nets.
//!
//! The product is grown in place: [`SyncProductNet::extend`] appends one
//! trace place, one log move and one synchronous move per matching model
//! transition. Nothing that already exists is renumbered or rewired, so
//! markings, cost-so-far values and predecessor links computed on an earlier
//! version stay valid.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use smallvec::{smallvec, SmallVec};
use thiserror::Error;

use crate::petri::{
    Activity, Label, Marking, Net, NetBuilder, PetriError, PlaceIdx, TransitionIdx, WorkflowNet,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpnError {
    #[error("a trace net needs at least one event")]
    EmptyTrace,
    #[error("model is not a workflow net: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Petri(#[from] PetriError),
}

/// Linear net of one observed trace.
#[derive(Debug, Clone)]
pub struct TraceNet {
    pub net: WorkflowNet,
    pub len: usize,
    /// `places[i]` is p'_i.
    pub places: Vec<PlaceIdx>,
    /// `transitions[i - 1]` is t'_i.
    pub transitions: Vec<TransitionIdx>,
}

pub fn build_trace_net(trace: &[Activity]) -> Result<TraceNet, SpnError> {
    if trace.is_empty() {
        return Err(SpnError::EmptyTrace);
    }
    let mut b = NetBuilder::new();
    for i in 0..=trace.len() {
        b = b.place(&trace_place_id(i));
    }
    for (i, a) in trace.iter().enumerate() {
        let tid = trace_transition_id(i + 1);
        b = b
            .transition(&tid, Some(a.as_str()))
            .arc(&trace_place_id(i), &tid)
            .arc(&tid, &trace_place_id(i + 1));
    }
    let net = b
        .initial(&trace_place_id(0))
        .final_place(&trace_place_id(trace.len()))
        .build()?;
    Ok(TraceNet {
        len: trace.len(),
        places: (0..=trace.len() as PlaceIdx).collect(),
        transitions: (0..trace.len()).collect(),
        net,
    })
}

fn trace_place_id(i: usize) -> String {
    format!("tp{i}")
}

fn trace_transition_id(i: usize) -> String {
    format!("tt{i}")
}

/// What an SPN transition does. Trace positions are 1-based (t'_i consumes
/// the i-th event).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MoveKind {
    Log { position: usize },
    Model { transition: TransitionIdx },
    Sync { position: usize, transition: TransitionIdx },
}

impl MoveKind {
    pub fn consumes_event(&self) -> bool {
        !matches!(self, MoveKind::Model { .. })
    }

    pub fn position(&self) -> Option<usize> {
        match *self {
            MoveKind::Log { position } | MoveKind::Sync { position, .. } => Some(position),
            MoveKind::Model { .. } => None,
        }
    }

    pub fn model_transition(&self) -> Option<TransitionIdx> {
        match *self {
            MoveKind::Model { transition } | MoveKind::Sync { transition, .. } => Some(transition),
            MoveKind::Log { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpnTransition {
    pub id: String,
    pub kind: MoveKind,
    pub pre: SmallVec<[PlaceIdx; 4]>,
    pub post: SmallVec<[PlaceIdx; 4]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpnPlace {
    /// p'_i of the trace part.
    Trace(usize),
    /// A place of the model, by model index.
    Model(PlaceIdx),
}

/// Elements appended by one extension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtensionDelta {
    pub new_place: PlaceIdx,
    pub new_transitions: Range<TransitionIdx>,
    pub new_arcs: Vec<(String, String)>,
}

/// Synchronous product of a model and a (growing) trace.
///
/// Place indices: model places keep their model index, trace place p'_i sits
/// at `|P| + i`. Transition indices: model moves first (model order), then
/// per event its log move followed by its synchronous moves.
#[derive(Debug, Clone)]
pub struct SyncProductNet {
    model: Arc<WorkflowNet>,
    trace: Vec<Activity>,
    places: Vec<SpnPlace>,
    transitions: Vec<SpnTransition>,
    /// transitions consuming from each place
    consumers: Vec<Vec<TransitionIdx>>,
    producers: Vec<Vec<TransitionIdx>>,
    by_label: HashMap<Activity, Vec<TransitionIdx>>,
    initial: Marking,
}

impl SyncProductNet {
    /// Product for a non-empty trace. The model must be a valid workflow net.
    pub fn build(model: Arc<WorkflowNet>, trace: &[Activity]) -> Result<Self, SpnError> {
        let report = model.validate();
        if !report.is_ok() {
            return Err(SpnError::InvalidModel(report.to_string().trim().to_string()));
        }
        if trace.is_empty() {
            return Err(SpnError::EmptyTrace);
        }
        let mut spn = Self::empty_trace(model);
        for a in trace {
            spn.extend(a.clone());
        }
        Ok(spn)
    }

    fn empty_trace(model: Arc<WorkflowNet>) -> Self {
        let np = model.num_places();
        let mut places: Vec<SpnPlace> = (0..np as PlaceIdx).map(SpnPlace::Model).collect();
        places.push(SpnPlace::Trace(0));
        let mut by_label: HashMap<Activity, Vec<TransitionIdx>> = HashMap::new();
        let mut transitions = Vec::with_capacity(model.num_transitions());
        for (ti, t) in model.transitions().iter().enumerate() {
            if let Label::Visible(a) = &t.label {
                by_label.entry(a.clone()).or_default().push(ti);
            }
            transitions.push(SpnTransition {
                id: format!("model:{}", t.id),
                kind: MoveKind::Model { transition: ti },
                pre: t.pre.clone(),
                post: t.post.clone(),
            });
        }
        let mut initial = model.initial_marking().clone();
        initial.add(np as PlaceIdx, 1);
        let mut spn = SyncProductNet {
            model,
            trace: Vec::new(),
            places,
            transitions: Vec::new(),
            consumers: vec![Vec::new(); np + 1],
            producers: vec![Vec::new(); np + 1],
            by_label,
            initial,
        };
        for t in transitions {
            spn.push_transition(t);
        }
        spn
    }

    fn push_transition(&mut self, t: SpnTransition) {
        let idx = self.transitions.len();
        for &p in &t.pre {
            self.consumers[p as usize].push(idx);
        }
        for &p in &t.post {
            self.producers[p as usize].push(idx);
        }
        self.transitions.push(t);
    }

    /// Appends one event to the trace part.
    pub fn extend(&mut self, activity: Activity) -> ExtensionDelta {
        let n = self.trace.len();
        let position = n + 1;
        let prev = self.trace_place(n);
        let new_place = self.places.len() as PlaceIdx;
        self.places.push(SpnPlace::Trace(position));
        self.consumers.push(Vec::new());
        self.producers.push(Vec::new());
        let first = self.transitions.len();
        let tt = trace_transition_id(position);
        let mut new_arcs = Vec::new();

        self.push_transition(SpnTransition {
            id: format!("log:{tt}"),
            kind: MoveKind::Log { position },
            pre: smallvec![prev],
            post: smallvec![new_place],
        });
        let matches = self.by_label.get(&activity).cloned().unwrap_or_default();
        for mt in matches {
            let model_t = self.model.transition(mt);
            let mut pre: SmallVec<[PlaceIdx; 4]> = model_t.pre.clone();
            pre.push(prev);
            pre.sort_unstable();
            let mut post: SmallVec<[PlaceIdx; 4]> = model_t.post.clone();
            post.push(new_place);
            post.sort_unstable();
            self.push_transition(SpnTransition {
                id: format!("sync:{tt}|{}", model_t.id),
                kind: MoveKind::Sync {
                    position,
                    transition: mt,
                },
                pre,
                post,
            });
        }
        for t in &self.transitions[first..] {
            for &p in &t.pre {
                new_arcs.push((self.place_name(p), t.id.clone()));
            }
            for &p in &t.post {
                new_arcs.push((t.id.clone(), self.place_name(p)));
            }
        }
        self.trace.push(activity);
        ExtensionDelta {
            new_place,
            new_transitions: first..self.transitions.len(),
            new_arcs,
        }
    }

    pub fn model(&self) -> &Arc<WorkflowNet> {
        &self.model
    }

    pub fn trace(&self) -> &[Activity] {
        &self.trace
    }

    pub fn trace_len(&self) -> usize {
        self.trace.len()
    }

    /// Index of p'_i.
    pub fn trace_place(&self, i: usize) -> PlaceIdx {
        (self.model.num_places() + i) as PlaceIdx
    }

    /// p'_{|σ|}: a marking is a goal iff it marks this place.
    pub fn last_trace_place(&self) -> PlaceIdx {
        self.trace_place(self.trace.len())
    }

    pub fn is_goal(&self, m: &Marking) -> bool {
        m.contains(self.last_trace_place())
    }

    pub fn initial_marking(&self) -> &Marking {
        &self.initial
    }

    pub fn places(&self) -> &[SpnPlace] {
        &self.places
    }

    pub fn transitions(&self) -> &[SpnTransition] {
        &self.transitions
    }

    pub fn transition(&self, t: TransitionIdx) -> &SpnTransition {
        &self.transitions[t]
    }

    pub fn consumers(&self, p: PlaceIdx) -> &[TransitionIdx] {
        &self.consumers[p as usize]
    }

    pub fn producers(&self, p: PlaceIdx) -> &[TransitionIdx] {
        &self.producers[p as usize]
    }

    pub fn is_trace_place(&self, p: PlaceIdx) -> bool {
        matches!(self.places[p as usize], SpnPlace::Trace(_))
    }

    /// Position of the trace token, if exactly one trace place is marked.
    pub fn trace_position(&self, m: &Marking) -> Option<usize> {
        let mut found = None;
        for (p, c) in m.iter() {
            if let SpnPlace::Trace(i) = self.places[p as usize] {
                if c != 1 || found.is_some() {
                    return None;
                }
                found = Some(i);
            }
        }
        found
    }

    pub fn trace_tokens(&self, m: &Marking) -> u64 {
        m.iter()
            .filter(|&(p, _)| self.is_trace_place(p))
            .map(|(_, c)| c as u64)
            .sum()
    }

    /// Enabled transitions at `m`, ascending by index. Only consumers of
    /// marked places are inspected.
    pub fn successors(&self, m: &Marking) -> Vec<TransitionIdx> {
        let mut cands: SmallVec<[TransitionIdx; 16]> = SmallVec::new();
        for p in m.places() {
            cands.extend(self.consumers[p as usize].iter().copied());
        }
        cands.sort_unstable();
        cands.dedup();
        cands
            .into_iter()
            .filter(|&t| self.transitions[t].pre.iter().all(|&p| m.contains(p)))
            .collect()
    }

    /// Display pair (log row, model row) of a transition.
    pub fn display_pair(&self, t: TransitionIdx) -> (String, String) {
        match self.transitions[t].kind {
            MoveKind::Log { position } => (self.trace[position - 1].to_string(), "≫".into()),
            MoveKind::Model { transition } => ("≫".into(), self.model.label(transition).to_string()),
            MoveKind::Sync {
                position,
                transition,
            } => (
                self.trace[position - 1].to_string(),
                self.model.label(transition).to_string(),
            ),
        }
    }

    /// Marking as `[id:count, ...]` with place ids, counts of 1 omitted.
    pub fn format_marking(&self, m: &Marking) -> String {
        let parts: Vec<String> = m
            .iter()
            .map(|(p, n)| match n {
                1 => self.place_name(p),
                n => format!("{}:{n}", self.place_name(p)),
            })
            .collect();
        format!("[{}]", parts.join(","))
    }

    /// Canonical text form: one line per transition with its arcs, sorted.
    pub fn canonical_form(&self) -> Vec<String> {
        let mut lines: Vec<String> = self
            .transitions
            .iter()
            .map(|t| {
                let names = |ps: &[PlaceIdx]| {
                    let mut v: Vec<String> = ps.iter().map(|&p| self.place_name(p)).collect();
                    v.sort();
                    v.join(",")
                };
                format!("{} [{}] -> [{}]", t.id, names(&t.pre), names(&t.post))
            })
            .collect();
        lines.sort();
        lines
    }
}

impl Net for SyncProductNet {
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
        match self.places[p as usize] {
            SpnPlace::Trace(i) => trace_place_id(i),
            SpnPlace::Model(mp) => self.model.place_ids()[mp as usize].clone(),
        }
    }
    fn transition_name(&self, t: TransitionIdx) -> String {
        self.transitions[t].id.clone()
    }
}

impl fmt::Display for SyncProductNet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for line in self.canonical_form() {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use std::collections::{HashSet, VecDeque};

    pub(crate) fn acts(s: &str) -> Vec<Activity> {
        s.split(',')
            .filter(|x| !x.is_empty())
            .map(|x| Activity::new(x).unwrap())
            .collect()
    }

    fn reachable(spn: &SyncProductNet) -> Vec<Marking> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut q = VecDeque::from([spn.initial_marking().clone()]);
        seen.insert(spn.initial_marking().clone());
        while let Some(m) = q.pop_front() {
            for t in spn.successors(&m) {
                let n = spn.fire(&m, t).unwrap();
                if seen.insert(n.clone()) {
                    q.push_back(n);
                }
            }
            out.push(m);
        }
        out
    }

    #[test]
    fn trace_net_shapes() {
        let tn = build_trace_net(&acts("a,b,c")).unwrap();
        assert_eq!(tn.net.num_places(), 4);
        assert_eq!(tn.net.num_transitions(), 3);
        let labels: Vec<String> = tn.net.transitions().iter().map(|t| t.label.to_string()).collect();
        assert_eq!(labels, ["a", "b", "c"]);
        assert!(tn.net.validate().is_ok());
        for i in 1..=3 {
            assert_eq!(tn.net.preset(tn.transitions[i - 1]), &[tn.places[i - 1]]);
            assert_eq!(tn.net.postset(tn.transitions[i - 1]), &[tn.places[i]]);
        }

        let one = build_trace_net(&acts("a")).unwrap();
        assert_eq!((one.net.num_places(), one.net.num_transitions()), (2, 1));
        let aa = build_trace_net(&acts("a,a")).unwrap();
        assert_eq!((aa.net.num_places(), aa.net.num_transitions()), (3, 2));
        assert!(aa.net.transitions().iter().all(|t| t.label.to_string() == "a"));

        assert_eq!(build_trace_net(&[]).unwrap_err(), SpnError::EmptyTrace);
    }

    #[test]
    fn spn_of_running_example() {
        let spn = SyncProductNet::build(Arc::new(assets::n1()), &acts("a,b,c")).unwrap();
        assert_eq!(spn.num_places(), 7);
        assert_eq!(spn.num_transitions(), 10);
        let count = |f: fn(&MoveKind) -> bool| spn.transitions().iter().filter(|t| f(&t.kind)).count();
        assert_eq!(count(|k| matches!(k, MoveKind::Log { .. })), 3);
        assert_eq!(count(|k| matches!(k, MoveKind::Model { .. })), 4);
        assert_eq!(count(|k| matches!(k, MoveKind::Sync { .. })), 3);
        let sync_ids: HashSet<&str> = spn
            .transitions()
            .iter()
            .filter(|t| matches!(t.kind, MoveKind::Sync { .. }))
            .map(|t| t.id.as_str())
            .collect();
        assert_eq!(
            sync_ids,
            HashSet::from(["sync:tt1|t1", "sync:tt2|t3", "sync:tt3|t4"])
        );
        let m = spn.initial_marking();
        assert!(m.contains(spn.trace_place(0)));
        assert!(m.contains(spn.model().place_by_id("p1").unwrap()));
        assert_eq!(m.total(), 2);
    }

    #[test]
    fn unknown_label_yields_no_sync_moves() {
        let spn = SyncProductNet::build(Arc::new(assets::n1()), &acts("z")).unwrap();
        assert_eq!(spn.num_transitions(), 5);
        assert!(spn
            .transitions()
            .iter()
            .all(|t| !matches!(t.kind, MoveKind::Sync { .. })));
    }

    #[test]
    fn duplicate_model_labels_give_one_sync_each() {
        let model = NetBuilder::new()
            .places(&["i", "o"])
            .transition("t1", Some("a"))
            .transition("t2", Some("a"))
            .arcs(&[("i", "t1"), ("t1", "o"), ("i", "t2"), ("t2", "o")])
            .initial("i")
            .final_place("o")
            .build()
            .unwrap();
        let spn = SyncProductNet::build(Arc::new(model), &acts("a")).unwrap();
        let syncs = spn
            .transitions()
            .iter()
            .filter(|t| matches!(t.kind, MoveKind::Sync { .. }))
            .count();
        assert_eq!(syncs, 2);
    }

    #[test]
    fn rejects_invalid_input() {
        let model = Arc::new(assets::n1());
        assert_eq!(
            SyncProductNet::build(model.clone(), &[]).unwrap_err(),
            SpnError::EmptyTrace
        );
        let mut doc = model.to_document();
        doc.arcs.pop();
        let broken = Arc::new(WorkflowNet::from_document(&doc).unwrap());
        assert!(matches!(
            SyncProductNet::build(broken, &acts("a")),
            Err(SpnError::InvalidModel(_))
        ));
    }

    #[test]
    fn extension_by_b_adds_frontier_elements() {
        let mut spn = SyncProductNet::build(Arc::new(assets::n1()), &acts("a")).unwrap();
        let before = spn.canonical_form();
        let delta = spn.extend(Activity::new("b").unwrap());
        assert_eq!(spn.place_name(delta.new_place), "tp2");
        let ids: Vec<&str> = spn.transitions()[delta.new_transitions.clone()]
            .iter()
            .map(|t| t.id.as_str())
            .collect();
        assert_eq!(ids, ["log:tt2", "sync:tt2|t3"]);
        // append-only
        let after = spn.canonical_form();
        assert!(before.iter().all(|l| after.contains(l)));
        assert_eq!(spn.trace_len(), 2);

        let d2 = spn.extend(Activity::new("zz").unwrap());
        assert_eq!(d2.new_transitions.len(), 1);
    }

    #[test]
    fn new_trace_place_has_no_consumers() {
        let mut spn = SyncProductNet::build(Arc::new(assets::choice_loop()), &acts("a,b")).unwrap();
        let delta = spn.extend(Activity::new("d").unwrap());
        assert!(spn.consumers(delta.new_place).is_empty());
        for t in delta.new_transitions {
            assert!(spn.transition(t).post.contains(&delta.new_place));
        }
    }

    #[test]
    fn one_token_in_trace_part() {
        for model in [assets::n1(), assets::choice_loop(), assets::parallel_tau()] {
            let spn = SyncProductNet::build(Arc::new(model), &acts("a,b,c,d")).unwrap();
            for m in reachable(&spn) {
                assert_eq!(spn.trace_tokens(&m), 1);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_trace() -> impl Strategy<Value = Vec<Activity>> {
            proptest::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e", "f", "x"]), 1..=6)
                .prop_map(|v| v.iter().map(|s| Activity::new(s).unwrap()).collect())
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn build_commutes_with_extend(trace in arb_trace(), next in prop::sample::select(vec!["a", "b", "d", "x"])) {
                let model = Arc::new(assets::parallel_tau());
                let next = Activity::new(next).unwrap();
                let mut extended = SyncProductNet::build(model.clone(), &trace).unwrap();
                extended.extend(next.clone());
                let mut full_trace = trace.clone();
                full_trace.push(next);
                let direct = SyncProductNet::build(model, &full_trace).unwrap();
                prop_assert_eq!(direct.canonical_form(), extended.canonical_form());
            }

            // Markings whose trace token sits before the last place enable the
            // same transitions before and after an extension.
            #[test]
            fn growth_is_limited_to_frontier(trace in arb_trace(), next in prop::sample::select(vec!["a", "b", "c", "x"])) {
                let model = Arc::new(assets::choice_loop());
                let spn = SyncProductNet::build(model, &trace).unwrap();
                let mut grown = spn.clone();
                grown.extend(Activity::new(next).unwrap());
                for m in reachable(&spn) {
                    if spn.is_goal(&m) {
                        continue;
                    }
                    prop_assert_eq!(spn.successors(&m), grown.successors(&m));
                }
            }
        }
    }
}
