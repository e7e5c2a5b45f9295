//! Shortest-path search over the product state space.
//!
//! [`astar_inc`] continues an A* search from the open and closed sets left
//! by the previous call for the same case, after the product net was
//! extended by one event. The start state never changes; only the goal
//! (a token on the last trace place) moves. Heuristic values of open states
//! are outdated after an extension and are refreshed either all at once on
//! entry ([`Refresh::Eager`]) or one at a time when an outdated state reaches
//! the top of the queue ([`Refresh::Lazy`]).
//!
//! An outdated value is still a lower bound for the longer trace, but it can
//! exceed the refreshed one, so a queue mixing both is not consistent. A
//! closed state that later receives a cheaper path is therefore reopened;
//! with eager refresh this never happens.
//!
//! Undiscovered states have g = f = ∞ implicitly: they are simply absent.

use std::cmp::Ordering;
use std::collections::hash_map::Entry as MapEntry;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::time::{Duration, Instant};

use num_rational::Rational64;
use serde::Serialize;
use thiserror::Error;

use crate::alignment::{
    reconstruct, spn_move_cost, verify_prefix_alignment, AlignmentError, Predecessors,
    PrefixAlignment,
};
use crate::heuristic::{estimate, HeuristicError, HeuristicMode, HeuristicValue};
use crate::par;
use crate::petri::{Marking, Net, TransitionIdx};
use crate::spn::SyncProductNet;

pub type StateId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Refresh {
    /// Recompute h for every open state before searching.
    Eager,
    /// Mark open states outdated; recompute when popped.
    Lazy,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("open set exhausted without reaching a goal marking")]
    Exhausted,
    #[error("state space exceeds {0} markings")]
    TooLarge(usize),
    #[error(transparent)]
    Heuristic(#[from] HeuristicError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error("search returned an alignment that fails verification")]
    InvalidAlignment,
}

/// Work counters. Summed across calls with [`SearchMetrics::merge`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct SearchMetrics {
    /// States added to the open set.
    pub queued: u64,
    /// States moved to the closed set.
    pub visited: u64,
    /// Heuristic values that needed an LP/ILP solve.
    pub lps_solved: u64,
    /// Refreshes of outdated heuristic values.
    pub heuristic_recomputations: u64,
    /// Pops of live queue entries.
    pub pops: u64,
    /// Largest number of live pops of a single state between two openings.
    pub max_pops_per_state: u32,
    /// Closed states moved back to open because a cheaper path turned up.
    /// Stays 0 while every expanded state has an optimal g, which is
    /// guaranteed with eager refresh.
    pub reopened: u64,
}

impl SearchMetrics {
    pub fn merge(&mut self, other: &SearchMetrics) {
        self.queued += other.queued;
        self.visited += other.visited;
        self.lps_solved += other.lps_solved;
        self.heuristic_recomputations += other.heuristic_recomputations;
        self.pops += other.pops;
        self.max_pops_per_state = self.max_pops_per_state.max(other.max_pops_per_state);
        self.reopened += other.reopened;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct StateRecord {
    marking: Marking,
    g: u32,
    pred: Option<(TransitionIdx, StateId)>,
    /// `None` is +∞.
    h: Option<Rational64>,
    /// Trace length `h` was computed for; `None` if never computed.
    h_target: Option<usize>,
    status: Status,
    version: u32,
}

impl StateRecord {
    fn f(&self) -> Priority {
        match self.h {
            Some(h) => Priority::Finite(h + Rational64::from_integer(self.g as i64)),
            None => Priority::Infinite,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Priority {
    Finite(Rational64),
    Infinite,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct QueueEntry {
    f: Priority,
    g: u32,
    marking: Marking,
    id: StateId,
    version: u32,
}

impl Ord for QueueEntry {
    // Max-heap: smallest f first, then larger g, then smaller marking.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .cmp(&self.f)
            .then_with(|| self.g.cmp(&other.g))
            .then_with(|| other.marking.cmp(&self.marking))
    }
}

impl PartialOrd for QueueEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Open set, closed set, cost-so-far and predecessor function of one case.
#[derive(Debug, Clone)]
pub struct SearchCache {
    states: Vec<StateRecord>,
    index: HashMap<Marking, StateId>,
    queue: BinaryHeap<QueueEntry>,
    start: StateId,
}

impl SearchCache {
    /// Open = {start}, g(start) = 0, no predecessor.
    pub fn new(start: Marking) -> Self {
        let rec = StateRecord {
            marking: start.clone(),
            g: 0,
            pred: None,
            h: Some(Rational64::from_integer(0)),
            h_target: None,
            status: Status::Open,
            version: 0,
        };
        let mut cache = SearchCache {
            states: vec![rec],
            index: HashMap::from([(start, 0)]),
            queue: BinaryHeap::new(),
            start: 0,
        };
        cache.push(0);
        cache
    }

    fn push(&mut self, id: StateId) {
        let rec = &self.states[id as usize];
        self.queue.push(QueueEntry {
            f: rec.f(),
            g: rec.g,
            marking: rec.marking.clone(),
            id,
            version: rec.version,
        });
    }

    pub fn start_marking(&self) -> &Marking {
        &self.states[self.start as usize].marking
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn g(&self, m: &Marking) -> Option<u32> {
        self.index.get(m).map(|&id| self.states[id as usize].g)
    }

    pub fn status(&self, m: &Marking) -> Option<Status> {
        self.index.get(m).map(|&id| self.states[id as usize].status)
    }

    /// Stored heuristic value and the trace length it was computed for.
    pub fn stored_h(&self, m: &Marking) -> Option<(Option<Rational64>, Option<usize>)> {
        self.index
            .get(m)
            .map(|&id| (self.states[id as usize].h, self.states[id as usize].h_target))
    }

    /// Open markings in canonical order.
    pub fn open_markings(&self) -> Vec<Marking> {
        self.markings_with(Status::Open)
    }

    /// Closed markings in canonical order.
    pub fn closed_markings(&self) -> Vec<Marking> {
        self.markings_with(Status::Closed)
    }

    fn markings_with(&self, status: Status) -> Vec<Marking> {
        let mut v: Vec<Marking> = self
            .states
            .iter()
            .filter(|r| r.status == status)
            .map(|r| r.marking.clone())
            .collect();
        v.sort();
        v
    }

    /// Cost-so-far map as sorted `(marking, g)` pairs.
    pub fn g_snapshot(&self) -> Vec<(Marking, u32)> {
        let mut v: Vec<(Marking, u32)> = self
            .states
            .iter()
            .map(|r| (r.marking.clone(), r.g))
            .collect();
        v.sort();
        v
    }

    /// Checks the structural invariants: open ∩ closed = ∅ (by
    /// construction), every state except the start has a predecessor, and
    /// predecessor chains end at the start.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.states[self.start as usize].g != 0 {
            return Err("g(start) != 0".into());
        }
        for (id, r) in self.states.iter().enumerate() {
            let id = id as StateId;
            if id != self.start && r.pred.is_none() {
                return Err(format!("state {id} has no predecessor"));
            }
            let mut cur = id;
            let mut steps = 0;
            while let Some((_, p)) = self.states[cur as usize].pred {
                cur = p;
                steps += 1;
                if steps > self.states.len() {
                    return Err(format!("predecessor cycle through state {id}"));
                }
            }
            if cur != self.start {
                return Err(format!("chain of {id} does not end at start"));
            }
        }
        Ok(())
    }

    /// Rough memory footprint in bytes.
    pub fn byte_estimate(&self) -> usize {
        let per_state = std::mem::size_of::<StateRecord>()
            + std::mem::size_of::<Marking>()
            + std::mem::size_of::<StateId>();
        self.states.len() * per_state + self.queue.len() * std::mem::size_of::<QueueEntry>()
    }

    fn insert_new(
        &mut self,
        marking: Marking,
        g: u32,
        pred: (TransitionIdx, StateId),
        h: HeuristicValue,
        target: usize,
    ) -> StateId {
        let id = self.states.len() as StateId;
        self.index.insert(marking.clone(), id);
        self.states.push(StateRecord {
            marking,
            g,
            pred: Some(pred),
            h: h.value,
            h_target: Some(target),
            status: Status::Open,
            version: 0,
        });
        self.push(id);
        id
    }
}

impl Predecessors for SearchCache {
    fn predecessor(&self, m: &Marking) -> Option<Option<(TransitionIdx, Marking)>> {
        let &id = self.index.get(m)?;
        Some(
            self.states[id as usize]
                .pred
                .map(|(t, p)| (t, self.states[p as usize].marking.clone())),
        )
    }

    fn len_hint(&self) -> usize {
        self.states.len()
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub alignment: PrefixAlignment,
    pub metrics: SearchMetrics,
    pub elapsed: Duration,
}

/// Resumes the search of `cache` on the (possibly extended) product net.
///
/// The cache must be fresh or the unmodified result of the previous call for
/// the same case, made before exactly one extension. The goal marking is
/// returned without being closed and stays in the open set.
pub fn astar_inc(
    spn: &SyncProductNet,
    cache: &mut SearchCache,
    mode: HeuristicMode,
    refresh: Refresh,
) -> Result<SearchOutcome, SearchError> {
    let started = Instant::now();
    let target = spn.trace_len();
    let mut metrics = SearchMetrics::default();

    if refresh == Refresh::Eager {
        let mut outdated: Vec<(Marking, StateId)> = cache
            .states
            .iter()
            .enumerate()
            .filter(|(_, r)| r.status == Status::Open && r.h_target != Some(target))
            .map(|(id, r)| (r.marking.clone(), id as StateId))
            .collect();
        outdated.sort();
        let values = par::map(&outdated, |(m, _)| estimate(spn, m, mode));
        for ((_, id), h) in outdated.iter().zip(values) {
            let h = h?;
            let rec = &mut cache.states[*id as usize];
            rec.h = h.value;
            rec.h_target = Some(target);
            rec.version += 1;
            metrics.heuristic_recomputations += 1;
            metrics.lps_solved += h.solved as u64;
            cache.push(*id);
        }
    }

    let mut pops: HashMap<StateId, u32> = HashMap::new();
    loop {
        let Some(entry) = cache.queue.pop() else {
            return Err(SearchError::Exhausted);
        };
        let id = entry.id;
        let rec = &cache.states[id as usize];
        if rec.version != entry.version || rec.status != Status::Open {
            continue;
        }
        metrics.pops += 1;
        let count = pops.entry(id).or_insert(0);
        *count += 1;
        metrics.max_pops_per_state = metrics.max_pops_per_state.max(*count);

        if rec.h_target != Some(target) {
            // outdated heuristic (lazy refresh): recompute, requeue, skip
            let h = estimate(spn, &rec.marking, mode)?;
            let rec = &mut cache.states[id as usize];
            rec.h = h.value;
            rec.h_target = Some(target);
            rec.version += 1;
            metrics.heuristic_recomputations += 1;
            metrics.lps_solved += h.solved as u64;
            cache.push(id);
            continue;
        }

        let marking = rec.marking.clone();
        if spn.is_goal(&marking) {
            // stays open: needs a live queue entry for the next call
            cache.push(id);
            let start = cache.start_marking().clone();
            let alignment = reconstruct(spn, cache, &marking, &start)?;
            if &start == spn.initial_marking()
                && cfg!(debug_assertions)
                && !verify_prefix_alignment(&alignment, spn.trace(), spn.model())
            {
                return Err(SearchError::InvalidAlignment);
            }
            return Ok(SearchOutcome {
                alignment,
                metrics,
                elapsed: started.elapsed(),
            });
        }

        let g = rec.g;
        cache.states[id as usize].status = Status::Closed;
        metrics.visited += 1;

        for t in spn.successors(&marking) {
            let next = spn.fire(&marking, t).expect("successor is enabled");
            let ng = g + spn_move_cost(spn, t);
            match cache.index.get(&next) {
                Some(&nid) => {
                    let nrec = &mut cache.states[nid as usize];
                    if ng < nrec.g {
                        if nrec.status == Status::Closed {
                            nrec.status = Status::Open;
                            metrics.reopened += 1;
                            pops.remove(&nid);
                        }
                        nrec.g = ng;
                        nrec.pred = Some((t, id));
                        nrec.version += 1;
                        cache.push(nid);
                    }
                }
                None => {
                    let h = estimate(spn, &next, mode)?;
                    metrics.lps_solved += h.solved as u64;
                    metrics.queued += 1;
                    cache.insert_new(next, ng, (t, id), h, target);
                }
            }
        }
    }
}

/// A* from `start` with a fresh cache.
pub fn astar_scratch(
    spn: &SyncProductNet,
    mode: HeuristicMode,
    start: &Marking,
) -> Result<SearchOutcome, SearchError> {
    let mut cache = SearchCache::new(start.clone());
    astar_inc(spn, &mut cache, mode, Refresh::Eager)
}

pub const ORACLE_BOUND: usize = 1_000_000;

#[derive(Debug, Clone)]
pub struct OracleResult {
    /// Cheapest cost from the start to any goal marking.
    pub cost: u32,
    /// Settled distances from the start.
    pub distances: HashMap<Marking, u32>,
}

/// Uniform-cost search from `start` to the nearest goal marking.
pub fn dijkstra_oracle(spn: &SyncProductNet, start: &Marking) -> Result<OracleResult, SearchError> {
    dijkstra_oracle_bounded(spn, start, ORACLE_BOUND)
}

pub fn dijkstra_oracle_bounded(
    spn: &SyncProductNet,
    start: &Marking,
    bound: usize,
) -> Result<OracleResult, SearchError> {
    // costs are 0 or 1: a deque-based 0-1 BFS is exact uniform-cost search
    let mut dist: HashMap<Marking, u32> = HashMap::from([(start.clone(), 0)]);
    let mut settled: HashMap<Marking, u32> = HashMap::new();
    let mut deque = VecDeque::from([(start.clone(), 0u32)]);
    while let Some((m, d)) = deque.pop_front() {
        if settled.contains_key(&m) || dist.get(&m).is_some_and(|&best| best < d) {
            continue;
        }
        settled.insert(m.clone(), d);
        if spn.is_goal(&m) {
            return Ok(OracleResult {
                cost: d,
                distances: settled,
            });
        }
        for t in spn.successors(&m) {
            let next = spn.fire(&m, t).expect("enabled");
            let c = spn_move_cost(spn, t);
            let nd = d + c;
            let better = match dist.entry(next.clone()) {
                MapEntry::Occupied(mut e) => {
                    if nd < *e.get() {
                        e.insert(nd);
                        true
                    } else {
                        false
                    }
                }
                MapEntry::Vacant(e) => {
                    e.insert(nd);
                    true
                }
            };
            if dist.len() > bound {
                return Err(SearchError::TooLarge(bound));
            }
            if better {
                if c == 0 {
                    deque.push_front((next, nd));
                } else {
                    deque.push_back((next, nd));
                }
            }
        }
    }
    Err(SearchError::Exhausted)
}

/// Explicit reachable state space of a product net.
#[derive(Debug, Clone)]
pub struct StateSpace {
    pub markings: Vec<Marking>,
    pub index: HashMap<Marking, usize>,
    /// `(from, transition, to)`
    pub edges: Vec<(usize, TransitionIdx, usize)>,
}

impl StateSpace {
    pub fn explore(spn: &SyncProductNet, start: &Marking, bound: usize) -> Result<Self, SearchError> {
        let mut markings = vec![start.clone()];
        let mut index = HashMap::from([(start.clone(), 0usize)]);
        let mut edges = Vec::new();
        let mut i = 0;
        while i < markings.len() {
            let m = markings[i].clone();
            for t in spn.successors(&m) {
                let next = spn.fire(&m, t).expect("enabled");
                let j = match index.get(&next) {
                    Some(&j) => j,
                    None => {
                        if markings.len() >= bound {
                            return Err(SearchError::TooLarge(bound));
                        }
                        index.insert(next.clone(), markings.len());
                        markings.push(next);
                        markings.len() - 1
                    }
                };
                edges.push((i, t, j));
            }
            i += 1;
        }
        Ok(StateSpace {
            markings,
            index,
            edges,
        })
    }

    /// Exact cheapest cost from every marking to the nearest goal marking of
    /// `spn` (`None` when no goal is reachable), by backward 0-1 BFS.
    pub fn distances_to_goal(&self, spn: &SyncProductNet) -> Vec<Option<u32>> {
        let n = self.markings.len();
        let mut rev: Vec<Vec<(usize, u32)>> = vec![Vec::new(); n];
        for &(a, t, b) in &self.edges {
            rev[b].push((a, spn_move_cost(spn, t)));
        }
        let mut dist: Vec<Option<u32>> = vec![None; n];
        let mut deque = VecDeque::new();
        for (i, m) in self.markings.iter().enumerate() {
            if spn.is_goal(m) {
                dist[i] = Some(0);
                deque.push_back((i, 0));
            }
        }
        let mut done = vec![false; n];
        while let Some((i, d)) = deque.pop_front() {
            if done[i] {
                continue;
            }
            done[i] = true;
            for &(j, c) in &rev[i] {
                let nd = d + c;
                if dist[j].is_none_or(|old| nd < old) {
                    dist[j] = Some(nd);
                    if c == 0 {
                        deque.push_front((j, nd));
                    } else {
                        deque.push_back((j, nd));
                    }
                }
            }
        }
        dist
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assets;
    use crate::petri::Activity;
    use std::sync::Arc;

    fn acts(s: &str) -> Vec<Activity> {
        s.split(',').map(|x| Activity::new(x).unwrap()).collect()
    }

    fn n1_spn(trace: &str) -> SyncProductNet {
        SyncProductNet::build(Arc::new(assets::n1()), &acts(trace)).unwrap()
    }

    #[test]
    fn incremental_costs_on_running_example() {
        for refresh in [Refresh::Eager, Refresh::Lazy] {
            let mut spn = n1_spn("a");
            let mut cache = SearchCache::new(spn.initial_marking().clone());
            let mut costs = vec![];
            let out = astar_inc(&spn, &mut cache, HeuristicMode::Ilp, refresh).unwrap();
            costs.push(out.alignment.total_cost);
            for a in ["b", "c"] {
                spn.extend(Activity::new(a).unwrap());
                let out = astar_inc(&spn, &mut cache, HeuristicMode::Ilp, refresh).unwrap();
                costs.push(out.alignment.total_cost);
                assert!(verify_prefix_alignment(&out.alignment, spn.trace(), spn.model()));
            }
            assert_eq!(costs, [0, 0, 1]);
            cache.check_invariants().unwrap();
        }
    }

    #[test]
    fn single_c_uses_silent_move() {
        let spn = n1_spn("c");
        let out = astar_scratch(&spn, HeuristicMode::Ilp, spn.initial_marking()).unwrap();
        assert_eq!(out.alignment.total_cost, 0);
        let ids: Vec<&str> = out
            .alignment
            .moves
            .iter()
            .map(|m| spn.transition(m.transition).id.as_str())
            .collect();
        assert_eq!(ids, ["model:t2", "sync:tt1|t4"]);
    }

    #[test]
    fn scratch_and_oracle_on_abc() {
        let spn = n1_spn("a,b,c");
        for mode in [HeuristicMode::Lp, HeuristicMode::Ilp, HeuristicMode::Zero] {
            let out = astar_scratch(&spn, mode, spn.initial_marking()).unwrap();
            assert_eq!(out.alignment.total_cost, 1);
        }
        assert_eq!(dijkstra_oracle(&spn, spn.initial_marking()).unwrap().cost, 1);
    }

    #[test]
    fn starting_at_a_goal_is_free() {
        let spn = n1_spn("a");
        let goal = spn.fire(spn.initial_marking(), spn.num_transitions() - 1).unwrap();
        assert!(spn.is_goal(&goal));
        let out = astar_scratch(&spn, HeuristicMode::Ilp, &goal).unwrap();
        assert!(out.alignment.moves.is_empty());
        assert_eq!(out.alignment.total_cost, 0);
        assert_eq!(dijkstra_oracle(&spn, &goal).unwrap().cost, 0);
    }

    #[test]
    fn goal_stays_open_and_g_survives_extension() {
        let mut spn = n1_spn("a");
        let mut cache = SearchCache::new(spn.initial_marking().clone());
        let out = astar_inc(&spn, &mut cache, HeuristicMode::Ilp, Refresh::Lazy).unwrap();
        assert_eq!(cache.status(&out.alignment.end_marking), Some(Status::Open));
        let before = cache.g_snapshot();
        spn.extend(Activity::new("b").unwrap());
        assert_eq!(before, cache.g_snapshot());
    }

    #[test]
    fn lazy_refreshes_no_more_than_eager() {
        let trace = acts("a,b,c");
        let mut totals = vec![];
        for refresh in [Refresh::Eager, Refresh::Lazy] {
            let mut spn = SyncProductNet::build(Arc::new(assets::n1()), &trace[..1]).unwrap();
            let mut cache = SearchCache::new(spn.initial_marking().clone());
            let mut m = SearchMetrics::default();
            for (i, a) in trace.iter().enumerate() {
                if i > 0 {
                    spn.extend(a.clone());
                }
                let out = astar_inc(&spn, &mut cache, HeuristicMode::Ilp, refresh).unwrap();
                m.merge(&out.metrics);
                let limit = if refresh == Refresh::Eager { 1 } else { 2 };
                assert!(out.metrics.max_pops_per_state <= limit);
            }
            totals.push(m);
        }
        assert!(totals[1].heuristic_recomputations <= totals[0].heuristic_recomputations);
    }

    #[test]
    fn lazy_refresh_reopens_after_estimate_drops() {
        let trace = acts("c,f,f,b");
        let mut reopened = vec![];
        for refresh in [Refresh::Lazy, Refresh::Eager] {
            let mut spn =
                SyncProductNet::build(Arc::new(assets::parallel_tau()), &trace[..1]).unwrap();
            let mut cache = SearchCache::new(spn.initial_marking().clone());
            let mut total = SearchMetrics::default();
            let mut costs = vec![];
            for (i, a) in trace.iter().enumerate() {
                if i > 0 {
                    spn.extend(a.clone());
                }
                let out = astar_inc(&spn, &mut cache, HeuristicMode::Ilp, refresh).unwrap();
                total.merge(&out.metrics);
                costs.push(out.alignment.total_cost);
            }
            assert_eq!(costs, [1, 2, 3, 3], "{refresh:?}");
            reopened.push(total.reopened);
        }
        assert!(reopened[0] > 0);
        assert_eq!(reopened[1], 0);
    }

    #[test]
    fn oracle_bound_is_enforced() {
        let spn = n1_spn("a,b,c");
        assert_eq!(
            dijkstra_oracle_bounded(&spn, spn.initial_marking(), 2).unwrap_err(),
            SearchError::TooLarge(2)
        );
    }

    #[test]
    fn backward_distances_match_forward_oracle() {
        let spn = SyncProductNet::build(Arc::new(assets::choice_loop()), &acts("a,c,x,d")).unwrap();
        let space = StateSpace::explore(&spn, spn.initial_marking(), 10_000).unwrap();
        let dist = space.distances_to_goal(&spn);
        for (i, m) in space.markings.iter().enumerate() {
            let fwd = dijkstra_oracle(&spn, m).map(|r| r.cost).ok();
            assert_eq!(fwd, dist[i]);
        }
    }
}
