//! Windowed baseline: partially revert the previous prefix-alignment, then
//! search from scratch starting at the marking the kept moves reach.
//!
//! Only an unbounded window is guaranteed optimal. Smaller windows commit to
//! earlier decisions and can report deviations that a full search would not.

use std::fmt;
use std::str::FromStr;

use crate::alignment::{verify_prefix_alignment, PrefixAlignment};
use crate::heuristic::HeuristicMode;
use crate::petri::{Marking, Net};
use crate::search::{astar_scratch, SearchError, SearchOutcome};
use crate::spn::SyncProductNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Window {
    /// Number of trace events reverted before each search (≥ 1).
    Finite(usize),
    Infinite,
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Window::Finite(w) => write!(f, "{w}"),
            Window::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Window {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inf" | "∞" => Ok(Window::Infinite),
            _ => match s.parse::<usize>() {
                Ok(0) => Err("window must be at least 1".into()),
                Ok(w) => Ok(Window::Finite(w)),
                Err(_) => Err(format!("bad window `{s}`")),
            },
        }
    }
}

/// Per-case state: the last emitted prefix-alignment.
#[derive(Debug, Clone)]
pub struct OccState {
    pub window: Window,
    pub alignment: Option<PrefixAlignment>,
}

impl OccState {
    pub fn new(window: Window) -> Self {
        OccState {
            window,
            alignment: None,
        }
    }
}

/// Drops trailing moves until `min(w, events aligned)` log or synchronous
/// moves are gone, then any model moves left dangling at the cut. Returns
/// the kept prefix, whose end marking is the restart marking on `spn`.
pub fn revert_alignment(
    spn: &SyncProductNet,
    al: &PrefixAlignment,
    window: Window,
) -> PrefixAlignment {
    let start = spn.initial_marking().clone();
    let w = match window {
        Window::Infinite => return PrefixAlignment::empty(start),
        Window::Finite(w) => w,
    };
    let mut moves = al.moves.clone();
    let mut to_remove = w.min(al.events_aligned());
    while to_remove > 0 {
        let mv = moves.pop().expect("enough event moves");
        if mv.kind.consumes_event() {
            to_remove -= 1;
        }
    }
    while moves.last().is_some_and(|m| !m.kind.consumes_event()) {
        moves.pop();
    }
    let mut marking: Marking = start;
    for mv in &moves {
        marking = spn
            .fire(&marking, mv.transition)
            .expect("kept moves replay on the extended product");
    }
    PrefixAlignment {
        total_cost: moves.iter().map(|m| m.cost).sum(),
        moves,
        end_marking: marking,
    }
}

/// Handles one event. `spn` must already contain it.
pub fn occ_process_event(
    spn: &SyncProductNet,
    state: &mut OccState,
    mode: HeuristicMode,
) -> Result<SearchOutcome, SearchError> {
    let kept = match &state.alignment {
        Some(al) => revert_alignment(spn, al, state.window),
        None => PrefixAlignment::empty(spn.initial_marking().clone()),
    };
    let out = astar_scratch(spn, mode, &kept.end_marking)?;
    let alignment = kept.concat(out.alignment);
    if cfg!(debug_assertions) && !verify_prefix_alignment(&alignment, spn.trace(), spn.model()) {
        return Err(SearchError::InvalidAlignment);
    }
    state.alignment = Some(alignment.clone());
    Ok(SearchOutcome {
        alignment,
        metrics: out.metrics,
        elapsed: out.elapsed,
    })
}
