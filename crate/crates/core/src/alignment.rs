//! Alignment moves, the standard cost function and prefix-alignment
//! reconstruction from predecessor links.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::petri::{Activity, Label, Marking, Net, TransitionIdx, WorkflowNet};
use crate::spn::{MoveKind, SyncProductNet};

/// Standard cost: synchronous and silent model moves are free, log moves and
/// visible model moves cost 1.
pub fn move_cost(model: &WorkflowNet, kind: MoveKind) -> u32 {
    match kind {
        MoveKind::Sync { .. } => 0,
        MoveKind::Log { .. } => 1,
        MoveKind::Model { transition } => match model.label(transition) {
            Label::Silent => 0,
            Label::Visible(_) => 1,
        },
    }
}

pub fn spn_move_cost(spn: &SyncProductNet, t: TransitionIdx) -> u32 {
    move_cost(spn.model(), spn.transition(t).kind)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Move {
    /// SPN transition index.
    pub transition: TransitionIdx,
    pub kind: MoveKind,
    pub cost: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixAlignment {
    pub moves: Vec<Move>,
    pub total_cost: u32,
    pub end_marking: Marking,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AlignmentError {
    #[error("predecessor chain broken: marking has no predecessor entry")]
    BrokenChain,
    #[error("predecessor chain does not terminate")]
    Cyclic,
}

/// Source of predecessor links. `None` means the marking is unknown,
/// `Some(None)` marks a chain start.
pub trait Predecessors {
    fn predecessor(&self, m: &Marking) -> Option<Option<(TransitionIdx, Marking)>>;
    fn len_hint(&self) -> usize;
}

impl Predecessors for HashMap<Marking, Option<(TransitionIdx, Marking)>> {
    fn predecessor(&self, m: &Marking) -> Option<Option<(TransitionIdx, Marking)>> {
        self.get(m).cloned()
    }
    fn len_hint(&self) -> usize {
        self.len()
    }
}

/// Walks predecessor links from `goal` back to `initial`.
pub fn reconstruct<P: Predecessors + ?Sized>(
    spn: &SyncProductNet,
    preds: &P,
    goal: &Marking,
    initial: &Marking,
) -> Result<PrefixAlignment, AlignmentError> {
    let mut rev = Vec::new();
    let mut cur = goal.clone();
    let limit = preds.len_hint() + 1;
    while &cur != initial {
        if rev.len() > limit {
            return Err(AlignmentError::Cyclic);
        }
        match preds.predecessor(&cur) {
            Some(Some((t, prev))) => {
                rev.push(t);
                cur = prev;
            }
            Some(None) | None => return Err(AlignmentError::BrokenChain),
        }
    }
    let moves: Vec<Move> = rev
        .into_iter()
        .rev()
        .map(|t| Move {
            transition: t,
            kind: spn.transition(t).kind,
            cost: spn_move_cost(spn, t),
        })
        .collect();
    Ok(PrefixAlignment {
        total_cost: moves.iter().map(|m| m.cost).sum(),
        moves,
        end_marking: goal.clone(),
    })
}

impl PrefixAlignment {
    pub fn empty(at: Marking) -> Self {
        PrefixAlignment {
            moves: Vec::new(),
            total_cost: 0,
            end_marking: at,
        }
    }

    /// Appends `suffix`, which must start where `self` ends.
    pub fn concat(mut self, suffix: PrefixAlignment) -> Self {
        self.total_cost += suffix.total_cost;
        self.moves.extend(suffix.moves);
        self.end_marking = suffix.end_marking;
        self
    }

    pub fn events_aligned(&self) -> usize {
        self.moves.iter().filter(|m| m.kind.consumes_event()).count()
    }

    /// Model transitions of model and synchronous moves, in order.
    pub fn model_projection(&self) -> Vec<TransitionIdx> {
        self.moves
            .iter()
            .filter_map(|m| m.kind.model_transition())
            .collect()
    }

    pub fn records(&self, model: &WorkflowNet, trace: &[Activity]) -> Vec<MoveRecord> {
        self.moves
            .iter()
            .map(|m| {
                let activity = m.kind.position().map(|p| trace[p - 1].to_string());
                let transition = m
                    .kind
                    .model_transition()
                    .map(|t| model.transition(t).id.clone());
                let kind = match m.kind {
                    MoveKind::Log { .. } => "log",
                    MoveKind::Sync { .. } => "sync",
                    MoveKind::Model { transition } => {
                        if model.label(transition).is_silent() {
                            "tau"
                        } else {
                            "model"
                        }
                    }
                };
                MoveRecord {
                    kind: kind.to_string(),
                    activity,
                    transition,
                }
            })
            .collect()
    }

    /// The two-row table: observed activities on top, model transitions
    /// below, `≫` for skips.
    pub fn render_table(&self, model: &WorkflowNet, trace: &[Activity]) -> String {
        let mut top = Vec::new();
        let mut bottom = Vec::new();
        for m in &self.moves {
            top.push(match m.kind.position() {
                Some(p) => trace[p - 1].to_string(),
                None => "≫".to_string(),
            });
            bottom.push(match m.kind.model_transition() {
                Some(t) => {
                    let tr = model.transition(t);
                    match &tr.label {
                        Label::Silent => format!("{}(τ)", tr.id),
                        Label::Visible(_) => tr.id.clone(),
                    }
                }
                None => "≫".to_string(),
            });
        }
        let widths: Vec<usize> = top
            .iter()
            .zip(&bottom)
            .map(|(a, b)| a.chars().count().max(b.chars().count()))
            .collect();
        let row = |cells: &[String]| {
            let mut s = String::from("|");
            for (c, w) in cells.iter().zip(&widths) {
                let pad = w - c.chars().count();
                let _ = write!(s, " {c}{} |", " ".repeat(pad));
            }
            s
        };
        let mut out = String::new();
        let _ = writeln!(out, "{}", row(&top));
        let _ = writeln!(out, "{}", row(&bottom));
        let _ = writeln!(out, "cost: {}", self.total_cost);
        out
    }
}

/// Machine form of one move.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveRecord {
    pub kind: String,
    pub activity: Option<String>,
    pub transition: Option<String>,
}

/// Checks the two projections and per-move type consistency.
pub fn verify_prefix_alignment(al: &PrefixAlignment, trace: &[Activity], model: &WorkflowNet) -> bool {
    let mut next_pos = 1;
    let mut cost = 0;
    for m in &al.moves {
        if m.cost != move_cost(model, m.kind) {
            return false;
        }
        cost += m.cost;
        match m.kind {
            MoveKind::Log { position } => {
                if position != next_pos || position > trace.len() {
                    return false;
                }
                next_pos += 1;
            }
            MoveKind::Sync {
                position,
                transition,
            } => {
                if position != next_pos || position > trace.len() {
                    return false;
                }
                if transition >= model.num_transitions()
                    || model.label(transition).activity() != Some(&trace[position - 1])
                {
                    return false;
                }
                next_pos += 1;
            }
            MoveKind::Model { transition } => {
                if transition >= model.num_transitions() {
                    return false;
                }
            }
        }
    }
    if next_pos != trace.len() + 1 || cost != al.total_cost {
        return false;
    }
    model
        .fire_sequence(model.initial_marking(), &al.model_projection())
        .is_ok()
}
