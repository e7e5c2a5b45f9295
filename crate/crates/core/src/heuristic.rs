//! State-equation heuristic for prefix-alignments.
//!
//! For a marking `m` of the product net the problem is
//!
//! ```text
//! min  Σ c(t)·x_t
//! s.t. m(p) + Σ_{t∈•p} x_t − Σ_{t∈p•} x_t  = [p = p'_n]   for trace places p
//!      m(p) + Σ_{t∈•p} x_t − Σ_{t∈p•} x_t ≥ 0             for model places p
//!      x ≥ 0  (integer in ILP mode)
//! ```
//!
//! Only the last trace place is targeted; the model part may end anywhere,
//! which is what makes this a prefix relaxation.

use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use num_traits::Zero;
use thiserror::Error;

use crate::alignment::spn_move_cost;
use crate::lp::{self, Constraint, IlpOutcome, LinearProgram, LpError, LpOutcome, Relation};
use crate::petri::{Marking, Net};
use crate::spn::{SpnPlace, SyncProductNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum HeuristicMode {
    Lp,
    #[default]
    Ilp,
    Zero,
}

impl fmt::Display for HeuristicMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeuristicMode::Lp => "lp",
            HeuristicMode::Ilp => "ilp",
            HeuristicMode::Zero => "zero",
        })
    }
}

impl FromStr for HeuristicMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lp" => Ok(HeuristicMode::Lp),
            "ilp" => Ok(HeuristicMode::Ilp),
            "zero" => Ok(HeuristicMode::Zero),
            other => Err(format!("unknown heuristic `{other}` (expected lp, ilp or zero)")),
        }
    }
}

/// Estimated remaining cost. `None` is +∞ (no solution).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeuristicValue {
    pub value: Option<Rational64>,
    pub mode: HeuristicMode,
    /// Whether a linear program was actually solved for this value.
    pub solved: bool,
}

impl HeuristicValue {
    pub fn is_infeasible(&self) -> bool {
        self.value.is_none()
    }

    pub fn finite(v: i64, mode: HeuristicMode) -> Self {
        HeuristicValue {
            value: Some(Rational64::from_integer(v)),
            mode,
            solved: false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeuristicError {
    #[error("marking refers to place {0}, which the product net does not have")]
    UnknownPlace(u32),
    #[error(transparent)]
    Solver(#[from] LpError),
}

/// The heuristic's linear program for one marking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeuristicProblem {
    pub program: LinearProgram,
    pub trace_rows: usize,
    pub model_rows: usize,
}

pub fn build_problem(spn: &SyncProductNet, m: &Marking) -> Result<HeuristicProblem, HeuristicError> {
    let np = spn.num_places();
    if let Some(p) = m.places().find(|&p| p as usize >= np) {
        return Err(HeuristicError::UnknownPlace(p));
    }
    let target = spn.last_trace_place();
    let nt = spn.num_transitions();
    let objective = (0..nt).map(|t| spn_move_cost(spn, t) as i64).collect();

    let mut trace_rows = Vec::new();
    let mut model_rows = Vec::new();
    for p in 0..np as u32 {
        let mut coeffs: Vec<(usize, i64)> = Vec::new();
        for &t in spn.producers(p) {
            coeffs.push((t, 1));
        }
        for &t in spn.consumers(p) {
            match coeffs.iter_mut().find(|(j, _)| *j == t) {
                Some(entry) => entry.1 -= 1,
                None => coeffs.push((t, -1)),
            }
        }
        coeffs.retain(|&(_, a)| a != 0);
        coeffs.sort_unstable();
        let have = m.get(p) as i64;
        match spn.places()[p as usize] {
            SpnPlace::Trace(_) => {
                let want = i64::from(p == target);
                trace_rows.push(Constraint {
                    coeffs,
                    relation: Relation::Eq,
                    rhs: want - have,
                });
            }
            SpnPlace::Model(_) => model_rows.push(Constraint {
                coeffs,
                relation: Relation::Ge,
                rhs: -have,
            }),
        }
    }
    let (tr, mr) = (trace_rows.len(), model_rows.len());
    trace_rows.extend(model_rows);
    Ok(HeuristicProblem {
        program: LinearProgram {
            num_vars: nt,
            objective,
            constraints: trace_rows,
        },
        trace_rows: tr,
        model_rows: mr,
    })
}

/// Heuristic value of `m` for the product's current last trace place.
pub fn estimate(
    spn: &SyncProductNet,
    m: &Marking,
    mode: HeuristicMode,
) -> Result<HeuristicValue, HeuristicError> {
    if mode == HeuristicMode::Zero {
        return Ok(HeuristicValue::finite(0, mode));
    }
    if spn.is_goal(m) {
        // x = 0 is feasible and the objective is non-negative
        return Ok(HeuristicValue::finite(0, mode));
    }
    let problem = build_problem(spn, m)?;
    let value = match mode {
        HeuristicMode::Lp => match lp::solve_lp(&problem.program)? {
            LpOutcome::Optimal { value, .. } => Some(value),
            LpOutcome::Infeasible => None,
        },
        HeuristicMode::Ilp => match lp::solve_ilp(&problem.program)? {
            IlpOutcome::Optimal { value, .. } => Some(Rational64::from_integer(value)),
            IlpOutcome::Infeasible { .. } => None,
        },
        HeuristicMode::Zero => unreachable!(),
    };
    debug_assert!(value.is_none_or(|v| v >= Rational64::zero()));
    Ok(HeuristicValue {
        value,
        mode,
        solved: true,
    })
}
