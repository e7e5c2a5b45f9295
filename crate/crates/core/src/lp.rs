//! Small exact linear and integer programming.
//!
//! Dense two-phase simplex with Bland's rule over exact rationals. The solver
//! first runs on `Ratio<i64>` with checked arithmetic and repeats the solve on
//! arbitrary-precision rationals if any intermediate value overflows.
//! Integer programs are solved by best-bound branch-and-bound on top of it.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use num_bigint::BigInt;
use num_rational::{BigRational, Rational64};
use num_traits::{CheckedAdd, CheckedDiv, CheckedMul, CheckedSub, One, Signed, ToPrimitive, Zero};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    /// Sparse `(variable, coefficient)` pairs.
    pub coeffs: Vec<(usize, i64)>,
    pub relation: Relation,
    pub rhs: i64,
}

/// `min objective·x` subject to the constraints and `x ≥ 0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearProgram {
    pub num_vars: usize,
    pub objective: Vec<i64>,
    pub constraints: Vec<Constraint>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LpOutcome {
    Optimal {
        value: Rational64,
        solution: Vec<Rational64>,
    },
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IlpOutcome {
    Optimal {
        value: i64,
        solution: Vec<i64>,
        /// LP relaxations solved during branch-and-bound.
        relaxations: usize,
    },
    Infeasible {
        relaxations: usize,
    },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LpError {
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("branch-and-bound exceeded depth limit {0}")]
    DepthExhausted(usize),
    #[error("optimal value does not fit a 64-bit rational")]
    Overflow,
    #[error("variable index {0} out of range")]
    BadVariable(usize),
}

trait Exact: Clone + Zero + One + PartialOrd + Signed {
    fn from_i64(v: i64) -> Self;
    fn try_add(&self, o: &Self) -> Option<Self>;
    fn try_sub(&self, o: &Self) -> Option<Self>;
    fn try_mul(&self, o: &Self) -> Option<Self>;
    fn try_div(&self, o: &Self) -> Option<Self>;
    fn to_rational64(&self) -> Option<Rational64>;
}

impl Exact for Rational64 {
    fn from_i64(v: i64) -> Self {
        Rational64::from_integer(v)
    }
    fn try_add(&self, o: &Self) -> Option<Self> {
        self.checked_add(o)
    }
    fn try_sub(&self, o: &Self) -> Option<Self> {
        self.checked_sub(o)
    }
    fn try_mul(&self, o: &Self) -> Option<Self> {
        self.checked_mul(o)
    }
    fn try_div(&self, o: &Self) -> Option<Self> {
        self.checked_div(o)
    }
    fn to_rational64(&self) -> Option<Rational64> {
        Some(*self)
    }
}

impl Exact for BigRational {
    fn from_i64(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn try_add(&self, o: &Self) -> Option<Self> {
        Some(self + o)
    }
    fn try_sub(&self, o: &Self) -> Option<Self> {
        Some(self - o)
    }
    fn try_mul(&self, o: &Self) -> Option<Self> {
        Some(self * o)
    }
    fn try_div(&self, o: &Self) -> Option<Self> {
        if o.is_zero() {
            None
        } else {
            Some(self / o)
        }
    }
    fn to_rational64(&self) -> Option<Rational64> {
        Some(Rational64::new(self.numer().to_i64()?, self.denom().to_i64()?))
    }
}

struct Overflowed;

enum Solved<T> {
    Optimal(T, Vec<T>),
    Infeasible,
    Unbounded,
}

struct Tableau<T> {
    /// rows × (cols + 1); last column is the right-hand side
    rows: Vec<Vec<T>>,
    basis: Vec<usize>,
    cols: usize,
}

impl<T: Exact> Tableau<T> {
    fn pivot(&mut self, r: usize, c: usize) -> Result<(), Overflowed> {
        let piv = self.rows[r][c].clone();
        if !piv.is_one() {
            for v in self.rows[r].iter_mut() {
                if !v.is_zero() {
                    *v = v.try_div(&piv).ok_or(Overflowed)?;
                }
            }
        }
        let prow = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let factor = row[c].clone();
            for (v, p) in row.iter_mut().zip(&prow) {
                if !p.is_zero() {
                    *v = v.try_sub(&p.try_mul(&factor).ok_or(Overflowed)?).ok_or(Overflowed)?;
                }
            }
        }
        self.basis[r] = c;
        Ok(())
    }

    /// Reduced costs of `cost` under the current basis, plus the objective
    /// value of the current basic solution.
    fn reduced(&self, cost: &[T]) -> Result<(Vec<T>, T), Overflowed> {
        let mut red: Vec<T> = cost.to_vec();
        let mut obj = T::zero();
        for (r, &b) in self.basis.iter().enumerate() {
            let cb = &cost[b];
            if cb.is_zero() {
                continue;
            }
            for (j, v) in red.iter_mut().enumerate() {
                let a = &self.rows[r][j];
                if !a.is_zero() {
                    *v = v.try_sub(&cb.try_mul(a).ok_or(Overflowed)?).ok_or(Overflowed)?;
                }
            }
            obj = obj
                .try_add(&cb.try_mul(&self.rows[r][self.cols]).ok_or(Overflowed)?)
                .ok_or(Overflowed)?;
        }
        Ok((red, obj))
    }

    /// Primal simplex minimizing `cost` with Bland's rule. Columns with
    /// `allowed[j] == false` never enter.
    fn optimize(&mut self, cost: &[T], allowed: &[bool]) -> Result<Option<T>, Overflowed> {
        loop {
            let (red, obj) = self.reduced(cost)?;
            let entering = (0..self.cols).find(|&j| allowed[j] && red[j].is_negative());
            let Some(c) = entering else {
                return Ok(Some(obj));
            };
            let mut best: Option<(usize, T)> = None;
            for r in 0..self.rows.len() {
                let a = &self.rows[r][c];
                if !a.is_positive() {
                    continue;
                }
                let ratio = self.rows[r][self.cols].try_div(a).ok_or(Overflowed)?;
                let better = match &best {
                    None => true,
                    Some((br, bv)) => match ratio.partial_cmp(bv) {
                        Some(Ordering::Less) => true,
                        Some(Ordering::Equal) => self.basis[r] < self.basis[*br],
                        _ => false,
                    },
                };
                if better {
                    best = Some((r, ratio));
                }
            }
            match best {
                None => return Ok(None),
                Some((r, _)) => self.pivot(r, c)?,
            }
        }
    }
}

fn simplex<T: Exact>(lp: &LinearProgram) -> Result<Solved<T>, Overflowed> {
    let n = lp.num_vars;
    let m = lp.constraints.len();
    // column layout: structural | slack/surplus | artificial
    let n_slack = lp
        .constraints
        .iter()
        .filter(|c| c.relation != Relation::Eq)
        .count();
    let mut rows: Vec<Vec<T>> = Vec::with_capacity(m);
    let mut needs_artificial = Vec::with_capacity(m);
    let mut slack_col = Vec::with_capacity(m);
    let mut next_slack = n;
    for c in &lp.constraints {
        let flip = c.rhs < 0;
        let sign = if flip { -1 } else { 1 };
        let mut row = vec![T::zero(); n + n_slack];
        for &(j, a) in &c.coeffs {
            row[j] = row[j].try_add(&T::from_i64(sign * a)).ok_or(Overflowed)?;
        }
        let mut slack = None;
        match c.relation {
            Relation::Eq => needs_artificial.push(true),
            Relation::Le | Relation::Ge => {
                let s = if c.relation == Relation::Le { 1 } else { -1 } * sign;
                row[next_slack] = T::from_i64(s);
                slack = Some(next_slack);
                // a +1 slack on a non-negative right-hand side is a valid start
                needs_artificial.push(s < 0);
                next_slack += 1;
            }
        }
        slack_col.push(slack);
        row.push(T::from_i64(sign * c.rhs));
        rows.push(row);
    }
    let n_art = needs_artificial.iter().filter(|&&a| a).count();
    let cols = n + n_slack + n_art;
    let mut basis = Vec::with_capacity(m);
    let mut art = n + n_slack;
    for (r, row) in rows.iter_mut().enumerate() {
        let rhs = row.pop().expect("rhs");
        row.resize(cols, T::zero());
        if needs_artificial[r] {
            row[art] = T::one();
            basis.push(art);
            art += 1;
        } else {
            basis.push(slack_col[r].expect("slack"));
        }
        row.push(rhs);
    }
    let mut tab = Tableau { rows, basis, cols };

    if n_art > 0 {
        let mut phase1 = vec![T::zero(); cols];
        for v in phase1.iter_mut().skip(n + n_slack) {
            *v = T::one();
        }
        let allowed = vec![true; cols];
        let val = tab.optimize(&phase1, &allowed)?.expect("phase one is bounded");
        if val.is_positive() {
            return Ok(Solved::Infeasible);
        }
        // drive zero-level artificials out of the basis; drop redundant rows
        let mut r = 0;
        while r < tab.rows.len() {
            if tab.basis[r] >= n + n_slack {
                match (0..n + n_slack).find(|&j| !tab.rows[r][j].is_zero()) {
                    Some(c) => {
                        tab.pivot(r, c)?;
                        r += 1;
                    }
                    None => {
                        tab.rows.remove(r);
                        tab.basis.remove(r);
                    }
                }
            } else {
                r += 1;
            }
        }
    }

    let mut cost = vec![T::zero(); cols];
    for (j, &c) in lp.objective.iter().enumerate() {
        cost[j] = T::from_i64(c);
    }
    let allowed: Vec<bool> = (0..cols).map(|j| j < n + n_slack).collect();
    let Some(value) = tab.optimize(&cost, &allowed)? else {
        return Ok(Solved::Unbounded);
    };
    let mut x = vec![T::zero(); n];
    for (r, &b) in tab.basis.iter().enumerate() {
        if b < n {
            x[b] = tab.rows[r][tab.cols].clone();
        }
    }
    Ok(Solved::Optimal(value, x))
}

fn finish<T: Exact>(s: Solved<T>) -> Result<LpOutcome, LpError> {
    match s {
        Solved::Infeasible => Ok(LpOutcome::Infeasible),
        Solved::Unbounded => Err(LpError::Unbounded),
        Solved::Optimal(v, x) => Ok(LpOutcome::Optimal {
            value: v.to_rational64().ok_or(LpError::Overflow)?,
            solution: x
                .iter()
                .map(|v| v.to_rational64().ok_or(LpError::Overflow))
                .collect::<Result<_, _>>()?,
        }),
    }
}

fn check_vars(lp: &LinearProgram) -> Result<(), LpError> {
    for c in &lp.constraints {
        if let Some(&(j, _)) = c.coeffs.iter().find(|(j, _)| *j >= lp.num_vars) {
            return Err(LpError::BadVariable(j));
        }
    }
    if lp.objective.len() > lp.num_vars {
        return Err(LpError::BadVariable(lp.objective.len() - 1));
    }
    Ok(())
}

/// Exact optimum of the LP relaxation.
pub fn solve_lp(lp: &LinearProgram) -> Result<LpOutcome, LpError> {
    check_vars(lp)?;
    match simplex::<Rational64>(lp) {
        Ok(s) => finish(s),
        Err(Overflowed) => match simplex::<BigRational>(lp) {
            Ok(s) => finish(s),
            Err(Overflowed) => unreachable!("arbitrary precision arithmetic cannot overflow"),
        },
    }
}

#[derive(Debug, PartialEq, Eq)]
struct Node {
    bound: Rational64,
    seq: usize,
    depth: usize,
    extra: Vec<Constraint>,
    /// fractional optimum of this node's relaxation
    point: Vec<Rational64>,
}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (bound, seq)
        other
            .bound
            .cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Integer optimum by best-bound branch-and-bound, branching on the lowest
/// fractional variable. The objective has integer coefficients, so LP
/// bounds are rounded up.
pub fn solve_ilp(lp: &LinearProgram) -> Result<IlpOutcome, LpError> {
    let depth_limit = 10 * lp.num_vars.max(1);
    let mut relaxations = 0;
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    let mut incumbent: Option<(i64, Vec<i64>)> = None;

    let mut pending: Vec<(Vec<Constraint>, usize)> = vec![(Vec::new(), 0)];
    loop {
        for (extra, depth) in pending.drain(..) {
            relaxations += 1;
            let outcome = if extra.is_empty() {
                solve_lp(lp)?
            } else {
                let mut sub = lp.clone();
                sub.constraints.extend_from_slice(&extra);
                solve_lp(&sub)?
            };
            let LpOutcome::Optimal { value, solution } = outcome else {
                continue;
            };
            let bound = value.ceil();
            if matches!(&incumbent, Some((best, _)) if bound.to_integer() >= *best) {
                continue;
            }
            if solution.iter().all(|v| v.is_integer()) {
                let sol = solution.iter().map(|v| v.to_integer()).collect();
                incumbent = Some((value.to_integer(), sol));
            } else {
                heap.push(Node {
                    bound,
                    seq,
                    depth,
                    extra,
                    point: solution,
                });
                seq += 1;
            }
        }
        let Some(node) = heap.pop() else { break };
        if matches!(&incumbent, Some((best, _)) if node.bound.to_integer() >= *best) {
            break;
        }
        if node.depth >= depth_limit {
            return Err(LpError::DepthExhausted(depth_limit));
        }
        let j = node
            .point
            .iter()
            .position(|v| !v.is_integer())
            .expect("queued nodes are fractional");
        let v = node.point[j];
        let mut down = node.extra.clone();
        down.push(Constraint {
            coeffs: vec![(j, 1)],
            relation: Relation::Le,
            rhs: v.floor().to_integer(),
        });
        let mut up = node.extra;
        up.push(Constraint {
            coeffs: vec![(j, 1)],
            relation: Relation::Ge,
            rhs: v.ceil().to_integer(),
        });
        pending.push((down, node.depth + 1));
        pending.push((up, node.depth + 1));
    }
    Ok(match incumbent {
        Some((value, solution)) => IlpOutcome::Optimal {
            value,
            solution,
            relaxations,
        },
        None => IlpOutcome::Infeasible { relaxations },
    })
}
