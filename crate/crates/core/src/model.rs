//! Weakly coupled MDP instances and the measures that live on them.
//!
//! A [`ModelSpec`] describes one process (kernels `P(a)`, rewards `r(i, a)`)
//! plus the linear coupling constraints that tie `n` copies together. The
//! coupling is expressed on state-action frequencies:
//!
//! ```text
//! sum_a y(a) C_n(a) = d_n        (equality block, p columns)
//! sum_a y(a) E_n(a) <= f_n       (inequality block, q columns)
//! ```
//!
//! Rewards are stored action-major (`rewards[a][i]`), mirroring the layout of
//! the model file format.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Deref;

use crate::dense::Dense;
use crate::{MEASURE_TOL, PROB_TOL};

/// How the finite-`n` constraint data relate to the limiting `(C, d, E, f)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FiniteNRule {
    /// `C_n = C`, `d_n = d`, `E_n = E`, `f_n = f` for every `n`.
    #[default]
    Constant,
    /// Restless-bandit budget `d_n = floor(d n) / n`; everything else constant.
    BanditFloor,
}

/// One block of linear coupling constraints: a `|S| x k` matrix per action and
/// a right-hand side of length `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraints {
    pub per_action: Vec<Dense>,
    pub rhs: Vec<f64>,
}

impl LinearConstraints {
    pub fn len(&self) -> usize {
        self.rhs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rhs.is_empty()
    }

    /// Left-hand side `sum_a y(a) M(a)` evaluated on a state-action table.
    pub fn lhs(&self, table: &Dense) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (a, m) in self.per_action.iter().enumerate() {
            for i in 0..table.rows() {
                let y = table[(i, a)];
                if y == 0.0 {
                    continue;
                }
                for (o, &c) in out.iter_mut().zip(m.row(i)) {
                    *o += y * c;
                }
            }
        }
        out
    }

    fn all_zero(&self) -> bool {
        self.rhs.iter().all(|&v| v == 0.0) && self.per_action.iter().all(|m| m.as_slice().iter().all(|&v| v == 0.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub num_states: usize,
    pub num_actions: usize,
    /// `transitions[a]` is the `|S| x |S|` kernel `P(a)`.
    pub transitions: Vec<Dense>,
    /// `rewards[a][i] = r(i, a)`.
    pub rewards: Vec<Vec<f64>>,
    pub eq_constraints: Option<LinearConstraints>,
    pub ineq_constraints: Option<LinearConstraints>,
    pub finite_n_rule: FiniteNRule,
}

/// A single broken invariant, with enough location data to find it.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptySpace { what: &'static str },
    Shape { what: String },
    NonFinite { what: String },
    NegativeProbability { action: usize, row: usize, col: usize, value: f64 },
    RowSum { action: usize, row: usize, sum: f64 },
    BanditRule { reason: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySpace { what } => write!(f, "{what} must be positive"),
            Violation::Shape { what } => write!(f, "shape mismatch: {what}"),
            Violation::NonFinite { what } => write!(f, "non-finite value in {what}"),
            Violation::NegativeProbability { action, row, col, value } => {
                write!(f, "P({action}) entry ({row}, {col}) is negative: {value}")
            }
            Violation::RowSum { action, row, sum } => {
                write!(f, "P({action}) row {row} sums to {sum} (off by {:e})", sum - 1.0)
            }
            Violation::BanditRule { reason } => {
                write!(f, "bandit_floor rule requires the bandit structure: {reason}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("model has {} invariant violation(s); first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
}

/// Why a model falls outside one of the two structured constraint classes.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct AssumptionError(pub String);

impl ModelSpec {
    /// Validates and returns the model, or every violation found.
    pub fn validated(self) -> Result<Self, ModelError> {
        let violations = validate_model(&self);
        if violations.is_empty() {
            Ok(self)
        } else {
            Err(ModelError::Invalid(violations))
        }
    }

    /// Divides every kernel row by its sum. Validation never does this on its
    /// own; call it when the source data are known to be rounded.
    pub fn renormalize_rows(&mut self) {
        for p in &mut self.transitions {
            for i in 0..p.rows() {
                let row = p.row_mut(i);
                let sum: f64 = row.iter().sum();
                if sum > 0.0 {
                    row.iter_mut().for_each(|v| *v /= sum);
                }
            }
        }
    }

    #[inline]
    pub fn prob(&self, from: usize, action: usize, to: usize) -> f64 {
        self.transitions[action][(from, to)]
    }

    #[inline]
    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[action][state]
    }

    pub fn num_eq(&self) -> usize {
        self.eq_constraints.as_ref().map_or(0, LinearConstraints::len)
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_constraints.as_ref().map_or(0, LinearConstraints::len)
    }

    /// Equality right-hand side `d_n` for population size `n`.
    pub fn eq_rhs_at(&self, n: u64) -> Vec<f64> {
        let Some(eq) = &self.eq_constraints else {
            return Vec::new();
        };
        match self.finite_n_rule {
            FiniteNRule::Constant => eq.rhs.clone(),
            FiniteNRule::BanditFloor => eq.rhs.iter().map(|&d| floor_nudged(d * n as f64) / n as f64).collect(),
        }
    }

    /// Checks the resource-allocation structure: no (or trivial) equality
    /// constraints, nonnegative `E`, strictly positive `f`, and action `0`
    /// consuming nothing.
    pub fn inequality_assumption(&self) -> Result<(), AssumptionError> {
        if let Some(eq) = &self.eq_constraints {
            if !eq.all_zero() {
                return Err(AssumptionError("equality constraints present".into()));
            }
        }
        let Some(ineq) = &self.ineq_constraints else {
            return Ok(());
        };
        if let Some(k) = ineq.rhs.iter().position(|&f| f <= 0.0) {
            return Err(AssumptionError(format!("f({k}) = {} is not strictly positive", ineq.rhs[k])));
        }
        for (a, m) in ineq.per_action.iter().enumerate() {
            for i in 0..m.rows() {
                for k in 0..m.cols() {
                    let e = m[(i, k)];
                    if e < 0.0 {
                        return Err(AssumptionError(format!("E({i}, {k}, {a}) = {e} is negative")));
                    }
                    if a == 0 && e != 0.0 {
                        return Err(AssumptionError(format!("action 0 consumes resource {k} in state {i} (E = {e})")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks the restless-bandit structure and returns the budget `d`.
    pub fn bandit_assumption(&self) -> Result<f64, AssumptionError> {
        if self.num_actions != 2 {
            return Err(AssumptionError(format!("need 2 actions, found {}", self.num_actions)));
        }
        if let Some(ineq) = &self.ineq_constraints {
            if !ineq.all_zero() {
                return Err(AssumptionError("nontrivial inequality constraints present".into()));
            }
        }
        let Some(eq) = self.eq_constraints.as_ref().filter(|eq| eq.len() == 1) else {
            return Err(AssumptionError("need exactly one equality constraint".into()));
        };
        let d = eq.rhs[0];
        if !(d > 0.0 && d < 1.0) {
            return Err(AssumptionError(format!("budget d = {d} is outside (0, 1)")));
        }
        for i in 0..self.num_states {
            let (c0, c1) = (eq.per_action[0][(i, 0)], eq.per_action[1][(i, 0)]);
            if c0 != 0.0 || c1 != 1.0 {
                return Err(AssumptionError(format!("state {i}: need C(i,0) = 0 and C(i,1) = 1, found {c0} and {c1}")));
            }
        }
        Ok(d)
    }

    /// Builds a restless-bandit instance with a single budget equality.
    pub fn bandit(transitions: Vec<Dense>, rewards: Vec<Vec<f64>>, d: f64) -> Self {
        let s = transitions[0].rows();
        let per_action = vec![Dense::zeros(s, 1), Dense::from_fn(s, 1, |_, _| 1.0)];
        Self {
            num_states: s,
            num_actions: 2,
            transitions,
            rewards,
            eq_constraints: Some(LinearConstraints { per_action, rhs: vec![d] }),
            ineq_constraints: None,
            finite_n_rule: FiniteNRule::BanditFloor,
        }
    }
}

/// `floor(v)` after a `1e-9` upward nudge, so `0.9999999999` floors to 1.
#[inline]
pub fn floor_nudged(v: f64) -> f64 {
    libm::floor(v + 1e-9)
}

/// Returns every invariant violation of `spec`; an empty list means valid.
pub fn validate_model(spec: &ModelSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let (s, na) = (spec.num_states, spec.num_actions);
    if s == 0 {
        out.push(Violation::EmptySpace { what: "num_states" });
    }
    if na == 0 {
        out.push(Violation::EmptySpace { what: "num_actions" });
    }
    if !out.is_empty() {
        return out;
    }

    if spec.transitions.len() != na {
        out.push(Violation::Shape { what: format!("{} transition matrices for {na} actions", spec.transitions.len()) });
    }
    for (a, p) in spec.transitions.iter().enumerate() {
        if p.rows() != s || p.cols() != s {
            out.push(Violation::Shape { what: format!("P({a}) is {}x{}, expected {s}x{s}", p.rows(), p.cols()) });
            continue;
        }
        for i in 0..s {
            let row = p.row(i);
            if row.iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFinite { what: format!("P({a}) row {i}") });
                continue;
            }
            for (j, &v) in row.iter().enumerate() {
                if v < 0.0 {
                    out.push(Violation::NegativeProbability { action: a, row: i, col: j, value: v });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                out.push(Violation::RowSum { action: a, row: i, sum });
            }
        }
    }

    if spec.rewards.len() != na || spec.rewards.iter().any(|r| r.len() != s) {
        out.push(Violation::Shape { what: format!("rewards must be {na}x{s} (action-major)") });
    } else if spec.rewards.iter().flatten().any(|v| !v.is_finite()) {
        out.push(Violation::NonFinite { what: "rewards".into() });
    }

    for (name, block) in [("eq_constraints", &spec.eq_constraints), ("ineq_constraints", &spec.ineq_constraints)] {
        let Some(block) = block else { continue };
        let k = block.len();
        if block.per_action.len() != na {
            out.push(Violation::Shape {
                what: format!("{name} has {} matrices for {na} actions", block.per_action.len()),
            });
        }
        for (a, m) in block.per_action.iter().enumerate() {
            if m.rows() != s || m.cols() != k {
                out.push(Violation::Shape {
                    what: format!("{name} matrix for action {a} is {}x{}, expected {s}x{k}", m.rows(), m.cols()),
                });
            } else if m.as_slice().iter().any(|v| !v.is_finite()) {
                out.push(Violation::NonFinite { what: format!("{name} matrix for action {a}") });
            }
        }
        if block.rhs.iter().any(|v| !v.is_finite()) {
            out.push(Violation::NonFinite { what: format!("{name} right-hand side") });
        }
    }

    if spec.finite_n_rule == FiniteNRule::BanditFloor && out.is_empty() {
        if let Err(e) = spec.bandit_assumption() {
            out.push(Violation::BanditRule { reason: e.0 });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeasureError {
    #[error("expected {expected} entries, found {found}")]
    Length { expected: usize, found: usize },
    #[error("entry {index} is negative or non-finite: {value}")]
    BadEntry { index: usize, value: f64 },
    #[error("entries sum to {0}, expected 1")]
    Mass(f64),
    #[error("row {row} of the policy sums to {sum}")]
    PolicyRow { row: usize, sum: f64 },
}

/// A point of the simplex `X`: fraction of processes in each state.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyMeasure(Vec<f64>);

impl OccupancyMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self, MeasureError> {
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(MeasureError::BadEntry { index, value });
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > MEASURE_TOL {
            return Err(MeasureError::Mass(sum));
        }
        Ok(Self(weights))
    }

    /// Wraps a vector without checks; callers own the invariant.
    pub fn new_unchecked(weights: Vec<f64>) -> Self {
        Self(weights)
    }

    pub fn point_mass(num_states: usize, state: usize) -> Self {
        let mut w = vec![0.0; num_states];
        w[state] = 1.0;
        Self(w)
    }

    pub fn uniform(num_states: usize) -> Self {
        Self(vec![1.0 / num_states as f64; num_states])
    }

    pub fn from_counts(counts: &[u64]) -> Self {
        let n: u64 = counts.iter().sum();
        Self(counts.iter().map(|&c| c as f64 / n as f64).collect())
    }

    /// `n * x` as integers, or `None` when some entry is off the lattice `X_n`.
    pub fn to_counts(&self, n: u64) -> Option<Vec<u64>> {
        let counts: Vec<u64> = self
            .0
            .iter()
            .map(|&w| {
                let v = w * n as f64;
                let r = libm::round(v);
                ((v - r).abs() <= 1e-9 * (1.0 + v)).then_some(r as u64)
            })
            .collect::<Option<_>>()?;
        (counts.iter().sum::<u64>() == n).then_some(counts)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn sup_distance(&self, other: &[f64]) -> f64 {
        sup_norm_diff(&self.0, other)
    }
}

impl Deref for OccupancyMeasure {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// A point of `Y`: a `|S| x |A|` table of state-action fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionMeasure(Dense);

impl StateActionMeasure {
    pub fn new(table: Dense) -> Result<Self, MeasureError> {
        for (index, &value) in table.as_slice().iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(MeasureError::BadEntry { index, value });
            }
        }
        let sum: f64 = table.as_slice().iter().sum();
        if (sum - 1.0).abs() > MEASURE_TOL {
            return Err(MeasureError::Mass(sum));
        }
        Ok(Self(table))
    }

    /// Wraps a table without checks; callers own the invariant.
    pub fn new_unchecked(table: Dense) -> Self {
        Self(table)
    }

    /// Mass concentrated on the single pair `(state, action)`.
    pub fn point_mass(num_states: usize, num_actions: usize, state: usize, action: usize) -> Self {
        let mut t = Dense::zeros(num_states, num_actions);
        t[(state, action)] = 1.0;
        Self(t)
    }

    #[inline]
    pub fn get(&self, state: usize, action: usize) -> f64 {
        self.0[(state, action)]
    }

    pub fn table(&self) -> &Dense {
        &self.0
    }

    pub fn num_states(&self) -> usize {
        self.0.rows()
    }

    pub fn num_actions(&self) -> usize {
        self.0.cols()
    }

    /// The row vector `y(a)`.
    pub fn action_column(&self, action: usize) -> Vec<f64> {
        (0..self.num_states()).map(|i| self.0[(i, action)]).collect()
    }

    /// State marginal `sum_a y(a)`.
    pub fn marginal(&self) -> Vec<f64> {
        (0..self.num_states()).map(|i| self.0.row(i).iter().sum()).collect()
    }

    /// `sum_a y(a) r(a)`.
    pub fn reward(&self, spec: &ModelSpec) -> f64 {
        let mut total = 0.0;
        for i in 0..self.num_states() {
            for a in 0..self.num_actions() {
                total += self.0[(i, a)] * spec.reward(i, a);
            }
        }
        total
    }

    pub fn sup_distance(&self, other: &StateActionMeasure) -> f64 {
        sup_norm_diff(self.0.as_slice(), other.0.as_slice())
    }

    pub fn into_table(self) -> Dense {
        self.0
    }
}

/// Stationary single-process policy `pi(a | i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinglePolicy(Dense);

impl SinglePolicy {
    pub fn new(probs: Dense) -> Result<Self, MeasureError> {
        for (index, &value) in probs.as_slice().iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(MeasureError::BadEntry { index, value });
            }
        }
        for row in 0..probs.rows() {
            let sum: f64 = probs.row(row).iter().sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(MeasureError::PolicyRow { row, sum });
            }
        }
        Ok(Self(probs))
    }

    pub fn uniform(num_states: usize, num_actions: usize) -> Self {
        Self(Dense::from_fn(num_states, num_actions, |_, _| 1.0 / num_actions as f64))
    }

    /// One action per state, chosen with probability one.
    pub fn deterministic(actions: &[usize], num_actions: usize) -> Self {
        Self(Dense::from_fn(actions.len(), num_actions, |i, a| if actions[i] == a { 1.0 } else { 0.0 }))
    }

    #[inline]
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.0[(state, action)]
    }

    pub fn row(&self, state: usize) -> &[f64] {
        self.0.row(state)
    }

    pub fn table(&self) -> &Dense {
        &self.0
    }

    pub fn num_states(&self) -> usize {
        self.0.rows()
    }

    pub fn num_actions(&self) -> usize {
        self.0.cols()
    }

    /// Induced chain `P_pi(i, j) = sum_a pi(a|i) p(j|i,a)`.
    pub fn induced_chain(&self, spec: &ModelSpec) -> Dense {
        Dense::from_fn(spec.num_states, spec.num_states, |i, j| {
            (0..spec.num_actions).map(|a| self.prob(i, a) * spec.prob(i, a, j)).sum()
        })
    }
}

pub(crate) fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
