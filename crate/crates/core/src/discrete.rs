//! Discrete controls: integer state-action counts for a population of `n`
//! processes, obtained by rounding a fluid control onto the lattice `Y_n`.
//!
//! Floors are taken after a `1e-9` upward nudge so that values like
//! `2.9999999999` round to 3.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::dense::Dense;
use crate::model::{floor_nudged, ModelSpec, OccupancyMeasure, StateActionMeasure};

/// Absolute slack allowed when comparing constraint sums of counts against
/// `n d_n` or `n f`.
pub const CERTIFY_TOL: f64 = 1e-9;

/// `counts(i, a)` processes in state `i` take action `a`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiscreteAssignment {
    n: u64,
    num_actions: usize,
    counts: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiscreteError {
    #[error("x is not on the lattice X_{n}")]
    NotOnLattice { n: u64 },
    #[error("budget of {budget} activations is out of reach: only {available} processes can be activated")]
    BudgetUnreachable { budget: u64, available: u64 },
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
}

impl DiscreteAssignment {
    /// Row-major `num_states x num_actions` counts.
    pub fn new(n: u64, num_actions: usize, counts: Vec<i64>) -> Result<Self, DiscreteError> {
        if num_actions == 0 || !counts.len().is_multiple_of(num_actions) {
            return Err(DiscreteError::Shape("counts length is not a multiple of |A|"));
        }
        Ok(Self { n, num_actions, counts })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn num_states(&self) -> usize {
        self.counts.len() / self.num_actions
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn count(&self, state: usize, action: usize) -> i64 {
        self.counts[state * self.num_actions + action]
    }

    pub fn row(&self, state: usize) -> &[i64] {
        &self.counts[state * self.num_actions..(state + 1) * self.num_actions]
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.counts
    }

    /// `sum_a counts(i, a)` per state.
    pub fn state_counts(&self) -> Vec<i64> {
        self.counts.chunks(self.num_actions).map(|r| r.iter().sum()).collect()
    }

    /// `counts / n` as a point of `Y_n`.
    pub fn to_measure(&self) -> StateActionMeasure {
        let n = self.n as f64;
        StateActionMeasure::new_unchecked(Dense::from_fn(self.num_states(), self.num_actions, |i, a| {
            self.count(i, a) as f64 / n
        }))
    }

    /// `max_{i,a} |y(i,a) - counts(i,a) / n|`
    pub fn gap(&self, fluid: &StateActionMeasure) -> f64 {
        let n = self.n as f64;
        let mut g = 0.0_f64;
        for i in 0..self.num_states() {
            for a in 0..self.num_actions {
                g = g.max((fluid.get(i, a) - self.count(i, a) as f64 / n).abs());
            }
        }
        g
    }

    /// `sum_{i,a} counts(i,a) r(i,a) / n`
    pub fn reward(&self, spec: &ModelSpec) -> f64 {
        let mut total = 0.0;
        for i in 0..self.num_states() {
            for a in 0..self.num_actions {
                let c = self.count(i, a);
                if c != 0 {
                    total += c as f64 * spec.reward(i, a);
                }
            }
        }
        total / self.n as f64
    }
}

/// Maps the current state counts of `n` processes to an assignment.
pub trait DiscreteControl {
    fn assign(&self, state_counts: &[u64]) -> Result<DiscreteAssignment, DiscreteError>;
}

impl<T: DiscreteControl + ?Sized> DiscreteControl for &T {
    fn assign(&self, state_counts: &[u64]) -> Result<DiscreteAssignment, DiscreteError> {
        (**self).assign(state_counts)
    }
}

impl<T: DiscreteControl + ?Sized> DiscreteControl for alloc::boxed::Box<T> {
    fn assign(&self, state_counts: &[u64]) -> Result<DiscreteAssignment, DiscreteError> {
        (**self).assign(state_counts)
    }
}

fn lattice_counts(x: &OccupancyMeasure, n: u64) -> Result<Vec<u64>, DiscreteError> {
    x.to_counts(n).ok_or(DiscreteError::NotOnLattice { n })
}

fn check_shape(y: &StateActionMeasure, state_counts: &[u64]) -> Result<(), DiscreteError> {
    if y.num_states() != state_counts.len() {
        return Err(DiscreteError::Shape("fluid table and state counts disagree on |S|"));
    }
    Ok(())
}

/// Resource-allocation rounding: floors every action except 0, and action 0
/// absorbs the remainder. Never uses more of a resource than `y` does.
pub fn round_inequality(
    y_fluid: &StateActionMeasure,
    x: &OccupancyMeasure,
    n: u64,
) -> Result<DiscreteAssignment, DiscreteError> {
    round_inequality_counts(y_fluid, &lattice_counts(x, n)?)
}

pub fn round_inequality_counts(
    y_fluid: &StateActionMeasure,
    state_counts: &[u64],
) -> Result<DiscreteAssignment, DiscreteError> {
    check_shape(y_fluid, state_counts)?;
    let n: u64 = state_counts.iter().sum();
    let nf = n as f64;
    let na = y_fluid.num_actions();
    let mut counts = vec![0i64; state_counts.len() * na];
    for (i, &ci) in state_counts.iter().enumerate() {
        let row = &mut counts[i * na..(i + 1) * na];
        let mut left = ci as i64;
        for a in 1..na {
            let c = (floor_nudged(nf * y_fluid.get(i, a)).max(0.0) as i64).min(left);
            row[a] = c;
            left -= c;
        }
        row[0] = left;
    }
    DiscreteAssignment::new(n, na, counts)
}

/// Restless-bandit rounding with budget `floor(d n)`: floors action-1 mass,
/// then tops up states with a fractional part in increasing state order until
/// the budget is met exactly.
pub fn round_bandit(
    y_fluid: &StateActionMeasure,
    x: &OccupancyMeasure,
    n: u64,
    d: f64,
) -> Result<DiscreteAssignment, DiscreteError> {
    round_bandit_counts(y_fluid, &lattice_counts(x, n)?, d)
}

pub fn round_bandit_counts(
    y_fluid: &StateActionMeasure,
    state_counts: &[u64],
    d: f64,
) -> Result<DiscreteAssignment, DiscreteError> {
    check_shape(y_fluid, state_counts)?;
    if y_fluid.num_actions() != 2 {
        return Err(DiscreteError::Shape("bandit rounding needs exactly two actions"));
    }
    let n: u64 = state_counts.iter().sum();
    let nf = n as f64;
    let budget = floor_nudged(d * nf).max(0.0) as u64;
    if budget > n {
        return Err(DiscreteError::BudgetUnreachable { budget, available: n });
    }

    let mut active: Vec<u64> = state_counts
        .iter()
        .enumerate()
        .map(|(i, &ci)| (floor_nudged(nf * y_fluid.get(i, 1)).max(0.0) as u64).min(ci))
        .collect();
    let mut placed: u64 = active.iter().sum();

    // floors can only overshoot through the nudge; give the excess back from the end
    for i in (0..active.len()).rev() {
        if placed <= budget {
            break;
        }
        let take = active[i].min(placed - budget);
        active[i] -= take;
        placed -= take;
    }

    for (i, &ci) in state_counts.iter().enumerate() {
        if placed == budget {
            break;
        }
        let v = nf * y_fluid.get(i, 1);
        let fractional = v - libm::floor(v + 1e-9) > 1e-9;
        if fractional && active[i] < ci {
            active[i] += 1;
            placed += 1;
        }
    }

    // only reached when y(., 1) itself falls short of d
    for (i, &ci) in state_counts.iter().enumerate() {
        if placed == budget {
            break;
        }
        let add = (ci - active[i]).min(budget - placed);
        active[i] += add;
        placed += add;
    }
    if placed < budget {
        return Err(DiscreteError::BudgetUnreachable { budget, available: placed });
    }

    let counts = state_counts.iter().zip(&active).flat_map(|(&ci, &ai)| [(ci - ai) as i64, ai as i64]).collect();
    DiscreteAssignment::new(n, 2, counts)
}

#[derive(Debug, Clone, PartialEq)]
pub enum CertificateViolation {
    NegativeCount { state: usize, action: usize, count: i64 },
    Population { expected: u64, actual: i64 },
    StateCount { state: usize, expected: u64, actual: i64 },
    Equality { constraint: usize, lhs: f64, rhs: f64 },
    Inequality { constraint: usize, lhs: f64, rhs: f64 },
    Shape,
}

impl fmt::Display for CertificateViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::NegativeCount { state, action, count } => {
                write!(f, "negative count {count} at state {state}, action {action}")
            }
            Self::Population { expected, actual } => write!(f, "counts total {actual}, expected {expected}"),
            Self::StateCount { state, expected, actual } => {
                write!(f, "state {state} has {actual} processes assigned, expected {expected}")
            }
            Self::Equality { constraint, lhs, rhs } => {
                write!(f, "equality constraint {constraint}: {lhs} != {rhs}")
            }
            Self::Inequality { constraint, lhs, rhs } => {
                write!(f, "inequality constraint {constraint}: {lhs} > {rhs}")
            }
            Self::Shape => f.write_str("assignment shape does not match the model"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub feasible: bool,
    /// Sup-norm distance to the fluid value, when one was supplied.
    pub gap: Option<f64>,
    pub violations: Vec<CertificateViolation>,
}

impl Certificate {
    pub fn describe(&self) -> String {
        use core::fmt::Write;
        let mut s = String::new();
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                s.push_str("; ");
            }
            let _ = write!(s, "{v}");
        }
        s
    }
}

/// Re-checks an assignment from scratch: nonnegative integers, `n` processes
/// in total (matching `state_counts` when given), and the finite-`n`
/// constraints `sum counts C = n d_n`, `sum counts E <= n f`.
pub fn certify(
    assignment: &DiscreteAssignment,
    spec: &ModelSpec,
    state_counts: Option<&[u64]>,
    fluid: Option<&StateActionMeasure>,
) -> Certificate {
    let mut violations = Vec::new();
    let n = assignment.n();
    if assignment.num_states() != spec.num_states || assignment.num_actions() != spec.num_actions {
        return Certificate { feasible: false, gap: None, violations: vec![CertificateViolation::Shape] };
    }
    for i in 0..spec.num_states {
        for a in 0..spec.num_actions {
            let count = assignment.count(i, a);
            if count < 0 {
                violations.push(CertificateViolation::NegativeCount { state: i, action: a, count });
            }
        }
    }
    let total: i64 = assignment.as_slice().iter().sum();
    if total != n as i64 {
        violations.push(CertificateViolation::Population { expected: n, actual: total });
    }
    if let Some(sc) = state_counts {
        for (state, (&expected, actual)) in sc.iter().zip(assignment.state_counts()).enumerate() {
            if expected as i64 != actual {
                violations.push(CertificateViolation::StateCount { state, expected, actual });
            }
        }
    }

    let sums = |block: &crate::model::LinearConstraints| -> Vec<f64> {
        let mut out = vec![0.0; block.len()];
        for i in 0..spec.num_states {
            for a in 0..spec.num_actions {
                let c = assignment.count(i, a) as f64;
                for (k, o) in out.iter_mut().enumerate() {
                    *o += c * block.per_action[a][(i, k)];
                }
            }
        }
        out
    };
    let nf = n as f64;
    if let Some(eq) = &spec.eq_constraints {
        let rhs = spec.eq_rhs_at(n);
        for (k, lhs) in sums(eq).into_iter().enumerate() {
            let target = nf * rhs[k];
            if (lhs - target).abs() > CERTIFY_TOL * (1.0 + nf) {
                violations.push(CertificateViolation::Equality { constraint: k, lhs, rhs: target });
            }
        }
    }
    if let Some(ineq) = &spec.ineq_constraints {
        for (k, lhs) in sums(ineq).into_iter().enumerate() {
            let target = nf * ineq.rhs[k];
            if lhs > target + CERTIFY_TOL * (1.0 + nf) {
                violations.push(CertificateViolation::Inequality { constraint: k, lhs, rhs: target });
            }
        }
    }
    Certificate { feasible: violations.is_empty(), gap: fluid.map(|y| assignment.gap(y)), violations }
}
