//! Fluid relaxation: the linear program over long-run state-action
//! frequencies whose optimal value `g_r` bounds the gain of any policy.
//!
//! ```text
//! maximize    sum_a y(a) r(a)
//! subject to  sum_a y(a) P(a) = sum_a y(a)      (balance)
//!             sum_a y(a) C(a) = d
//!             sum_a y(a) E(a) <= f
//!             sum_{i,a} y(i,a) = 1,  y >= 0
//! ```
//!
//! The balance rows always sum to zero, so the last one is dropped before the
//! simplex sees the problem.

use alloc::vec;
use alloc::vec::Vec;

use crate::dense::Dense;
use crate::model::{ModelSpec, OccupancyMeasure, SinglePolicy, StateActionMeasure};
use crate::simplex::{LinearProgram, LpError, RowKind};
use crate::SUPPORT_TOL;

#[derive(Debug, Clone, PartialEq)]
pub struct RelaxationSolution {
    pub y_star: StateActionMeasure,
    pub g_r: f64,
    pub x_star: OccupancyMeasure,
    /// `S_+^*`: states with `x*(i) > SUPPORT_TOL`, increasing.
    pub support: Vec<usize>,
    pub pivots: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum RelaxError {
    #[error("fluid relaxation is infeasible")]
    Infeasible,
    #[error("simplex failed: {0}")]
    Solver(LpError),
}

/// Per-block constraint residuals of a state-action table.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintActivity {
    /// `sum_a y(a) C(a) - d`, one entry per equality constraint.
    pub eq_residual: Vec<f64>,
    /// `f - sum_a y(a) E(a)`, one entry per inequality constraint.
    pub ineq_slack: Vec<f64>,
    /// Largest entry of `|sum_a y(a) (P(a) - I)|`.
    pub balance_residual: f64,
}

pub fn solve_fluid_relaxation(spec: &ModelSpec) -> Result<RelaxationSolution, RelaxError> {
    let (s, na) = (spec.num_states, spec.num_actions);
    let var = |i: usize, a: usize| i * na + a;
    let mut objective = vec![0.0; s * na];
    for i in 0..s {
        for a in 0..na {
            objective[var(i, a)] = spec.reward(i, a);
        }
    }
    let mut lp = LinearProgram::new(objective);

    for j in 0..s.saturating_sub(1) {
        let mut row = vec![0.0; s * na];
        for i in 0..s {
            for a in 0..na {
                row[var(i, a)] = spec.prob(i, a, j) - if i == j { 1.0 } else { 0.0 };
            }
        }
        lp.add_row(row, RowKind::Eq, 0.0);
    }
    for (block, kind) in [(&spec.eq_constraints, RowKind::Eq), (&spec.ineq_constraints, RowKind::Le)] {
        let Some(block) = block else { continue };
        for k in 0..block.len() {
            let mut row = vec![0.0; s * na];
            for i in 0..s {
                for a in 0..na {
                    row[var(i, a)] = block.per_action[a][(i, k)];
                }
            }
            lp.add_row(row, kind, block.rhs[k]);
        }
    }
    lp.add_row(vec![1.0; s * na], RowKind::Eq, 1.0);

    let sol = lp.solve().map_err(|e| match e {
        LpError::Infeasible => RelaxError::Infeasible,
        other => RelaxError::Solver(other),
    })?;

    let table = Dense::from_fn(s, na, |i, a| sol.x[var(i, a)]);
    let y_star = StateActionMeasure::new_unchecked(table);
    let x_star = OccupancyMeasure::new_unchecked(y_star.marginal());
    let support = (0..s).filter(|&i| x_star[i] > SUPPORT_TOL).collect();
    let g_r = y_star.reward(spec);
    Ok(RelaxationSolution { y_star, g_r, x_star, support, pivots: sol.iterations })
}

/// Evaluates every constraint block of the relaxation on `y`.
pub fn constraint_activity(spec: &ModelSpec, y: &StateActionMeasure) -> ConstraintActivity {
    let eq_residual = spec
        .eq_constraints
        .as_ref()
        .map(|c| c.lhs(y.table()).iter().zip(&c.rhs).map(|(l, d)| l - d).collect())
        .unwrap_or_default();
    let ineq_slack = spec
        .ineq_constraints
        .as_ref()
        .map(|c| c.lhs(y.table()).iter().zip(&c.rhs).map(|(l, f)| f - l).collect())
        .unwrap_or_default();
    let marginal = y.marginal();
    let mut flow = vec![0.0; spec.num_states];
    for a in 0..spec.num_actions {
        for (o, v) in flow.iter_mut().zip(spec.transitions[a].left_mul(&y.action_column(a))) {
            *o += v;
        }
    }
    let balance_residual = crate::model::sup_norm_diff(&flow, &marginal);
    ConstraintActivity { eq_residual, ineq_slack, balance_residual }
}

/// Candidate single-process policy read off the relaxation:
/// `mu(a|i) = y*(i,a) / x*(i)` on the support, uniform elsewhere.
pub fn policy_from_relaxation(sol: &RelaxationSolution) -> SinglePolicy {
    let (s, na) = (sol.y_star.num_states(), sol.y_star.num_actions());
    let mut probs = Dense::from_fn(s, na, |_, _| 1.0 / na as f64);
    for &i in &sol.support {
        let x = sol.x_star[i];
        for a in 0..na {
            probs[(i, a)] = sol.y_star.get(i, a) / x;
        }
    }
    SinglePolicy::new(probs).expect("support rows are proportional to y*")
}

/// The policy that picks every action with equal probability in every state.
pub fn uniform_policy(spec: &ModelSpec) -> SinglePolicy {
    SinglePolicy::uniform(spec.num_states, spec.num_actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{build_example, ExampleName};

    #[test]
    fn toy_optimum() {
        let spec = build_example(ExampleName::TwoStateToy);
        let sol = solve_fluid_relaxation(&spec).unwrap();
        assert!((sol.g_r - 0.5).abs() < 1e-12);
        assert!((sol.y_star.get(1, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_budget_reported() {
        let mut spec = build_example(ExampleName::TwoStateToy);
        // action 1 never consumes more than everything
        spec.eq_constraints.as_mut().unwrap().rhs[0] = 1.5;
        spec.finite_n_rule = crate::model::FiniteNRule::Constant;
        assert_eq!(solve_fluid_relaxation(&spec).unwrap_err(), RelaxError::Infeasible);
    }

    #[test]
    fn mu_falls_back_to_uniform_off_support() {
        let y = Dense::from_rows(&[vec![0.2, 0.3], vec![0.0, 0.0], vec![0.5, 0.0]]).unwrap();
        let sol = RelaxationSolution {
            y_star: StateActionMeasure::new(y).unwrap(),
            g_r: 0.0,
            x_star: OccupancyMeasure::new(vec![0.5, 0.0, 0.5]).unwrap(),
            support: vec![0, 2],
            pivots: 0,
        };
        let mu = policy_from_relaxation(&sol);
        assert_eq!(mu.row(1), &[0.5, 0.5]);
        assert!((mu.prob(0, 1) - 0.6).abs() < 1e-15);
        assert_eq!(mu.row(2), &[1.0, 0.0]);
    }

    #[test]
    fn proportional_rows_give_uniform_mu() {
        let y = Dense::from_rows(&[vec![0.15, 0.15], vec![0.35, 0.35]]).unwrap();
        let sol = RelaxationSolution {
            y_star: StateActionMeasure::new(y).unwrap(),
            g_r: 0.0,
            x_star: OccupancyMeasure::new(vec![0.3, 0.7]).unwrap(),
            support: vec![0, 1],
            pivots: 0,
        };
        let mu = policy_from_relaxation(&sol);
        for i in 0..2 {
            assert!((mu.prob(i, 0) - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_rows() {
        let spec = build_example(ExampleName::Taxi);
        let nu = uniform_policy(&spec);
        assert!(nu.table().as_slice().iter().all(|&p| p == 1.0 / 3.0));
        let mut one = build_example(ExampleName::Taxi);
        one.num_actions = 1;
        assert!(uniform_policy(&one).table().as_slice().iter().all(|&p| p == 1.0));
        assert!(uniform_policy(&build_example(ExampleName::Nonindexable)).table().as_slice().iter().all(|&p| p == 0.5));
    }
}
