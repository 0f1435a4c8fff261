//! Reference policies for restless bandits: state-priority rules and the ID
//! policy. Both keep exactly `floor(d n)` arms active at every step.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::discrete::{DiscreteAssignment, DiscreteControl, DiscreteError};
use crate::model::{floor_nudged, SinglePolicy};
use crate::relax::RelaxationSolution;
use crate::sim::AgentPolicy;

/// States listed from highest to lowest priority for action 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorityOrder(Vec<usize>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("priority order {0:?} is not a permutation of 0..{1}")]
pub struct OrderError(pub Vec<usize>, pub usize);

impl PriorityOrder {
    pub fn new(order: Vec<usize>, num_states: usize) -> Result<Self, OrderError> {
        let mut seen = vec![false; num_states];
        let ok = order.len() == num_states
            && order.iter().all(|&s| s < num_states && !core::mem::replace(&mut seen[s], true));
        if ok {
            Ok(Self(order))
        } else {
            Err(OrderError(order, num_states))
        }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }
}

/// LP-priority order read off a relaxation optimum: states where `y*` only
/// uses action 1, then states that split, then states that only use action 0,
/// then states outside the support; ties by increasing index.
pub fn lp_priority_order(sol: &RelaxationSolution) -> PriorityOrder {
    let tol = crate::SUPPORT_TOL;
    let s = sol.y_star.num_states();
    let class = |i: usize| -> u8 {
        let (passive, active) = (sol.y_star.get(i, 0), sol.y_star.get(i, 1));
        match (sol.x_star[i] > tol, passive > tol, active > tol) {
            (false, _, _) => 3,
            (true, false, _) => 0,
            (true, true, true) => 1,
            (true, true, false) => 2,
        }
    };
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by_key(|&i| class(i));
    PriorityOrder(order)
}

/// Activations per state: `min(count, remaining budget)` in priority order.
fn greedy_activations(order: &PriorityOrder, counts: &[u64], budget: u64) -> Result<Vec<u64>, DiscreteError> {
    let mut active = vec![0u64; counts.len()];
    let mut left = budget;
    for &i in order.as_slice() {
        let k = counts[i].min(left);
        active[i] = k;
        left -= k;
    }
    if left > 0 {
        return Err(DiscreteError::BudgetUnreachable { budget, available: budget - left });
    }
    Ok(active)
}

/// Frequency-mode priority rule with budget `floor(d n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityControl {
    pub order: PriorityOrder,
    pub d: f64,
}

pub fn priority_control(order: PriorityOrder, d: f64) -> PriorityControl {
    PriorityControl { order, d }
}

impl DiscreteControl for PriorityControl {
    fn assign(&self, state_counts: &[u64]) -> Result<DiscreteAssignment, DiscreteError> {
        if state_counts.len() != self.order.as_slice().len() {
            return Err(DiscreteError::Shape("priority order and state counts disagree on |S|"));
        }
        let n: u64 = state_counts.iter().sum();
        let budget = floor_nudged(self.d * n as f64).max(0.0) as u64;
        let active = greedy_activations(&self.order, state_counts, budget)?;
        let counts = state_counts.iter().zip(&active).flat_map(|(&c, &k)| [(c - k) as i64, k as i64]).collect();
        DiscreteAssignment::new(n, 2, counts)
    }
}

/// The same priority rule applied to individual arms: within a state, the
/// lowest IDs are activated first.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorityAgent {
    pub order: PriorityOrder,
    pub d: f64,
}

impl AgentPolicy for PriorityAgent {
    fn act(&self, states: &[usize], counts: &[u64], _rng: &mut ChaCha8Rng, actions: &mut [usize]) {
        let budget = floor_nudged(self.d * states.len() as f64).max(0.0) as u64;
        let mut left = greedy_activations(&self.order, counts, budget).expect("budget within population");
        for (a, &s) in actions.iter_mut().zip(states) {
            *a = if left[s] > 0 {
                left[s] -= 1;
                1
            } else {
                0
            };
        }
    }
}

/// Arms sample actions from `mu`; samples are honored in ID order while the
/// exact budget `floor(d n)` can still be met, and every later arm gets the
/// action the budget forces.
#[derive(Debug, Clone, PartialEq)]
pub struct IdPolicy {
    pub mu: SinglePolicy,
    pub d: f64,
}

pub fn id_policy(mu: SinglePolicy, d: f64) -> IdPolicy {
    IdPolicy { mu, d }
}

impl IdPolicy {
    /// Applies the budget rule to already sampled actions.
    pub fn resolve(budget: usize, sampled: &[usize], actions: &mut [usize]) {
        let n = sampled.len();
        let (mut ones, mut zeros) = (0usize, 0usize);
        let mut forced = None;
        for (k, (&want, out)) in sampled.iter().zip(actions.iter_mut()).enumerate() {
            if forced.is_none() {
                let fits = if want == 1 { ones < budget } else { zeros < n - budget };
                if !fits {
                    forced = Some(1 - want);
                }
            }
            let a = forced.unwrap_or(want);
            debug_assert!(k < n);
            *out = a;
            if a == 1 {
                ones += 1;
            } else {
                zeros += 1;
            }
        }
    }
}

impl AgentPolicy for IdPolicy {
    fn act(&self, states: &[usize], _counts: &[u64], rng: &mut ChaCha8Rng, actions: &mut [usize]) {
        let budget = floor_nudged(self.d * states.len() as f64).max(0.0) as usize;
        let sampled: Vec<usize> =
            states.iter().map(|&s| usize::from(rng.random::<f64>() < self.mu.prob(s, 1))).collect();
        Self::resolve(budget, &sampled, actions);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_must_be_permutation() {
        assert!(PriorityOrder::new(vec![2, 0, 1], 3).is_ok());
        assert!(PriorityOrder::new(vec![0, 0, 1], 3).is_err());
        assert!(PriorityOrder::new(vec![0, 1], 3).is_err());
        assert!(PriorityOrder::new(vec![0, 1, 3], 3).is_err());
    }

    #[test]
    fn zero_budget_is_all_passive() {
        let c = priority_control(PriorityOrder::new(vec![0, 1], 2).unwrap(), 0.0);
        assert_eq!(c.assign(&[3, 5]).unwrap().as_slice(), &[3, 0, 5, 0]);
    }

    #[test]
    fn top_state_splits() {
        let c = priority_control(PriorityOrder::new(vec![1, 0], 2).unwrap(), 0.5);
        assert_eq!(c.assign(&[0, 10]).unwrap().as_slice(), &[0, 0, 5, 5]);
    }

    #[test]
    fn greedy_scan_hand_trace() {
        // n = 10, budget 4; mass 2 at state 2 (top), 3 at state 0, 5 at state 1
        let c = priority_control(PriorityOrder::new(vec![2, 0, 1], 3).unwrap(), 0.4);
        let a = c.assign(&[3, 5, 2]).unwrap();
        assert_eq!((a.count(2, 1), a.count(0, 1), a.count(1, 1)), (2, 2, 0));
        // with 5 at the top state the whole budget lands there
        let a = c.assign(&[2, 3, 5]).unwrap();
        assert_eq!((a.count(2, 1), a.count(0, 1), a.count(1, 1)), (4, 0, 0));
    }

    #[test]
    fn budget_beyond_population() {
        let c = priority_control(PriorityOrder::new(vec![0], 1).unwrap(), 1.5);
        assert!(c.assign(&[4]).is_err());
    }

    #[test]
    fn id_rule_forces_highest_ids() {
        let mut out = [9; 4];
        IdPolicy::resolve(2, &[0, 0, 0, 0], &mut out);
        assert_eq!(out, [0, 0, 1, 1]);
        IdPolicy::resolve(2, &[1, 1, 1, 0], &mut out);
        assert_eq!(out, [1, 1, 0, 0]);
        IdPolicy::resolve(2, &[1, 0, 0, 1], &mut out);
        assert_eq!(out, [1, 0, 0, 1]);
        IdPolicy::resolve(0, &[1, 1], &mut out[..2]);
        assert_eq!(&out[..2], &[0, 0]);
    }
}
