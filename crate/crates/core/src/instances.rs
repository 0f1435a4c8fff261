//! Built-in problem instances: the electric-taxi fleet, two three-state
//! restless bandits with known pathologies for priority policies, and a
//! two-state toy with identity kernels.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::dense::Dense;
use crate::model::{FiniteNRule, LinearConstraints, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExampleName {
    Taxi,
    Nonindexable,
    AttractorFail,
    TwoStateToy,
}

impl ExampleName {
    pub const ALL: [ExampleName; 4] =
        [ExampleName::Taxi, ExampleName::Nonindexable, ExampleName::AttractorFail, ExampleName::TwoStateToy];

    pub fn as_str(self) -> &'static str {
        match self {
            ExampleName::Taxi => "taxi",
            ExampleName::Nonindexable => "nonindexable",
            ExampleName::AttractorFail => "attractor_fail",
            ExampleName::TwoStateToy => "two_state_toy",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.as_str() == name)
    }
}

impl fmt::Display for ExampleName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn build_example(name: ExampleName) -> ModelSpec {
    match name {
        ExampleName::Taxi => taxi(),
        ExampleName::Nonindexable => nonindexable(),
        ExampleName::AttractorFail => attractor_fail(),
        ExampleName::TwoStateToy => two_state_toy(),
    }
}

const TAXI_LEVELS: usize = 8;
/// Poisson means of the energy used per period: airport, city center.
const TAXI_LAMBDA: [f64; 2] = [2.0, 1.0];
const TAXI_FARE_AIRPORT: f64 = 3.0;
const TAXI_FARE_CITY: f64 = 2.5;
const TAXI_PENALTY: [f64; 2] = [3.0, 2.0];
const TAXI_CHARGE_COST: f64 = 2.0;
const TAXI_MAX_CHARGING: f64 = 0.7;
const TAXI_MAX_NOT_AIRPORT: f64 = 0.9;

fn poisson_pmf(lambda: f64, k: usize) -> f64 {
    let mut p = libm::exp(-lambda);
    for j in 1..=k {
        p *= lambda / j as f64;
    }
    p
}

/// Battery levels 0..=7; actions airport (0), city (1), charge (2).
fn taxi() -> ModelSpec {
    let s = TAXI_LEVELS;
    let top = s - 1;
    let mut transitions = Vec::with_capacity(3);
    let mut rewards = Vec::with_capacity(3);

    for (a, &lambda) in TAXI_LAMBDA.iter().enumerate() {
        let pmf: Vec<f64> = (0..s).map(|k| poisson_pmf(lambda, k)).collect();
        let mut p = Dense::zeros(s, s);
        let mut r = vec![0.0; s];
        for i in 0..s {
            // P(X < i) and E[X 1{X < i}]
            let below: f64 = pmf[..i].iter().sum();
            let mean_below: f64 = pmf[..i].iter().enumerate().map(|(k, &q)| k as f64 * q).sum();
            for j in 1..=i {
                p[(i, j)] = pmf[i - j];
            }
            // the residual tail lumps at the empty battery, so the row sums to 1
            p[(i, 0)] = 1.0 - below;
            let depleted = 1.0 - below;
            r[i] = if a == 0 {
                TAXI_FARE_AIRPORT * below - TAXI_PENALTY[0] * depleted
            } else {
                TAXI_FARE_CITY * mean_below - TAXI_PENALTY[1] * depleted
            };
        }
        transitions.push(p);
        rewards.push(r);
    }

    transitions.push(Dense::from_fn(s, s, |i, j| if j == (i + 2).min(top) { 1.0 } else { 0.0 }));
    rewards.push(vec![-TAXI_CHARGE_COST; s]);

    // column 0: charging spots; column 1: everything except the airport
    let ineq = LinearConstraints {
        per_action: vec![
            Dense::zeros(s, 2),
            Dense::from_fn(s, 2, |_, k| if k == 1 { 1.0 } else { 0.0 }),
            Dense::from_fn(s, 2, |_, _| 1.0),
        ],
        rhs: vec![TAXI_MAX_CHARGING, TAXI_MAX_NOT_AIRPORT],
    };

    ModelSpec {
        num_states: s,
        num_actions: 3,
        transitions,
        rewards,
        eq_constraints: None,
        ineq_constraints: Some(ineq),
        finite_n_rule: FiniteNRule::Constant,
    }
}

fn rows3(m: [[f64; 3]; 3]) -> Dense {
    Dense::from_fn(3, 3, |i, j| m[i][j])
}

fn nonindexable() -> ModelSpec {
    let p0 = rows3([[0.0050, 0.7930, 0.2020], [0.0270, 0.5580, 0.4150], [0.7360, 0.2490, 0.0150]]);
    let p1 = rows3([[0.7180, 0.2540, 0.0280], [0.3470, 0.0970, 0.5560], [0.0150, 0.9560, 0.0290]]);
    ModelSpec::bandit(vec![p0, p1], vec![vec![0.0; 3], vec![0.6990, 0.3620, 0.7150]], 0.5)
}

/// Kernels of the instance whose priority-policy fluid limit has no global
/// attractor, as published (4 digits). Three of the rows sum to 1 +- 1e-4.
pub const ATTRACTOR_FAIL_RAW: [[[f64; 3]; 3]; 2] = [
    [[0.0223, 0.1023, 0.8754], [0.0343, 0.1718, 0.7940], [0.5232, 0.4552, 0.0215]],
    [[0.1487, 0.3044, 0.5469], [0.5685, 0.4112, 0.0204], [0.2527, 0.2731, 0.4742]],
];

fn attractor_fail() -> ModelSpec {
    let [p0, p1] = ATTRACTOR_FAIL_RAW;
    let mut spec = ModelSpec::bandit(vec![rows3(p0), rows3(p1)], vec![vec![0.0; 3], vec![0.3740, 0.1174, 0.0787]], 0.4);
    spec.renormalize_rows();
    spec
}

fn two_state_toy() -> ModelSpec {
    ModelSpec::bandit(vec![Dense::identity(2); 2], vec![vec![0.0, 0.0], vec![0.0, 1.0]], 0.5)
}
