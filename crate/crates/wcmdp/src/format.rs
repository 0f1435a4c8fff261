//! JSON model files.
//!
//! ```json
//! {
//!   "num_states": 2, "num_actions": 2,
//!   "transitions": [[[1, 0], [0, 1]], [[1, 0], [0, 1]]],
//!   "rewards": [[0, 0], [0, 1]],
//!   "eq_constraints": { "C": [[[0], [0]], [[1], [1]]], "d": [0.5] },
//!   "finite_n_rule": "bandit_floor"
//! }
//! ```
//!
//! `transitions[a][i][j] = p(j | i, a)`, `rewards[a][i] = r(i, a)`, and the
//! constraint tensors are indexed `[action][state][constraint]`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wcmdp_core::dense::Dense;
use wcmdp_core::model::{validate_model, FiniteNRule, LinearConstraints, ModelSpec, Violation};

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid model ({} violation(s)): {}", .0.len(), join(.0))]
    Invalid(Vec<Violation>),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleFile {
    #[default]
    Constant,
    BanditFloor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EqFile {
    #[serde(rename = "C")]
    pub c: Vec<Vec<Vec<f64>>>,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IneqFile {
    #[serde(rename = "E")]
    pub e: Vec<Vec<Vec<f64>>>,
    pub f: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub num_states: usize,
    pub num_actions: usize,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eq_constraints: Option<EqFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ineq_constraints: Option<IneqFile>,
    #[serde(default)]
    pub finite_n_rule: RuleFile,
}

fn matrix(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<Dense, Violation> {
    if rows.is_empty() {
        return Ok(Dense::zeros(0, cols));
    }
    Dense::from_rows(rows).ok_or_else(|| Violation::Shape { what: format!("{what} has ragged rows") })
}

fn block(tensor: &[Vec<Vec<f64>>], rhs: &[f64], what: &str) -> Result<LinearConstraints, Violation> {
    let per_action = tensor
        .iter()
        .enumerate()
        .map(|(a, m)| matrix(m, rhs.len(), &format!("{what} for action {a}")))
        .collect::<Result<_, _>>()?;
    Ok(LinearConstraints { per_action, rhs: rhs.to_vec() })
}

fn shape<T>(r: Result<T, Violation>) -> Result<T, LoadError> {
    r.map_err(|v| LoadError::Invalid(vec![v]))
}

impl ModelFile {
    pub fn into_spec(self) -> Result<ModelSpec, LoadError> {
        let transitions = self
            .transitions
            .iter()
            .enumerate()
            .map(|(a, m)| shape(matrix(m, self.num_states, &format!("transitions[{a}]"))))
            .collect::<Result<Vec<_>, _>>()?;
        let eq_constraints = self.eq_constraints.as_ref().map(|e| shape(block(&e.c, &e.d, "C"))).transpose()?;
        let ineq_constraints = self.ineq_constraints.as_ref().map(|e| shape(block(&e.e, &e.f, "E"))).transpose()?;
        let spec = ModelSpec {
            num_states: self.num_states,
            num_actions: self.num_actions,
            transitions,
            rewards: self.rewards,
            eq_constraints,
            ineq_constraints,
            finite_n_rule: match self.finite_n_rule {
                RuleFile::Constant => FiniteNRule::Constant,
                RuleFile::BanditFloor => FiniteNRule::BanditFloor,
            },
        };
        let violations = validate_model(&spec);
        if violations.is_empty() {
            Ok(spec)
        } else {
            Err(LoadError::Invalid(violations))
        }
    }

    pub fn from_spec(spec: &ModelSpec) -> Self {
        let tensor = |b: &LinearConstraints| b.per_action.iter().map(Dense::to_rows).collect();
        Self {
            num_states: spec.num_states,
            num_actions: spec.num_actions,
            transitions: spec.transitions.iter().map(Dense::to_rows).collect(),
            rewards: spec.rewards.clone(),
            eq_constraints: spec.eq_constraints.as_ref().map(|b| EqFile { c: tensor(b), d: b.rhs.clone() }),
            ineq_constraints: spec.ineq_constraints.as_ref().map(|b| IneqFile { e: tensor(b), f: b.rhs.clone() }),
            finite_n_rule: match spec.finite_n_rule {
                FiniteNRule::Constant => RuleFile::Constant,
                FiniteNRule::BanditFloor => RuleFile::BanditFloor,
            },
        }
    }
}

pub fn parse_model(text: &str) -> Result<ModelSpec, LoadError> {
    serde_json::from_str::<ModelFile>(text)?.into_spec()
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelSpec, LoadError> {
    let path = path.as_ref();
    let text =
        std::fs::read_to_string(path).map_err(|source| LoadError::Io { path: path.display().to_string(), source })?;
    parse_model(&text)
}

pub fn model_to_json(spec: &ModelSpec) -> String {
    serde_json::to_string_pretty(&ModelFile::from_spec(spec)).expect("model files always serialize")
}
