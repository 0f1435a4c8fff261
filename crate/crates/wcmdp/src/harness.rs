//! Experiment sweeps: every (policy, n) cell is simulated for a number of
//! replications on a bounded thread pool, and the results are written as
//! `results.csv` and `summary.json`.
//!
//! Replication `r` of every cell uses random stream `r` of the experiment
//! seed, so policies and population sizes are compared on common random
//! numbers, and the output does not depend on scheduling.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wcmdp_core::baselines::{id_policy, lp_priority_order, priority_control, PriorityOrder};
use wcmdp_core::discrete::DiscreteControl;
use wcmdp_core::instances::{build_example, ExampleName};
use wcmdp_core::model::ModelSpec;
use wcmdp_core::pipeline::{build_from_relaxation, PipelineError, PolicyChoice, PolicySelection};
use wcmdp_core::relax::{policy_from_relaxation, solve_fluid_relaxation, RelaxError, RelaxationSolution};
use wcmdp_core::sim::{
    run_agent_replication, run_replication, AgentPolicy, InitialCondition, ReplicationOutput, SimConfig, SimError,
    SimResult,
};

use crate::format::{load_model, LoadError};
use crate::report::{ChainJson, PsiJson, SimulateReport};

pub const PRESETS: [&str; 3] = ["fig1", "fig2_left", "fig2_right"];
pub const PRESET_NS: [u64; 8] = [10, 20, 50, 100, 200, 500, 1000, 2000];

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("fluid relaxation is infeasible")]
    Infeasible,
    #[error("simulation failed for {policy} at n = {n}: {source}")]
    Simulation { policy: String, n: u64, source: SimError },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Other(#[from] Box<dyn std::error::Error + Send + Sync>),
}

impl HarnessError {
    /// 2 for bad input, 3 for an infeasible model, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Validation(_) | HarnessError::Load(_) => 2,
            HarnessError::Infeasible => 3,
            _ => 1,
        }
    }
}

fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> HarnessError {
    let context = context.into();
    move |source| HarnessError::Io { context, source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Builtin { builtin: String },
    Path { path: PathBuf },
}

impl ModelRef {
    pub fn name(&self) -> String {
        match self {
            ModelRef::Builtin { builtin } => builtin.clone(),
            ModelRef::Path { path } => {
                path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
            }
        }
    }

    pub fn load(&self) -> Result<ModelSpec, HarnessError> {
        match self {
            ModelRef::Builtin { builtin } => ExampleName::parse(builtin).map(build_example).ok_or_else(|| {
                HarnessError::Validation(format!(
                    "unknown built-in model {builtin:?}; expected one of {}",
                    ExampleName::ALL.map(ExampleName::as_str).join(", ")
                ))
            }),
            ModelRef::Path { path } => Ok(load_model(path)?),
        }
    }

    /// A path to an existing file, otherwise a built-in name.
    pub fn from_arg(arg: &str) -> Self {
        if Path::new(arg).exists() || ExampleName::parse(arg).is_none() {
            ModelRef::Path { path: arg.into() }
        } else {
            ModelRef::Builtin { builtin: arg.into() }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiSetting {
    /// `mu` when it passes the chain condition, otherwise the uniform policy.
    #[default]
    Auto,
    Mu,
    Uniform,
}

impl PiSetting {
    pub fn selection(self) -> PolicySelection {
        match self {
            PiSetting::Auto => PolicySelection::Auto,
            PiSetting::Mu => PolicySelection::Force(PolicyChoice::Mu),
            PiSetting::Uniform => PolicySelection::Force(PolicyChoice::Uniform),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    FluidDiscrete {
        #[serde(default)]
        pi: PiSetting,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    /// State-priority rule; the order defaults to the LP-priority order.
    Priority {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        order: Option<Vec<usize>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
    Id {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        label: Option<String>,
    },
}

impl PolicySpec {
    pub fn label(&self) -> String {
        match self {
            PolicySpec::FluidDiscrete { label, .. } => label.clone().unwrap_or_else(|| "fluid_discrete".into()),
            PolicySpec::Priority { label, .. } => label.clone().unwrap_or_else(|| "priority".into()),
            PolicySpec::Id { label } => label.clone().unwrap_or_else(|| "id".into()),
        }
    }

    pub fn needs_bandit(&self) -> bool {
        !matches!(self, PolicySpec::FluidDiscrete { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelRef,
    pub policies: Vec<PolicySpec>,
    pub n: Vec<u64>,
    pub horizon: usize,
    /// Defaults to `horizon / 5`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    pub replications: usize,
    pub seed: u64,
    /// Every process starts in this state.
    #[serde(default)]
    pub initial_state: usize,
    pub output_dir: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
}

impl ExperimentConfig {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.horizon / 5)
    }

    pub fn sim_config(&self, n: u64) -> SimConfig {
        SimConfig::new(n, self.horizon, InitialCondition::AllIn(self.initial_state))
            .with_burn_in(self.burn_in())
            .with_replications(self.replications)
            .with_seed(self.seed)
    }

    /// Checks everything that does not need the model.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: &str| Err(HarnessError::Validation(m.into()));
        if self.policies.is_empty() {
            return fail("policy list is empty");
        }
        if self.n.is_empty() {
            return fail("n list is empty");
        }
        if self.n[0] == 0 || self.n.windows(2).any(|w| w[0] >= w[1]) {
            return fail("n list must be positive and strictly increasing");
        }
        if self.horizon == 0 || self.burn_in() >= self.horizon {
            return fail("need 0 <= burn_in < horizon");
        }
        if self.replications == 0 {
            return fail("replications must be positive");
        }
        if self.threads == Some(0) {
            return fail("threads must be positive");
        }
        let mut labels: Vec<String> = self.policies.iter().map(PolicySpec::label).collect();
        labels.sort();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return fail("policy labels must be unique");
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Validation(format!("malformed experiment config: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io(format!("cannot read {}", path.display())))?;
        Self::from_json(&text)
    }
}

/// A ready-to-run policy.
pub enum Runner {
    Frequency(Box<dyn DiscreteControl + Send + Sync>),
    Agent(Box<dyn AgentPolicy + Send + Sync>),
}

impl Runner {
    pub fn replication(&self, spec: &ModelSpec, cfg: &SimConfig, rep: usize) -> Result<ReplicationOutput, SimError> {
        match self {
            Runner::Frequency(c) => run_replication(spec, c, cfg, rep),
            Runner::Agent(p) => run_agent_replication(spec, p, cfg, rep),
        }
    }

    /// All replications, in parallel on the current rayon pool.
    pub fn simulate(&self, spec: &ModelSpec, cfg: &SimConfig) -> Result<SimResult, SimError> {
        cfg.validate()?;
        let outputs = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let cfg = SimConfig { record_trajectory: cfg.record_trajectory && rep == 0, ..cfg.clone() };
                self.replication(spec, &cfg, rep)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SimResult::from_replications(outputs))
    }
}

/// What was built for one configured policy.
#[derive(Debug, Clone, Serialize)]
pub struct PolicyMeta {
    pub label: String,
    pub kind: &'static str,
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen_pi: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition_mu: Option<ChainJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub condition_uniform: Option<ChainJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi: Option<PsiJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<usize>>,
}

impl PolicyMeta {
    fn new(label: String, kind: &'static str) -> Self {
        Self {
            label,
            kind,
            status: "ok",
            reason: None,
            chosen_pi: None,
            condition_mu: None,
            condition_uniform: None,
            psi: None,
            order: None,
        }
    }
}

pub struct Prepared {
    pub meta: PolicyMeta,
    pub runner: Option<Runner>,
}

/// Builds one policy. A fluid-discrete policy whose chain condition fails is
/// returned with `status = "skipped"` and no runner.
pub fn prepare_policy(spec: &ModelSpec, sol: &RelaxationSolution, p: &PolicySpec) -> Result<Prepared, HarnessError> {
    let label = p.label();
    let d = if p.needs_bandit() {
        Some(
            spec.bandit_assumption()
                .map_err(|e| HarnessError::Validation(format!("policy {label} needs a restless-bandit model: {e}")))?,
        )
    } else {
        None
    };
    match p {
        PolicySpec::FluidDiscrete { pi, .. } => {
            let mut meta = PolicyMeta::new(label, "fluid_discrete");
            match build_from_relaxation(spec, sol.clone(), pi.selection()) {
                Ok((control, report)) => {
                    meta.chosen_pi = Some(report.chosen.as_str());
                    meta.condition_mu = Some((&report.mu_report).into());
                    meta.condition_uniform = Some((&report.uniform_report).into());
                    meta.psi = Some((&report.psi).into());
                    Ok(Prepared { meta, runner: Some(Runner::Frequency(Box::new(control))) })
                }
                Err(PipelineError::ConditionFailed { mu, uniform }) => {
                    meta.status = "skipped";
                    meta.reason = Some("neither mu nor the uniform policy passes the chain condition".into());
                    meta.condition_mu = Some((&mu).into());
                    meta.condition_uniform = Some((&uniform).into());
                    Ok(Prepared { meta, runner: None })
                }
                Err(PipelineError::Relax(RelaxError::Infeasible)) => Err(HarnessError::Infeasible),
                Err(e) => Err(HarnessError::Validation(format!("cannot build {}: {e}", meta.label))),
            }
        }
        PolicySpec::Priority { order, .. } => {
            let mut meta = PolicyMeta::new(label, "priority");
            let order = match order {
                Some(o) => PriorityOrder::new(o.clone(), spec.num_states)
                    .map_err(|e| HarnessError::Validation(e.to_string()))?,
                None => lp_priority_order(sol),
            };
            meta.order = Some(order.as_slice().to_vec());
            let d = d.expect("checked above");
            Ok(Prepared { meta, runner: Some(Runner::Frequency(Box::new(priority_control(order, d)))) })
        }
        PolicySpec::Id { .. } => {
            let meta = PolicyMeta::new(label, "id");
            let policy = id_policy(policy_from_relaxation(sol), d.expect("checked above"));
            Ok(Prepared { meta, runner: Some(Runner::Agent(Box::new(policy))) })
        }
    }
}

/// Solves the relaxation, mapping infeasibility to its own error.
pub fn solve(spec: &ModelSpec) -> Result<RelaxationSolution, HarnessError> {
    solve_fluid_relaxation(spec).map_err(|e| match e {
        RelaxError::Infeasible => HarnessError::Infeasible,
        other => HarnessError::Validation(other.to_string()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    pub policy: String,
    pub n: u64,
    pub replication: usize,
    pub gain: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CellSummary {
    pub policy: String,
    pub n: u64,
    pub mean_gain: f64,
    pub stderr: f64,
    pub g_r: f64,
    /// `(g_r - mean_gain) / g_r`
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub model: String,
    pub g_r: f64,
    pub horizon: usize,
    pub burn_in: usize,
    pub replications: usize,
    pub seed: u64,
    pub initial_state: usize,
    pub policies: Vec<PolicyMeta>,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Summary,
}

/// Runs every (policy, n, replication) job and writes the output files.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepOutcome, HarnessError> {
    cfg.validate()?;
    let spec = cfg.model.load()?;
    if cfg.initial_state >= spec.num_states {
        return Err(HarnessError::Validation(format!(
            "initial_state {} is out of range for {} states",
            cfg.initial_state, spec.num_states
        )));
    }
    let sol = solve(&spec)?;
    let prepared = cfg.policies.iter().map(|p| prepare_policy(&spec, &sol, p)).collect::<Result<Vec<_>, _>>()?;

    let jobs: Vec<(usize, u64, usize)> = prepared
        .iter()
        .enumerate()
        .filter(|(_, p)| p.runner.is_some())
        .flat_map(|(k, _)| cfg.n.iter().flat_map(move |&n| (0..cfg.replications).map(move |r| (k, n, r))))
        .collect();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cfg.threads {
        pool = pool.num_threads(t);
    }
    let pool = pool.build().map_err(|e| HarnessError::Other(Box::new(e)))?;
    let outputs: Vec<ReplicationOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|&(k, n, rep)| {
                let runner = prepared[k].runner.as_ref().expect("jobs only for runnable policies");
                runner.replication(&spec, &cfg.sim_config(n), rep).map_err(|source| HarnessError::Simulation {
                    policy: prepared[k].meta.label.clone(),
                    n,
                    source,
                })
            })
            .collect::<Result<_, _>>()
    })?;

    let model = cfg.model.name();
    let rows: Vec<ResultRow> = jobs
        .iter()
        .zip(&outputs)
        .map(|(&(k, n, replication), o)| ResultRow {
            model: model.clone(),
            policy: prepared[k].meta.label.clone(),
            n,
            replication,
            gain: o.gain,
        })
        .collect();

    let mut cells = Vec::new();
    let mut outputs = outputs.into_iter();
    for p in prepared.iter().filter(|p| p.runner.is_some()) {
        for &n in &cfg.n {
            let cell: Vec<ReplicationOutput> = outputs.by_ref().take(cfg.replications).collect();
            let r = SimResult::from_replications(cell);
            cells.push(CellSummary {
                policy: p.meta.label.clone(),
                n,
                mean_gain: r.gain_mean,
                stderr: r.gain_stderr,
                g_r: sol.g_r,
                gap: SimulateReport::gap(sol.g_r, r.gain_mean),
            });
        }
    }

    let summary = Summary {
        model,
        g_r: sol.g_r,
        horizon: cfg.horizon,
        burn_in: cfg.burn_in(),
        replications: cfg.replications,
        seed: cfg.seed,
        initial_state: cfg.initial_state,
        policies: prepared.into_iter().map(|p| p.meta).collect(),
        cells,
    };
    write_outputs(&cfg.output_dir, &rows, &summary)?;
    Ok(SweepOutcome { rows, summary })
}

fn write_outputs(dir: &Path, rows: &[ResultRow], summary: &Summary) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io(format!("cannot create {}", dir.display())))?;
    let csv_path = dir.join("results.csv");
    let mut w = csv::Writer::from_path(&csv_path)
        .map_err(|e| HarnessError::Other(format!("cannot write {}: {e}", csv_path.display()).into()))?;
    for row in rows {
        w.serialize(row).map_err(|e| HarnessError::Other(Box::new(e)))?;
    }
    w.flush().map_err(io(format!("cannot write {}", csv_path.display())))?;
    let json = serde_json::to_string_pretty(summary).map_err(|e| HarnessError::Other(Box::new(e)))?;
    fs::write(dir.join("summary.json"), json + "\n").map_err(io("cannot write summary.json"))?;
    Ok(())
}

/// Reads `results.csv` back.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>, HarnessError> {
    let mut r = csv::Reader::from_path(path.as_ref()).map_err(|e| HarnessError::Other(Box::new(e)))?;
    r.deserialize().collect::<Result<_, _>>().map_err(|e| HarnessError::Other(Box::new(e)))
}

/// Configuration regenerating one of the published comparison panels.
pub fn reproduce(name: &str) -> Result<ExperimentConfig, HarnessError> {
    let fluid = PolicySpec::FluidDiscrete { pi: PiSetting::Auto, label: None };
    let (model, policies) = match name {
        "fig1" => ("taxi", vec![fluid]),
        "fig2_left" => (
            "nonindexable",
            vec![fluid, PolicySpec::Priority { order: None, label: None }, PolicySpec::Id { label: None }],
        ),
        "fig2_right" => ("attractor_fail", vec![fluid, PolicySpec::Priority { order: None, label: None }]),
        other => {
            return Err(HarnessError::Validation(format!(
                "unknown preset {other:?}; valid presets: {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(ExperimentConfig {
        model: ModelRef::Builtin { builtin: model.into() },
        policies,
        n: PRESET_NS.to_vec(),
        horizon: 5000,
        burn_in: Some(1000),
        replications: 10,
        seed: 20240101,
        initial_state: 0,
        output_dir: PathBuf::from("out").join(name),
        threads: None,
    })
}
