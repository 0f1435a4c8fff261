//! Command-line interface. Every command prints JSON on standard output.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use wcmdp_core::baselines::{id_policy, lp_priority_order, priority_control, PriorityAgent, PriorityOrder};
use wcmdp_core::chain::check_policy_condition;
use wcmdp_core::fluid::{check_condition_general, compose_phi, converge, FluidControlSpec};
use wcmdp_core::instances::{build_example, ExampleName};
use wcmdp_core::model::{ModelSpec, OccupancyMeasure};
use wcmdp_core::pipeline::{build_from_relaxation, PipelineError, PolicyChoice};
use wcmdp_core::sim::{InitialCondition, SimConfig};

use crate::format::model_to_json;
use crate::harness::{reproduce, run_sweep, solve, ExperimentConfig, HarnessError, ModelRef, PiSetting, Runner};
use crate::report::{ConvergenceJson, FluidCheckReport, SimulateReport, SolveReport};

#[derive(Debug, Parser)]
#[command(name = "wcmdp", version, about = "Fluid controls for weakly coupled MDPs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Mu,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimPolicy {
    /// Rounded composite fluid control.
    FluidDiscrete,
    /// State-priority rule (bandit models).
    Priority,
    /// Per-arm priority rule, simulated arm by arm (bandit models).
    PriorityAgent,
    /// ID policy (bandit models).
    Id,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PiArg {
    Auto,
    Mu,
    Uniform,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the fluid relaxation.
    Solve {
        /// Model file, or a built-in model name.
        model: String,
    },
    /// Check the chain condition for a policy and the convergence of the fluid dynamics.
    FluidCheck {
        model: String,
        #[arg(long, value_enum, default_value = "mu")]
        policy: PolicyArg,
        /// Boundary points sampled by the escape checker.
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 1000)]
        escape_horizon: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_steps: usize,
    },
    /// Simulate n processes under one policy.
    Simulate {
        model: String,
        #[arg(long, value_enum)]
        policy: SimPolicy,
        #[arg(long)]
        n: u64,
        #[arg(long = "t")]
        horizon: usize,
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to a fifth of the horizon.
        #[arg(long)]
        burn_in: Option<usize>,
        #[arg(long, default_value_t = 0)]
        initial_state: usize,
        /// Single-process policy behind the fluid control.
        #[arg(long, value_enum, default_value = "auto")]
        pi: PiArg,
        /// Priority order, highest first (defaults to the LP-priority order).
        #[arg(long, value_delimiter = ',')]
        order: Option<Vec<usize>>,
        /// Write (t, state, frequency) rows of the first replication.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Run an experiment sweep described by a JSON file.
    Sweep { config: PathBuf },
    /// Run a preset sweep: fig1, fig2_left or fig2_right.
    Reproduce {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print the preset configuration without running it.
        #[arg(long)]
        dry_run: bool,
    },
    /// Write a built-in model as a model file.
    Example {
        name: String,
        #[arg(long)]
        emit: Option<PathBuf>,
    },
}

fn load(model: &str) -> Result<ModelSpec, HarnessError> {
    ModelRef::from_arg(model).load()
}

/// A closed stdout (for example a pipe into `head`) is not an error.
fn print_json(value: &impl serde::Serialize) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(value).expect("reports always serialize");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn bandit_budget(spec: &ModelSpec, what: &str) -> Result<f64, HarnessError> {
    spec.bandit_assumption().map_err(|e| HarnessError::Validation(format!("{what} needs a restless-bandit model: {e}")))
}

pub fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Solve { model } => {
            let spec = load(&model)?;
            let sol = solve(&spec)?;
            print_json(&SolveReport::new(&spec, &sol));
        }
        Command::FluidCheck { model, policy, samples, escape_horizon, seed, tol, max_steps } => {
            let spec = load(&model)?;
            let sol = solve(&spec)?;
            let choice = match policy {
                PolicyArg::Mu => PolicyChoice::Mu,
                PolicyArg::Uniform => PolicyChoice::Uniform,
            };
            let pi = choice.policy(&sol, &spec);
            let condition = check_policy_condition(&pi, &spec, &sol.support);
            let mut report = FluidCheckReport {
                policy: choice.as_str().into(),
                condition: (&condition).into(),
                psi: None,
                boundary_escape: None,
                tolerance: tol,
                convergence: Vec::new(),
            };
            if let Ok(fc) = FluidControlSpec::for_model(&spec, &sol, pi) {
                report.psi = Some((&fc.psi_variant).into());
                let phi = compose_phi(fc).map_err(|e| HarnessError::Validation(e.to_string()))?;
                let escape =
                    check_condition_general(phi.psi(), &spec, &sol.x_star, &sol.support, escape_horizon, samples, seed);
                report.boundary_escape = Some((&escape).into());
                if condition.satisfied() {
                    for s in 0..spec.num_states {
                        let c =
                            converge(&phi, &OccupancyMeasure::point_mass(spec.num_states, s), tol, max_steps, &spec);
                        report.convergence.push(ConvergenceJson {
                            start_state: s,
                            steps: c.steps,
                            beta_monotone: c.max_beta_drop <= 1e-12,
                        });
                    }
                }
            }
            print_json(&report);
        }
        Command::Simulate { model, policy, n, horizon, reps, seed, burn_in, initial_state, pi, order, trace } => {
            let spec = load(&model)?;
            let sol = solve(&spec)?;
            let mut cfg = SimConfig::new(n, horizon, InitialCondition::AllIn(initial_state))
                .with_replications(reps)
                .with_seed(seed);
            if let Some(b) = burn_in {
                cfg = cfg.with_burn_in(b);
            }
            cfg.record_trajectory = trace.is_some();
            cfg.validate().map_err(|e| HarnessError::Validation(e.to_string()))?;
            cfg.initial.counts(n, spec.num_states).map_err(|e| HarnessError::Validation(e.to_string()))?;

            let priority_order = || -> Result<PriorityOrder, HarnessError> {
                match &order {
                    Some(o) => PriorityOrder::new(o.clone(), spec.num_states)
                        .map_err(|e| HarnessError::Validation(e.to_string())),
                    None => Ok(lp_priority_order(&sol)),
                }
            };
            let runner = match policy {
                SimPolicy::FluidDiscrete => {
                    let pi = match pi {
                        PiArg::Auto => PiSetting::Auto,
                        PiArg::Mu => PiSetting::Mu,
                        PiArg::Uniform => PiSetting::Uniform,
                    };
                    let (control, _) =
                        build_from_relaxation(&spec, sol.clone(), pi.selection()).map_err(|e| match e {
                            PipelineError::ConditionFailed { .. } => HarnessError::Validation(format!(
                                "{e}; pass --pi mu or --pi uniform to simulate anyway"
                            )),
                            other => HarnessError::Validation(other.to_string()),
                        })?;
                    Runner::Frequency(Box::new(control))
                }
                SimPolicy::Priority => {
                    Runner::Frequency(Box::new(priority_control(priority_order()?, bandit_budget(&spec, "priority")?)))
                }
                SimPolicy::PriorityAgent => Runner::Agent(Box::new(PriorityAgent {
                    order: priority_order()?,
                    d: bandit_budget(&spec, "priority")?,
                })),
                SimPolicy::Id => Runner::Agent(Box::new(id_policy(
                    wcmdp_core::relax::policy_from_relaxation(&sol),
                    bandit_budget(&spec, "id")?,
                ))),
            };
            let result = runner.simulate(&spec, &cfg).map_err(|e| HarnessError::Simulation {
                policy: format!("{policy:?}"),
                n,
                source: e,
            })?;
            if let (Some(path), Some(tr)) = (&trace, &result.trajectory) {
                write_trace(path, tr, n)?;
            }
            let name = policy.to_possible_value().expect("no skipped variants").get_name().to_owned();
            print_json(&SimulateReport::from_result(name, &cfg, initial_state, sol.g_r, &result));
        }
        Command::Sweep { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print_json(&run_sweep(&cfg)?.summary);
        }
        Command::Reproduce { name, out, dry_run } => {
            let mut cfg = reproduce(&name)?;
            if let Some(out) = out {
                cfg.output_dir = out;
            }
            if dry_run {
                print_json(&cfg);
            } else {
                std::fs::create_dir_all(&cfg.output_dir).map_err(|source| HarnessError::Io {
                    context: format!("cannot create {}", cfg.output_dir.display()),
                    source,
                })?;
                let text = serde_json::to_string_pretty(&cfg).expect("configs always serialize") + "\n";
                std::fs::write(cfg.output_dir.join("config.json"), text)
                    .map_err(|source| HarnessError::Io { context: "cannot write config.json".into(), source })?;
                print_json(&run_sweep(&cfg)?.summary);
            }
        }
        Command::Example { name, emit } => {
            let example = ExampleName::parse(&name).ok_or_else(|| {
                HarnessError::Validation(format!(
                    "unknown example {name:?}; valid examples: {}",
                    ExampleName::ALL.map(ExampleName::as_str).join(", ")
                ))
            })?;
            let text = model_to_json(&build_example(example)) + "\n";
            match emit {
                Some(path) => std::fs::write(&path, text).map_err(|source| HarnessError::Io {
                    context: format!("cannot write {}", path.display()),
                    source,
                })?,
                None => {
                    use std::io::Write;
                    let _ = std::io::stdout().lock().write_all(text.as_bytes());
                }
            }
        }
    }
    Ok(())
}

fn write_trace(path: &std::path::Path, trajectory: &[Vec<u64>], n: u64) -> Result<(), HarnessError> {
    let err = |e: csv::Error| HarnessError::Other(format!("cannot write {}: {e}", path.display()).into());
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["t", "state", "frequency"]).map_err(err)?;
    for (t, counts) in trajectory.iter().enumerate() {
        for (s, &c) in counts.iter().enumerate() {
            w.write_record([t.to_string(), s.to_string(), (c as f64 / n as f64).to_string()]).map_err(err)?;
        }
    }
    w.flush().map_err(|source| HarnessError::Io { context: format!("cannot write {}", path.display()), source })
}
