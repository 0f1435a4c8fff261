//! Serializable views of solver, checker and simulation results.

use serde::Serialize;
use wcmdp_core::chain::ChainReport;
use wcmdp_core::fluid::{EscapeReport, PsiVariant};
use wcmdp_core::model::{ModelSpec, StateActionMeasure};
use wcmdp_core::relax::{constraint_activity, RelaxationSolution};
use wcmdp_core::sim::SimResult;

fn table(y: &StateActionMeasure) -> Vec<Vec<f64>> {
    y.table().to_rows()
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub g_r: f64,
    /// `y_star[i][a]`
    pub y_star: Vec<Vec<f64>>,
    pub x_star: Vec<f64>,
    pub support: Vec<usize>,
    /// `sum_a y*(a) C(a) - d` per equality constraint.
    pub eq_residual: Vec<f64>,
    /// `f - sum_a y*(a) E(a)` per inequality constraint.
    pub ineq_slack: Vec<f64>,
    pub balance_residual: f64,
    pub pivots: usize,
}

impl SolveReport {
    pub fn new(spec: &ModelSpec, sol: &RelaxationSolution) -> Self {
        let act = constraint_activity(spec, &sol.y_star);
        Self {
            g_r: sol.g_r,
            y_star: table(&sol.y_star),
            x_star: sol.x_star.to_vec(),
            support: sol.support.clone(),
            eq_residual: act.eq_residual,
            ineq_slack: act.ineq_slack,
            balance_residual: act.balance_residual,
            pivots: sol.pivots,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ChainJson {
    pub satisfied: bool,
    pub unichain: bool,
    pub aperiodic: bool,
    pub support_in_recurrent: bool,
    pub recurrent_class: Option<Vec<usize>>,
    pub period: Option<usize>,
    pub closed_classes: usize,
}

impl From<&ChainReport> for ChainJson {
    fn from(r: &ChainReport) -> Self {
        Self {
            satisfied: r.satisfied(),
            unichain: r.unichain,
            aperiodic: r.aperiodic,
            support_in_recurrent: r.support_in_recurrent,
            recurrent_class: r.recurrent_class.clone(),
            period: r.period,
            closed_classes: r.closed_classes,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum PsiJson {
    Inequality { gamma: f64 },
    Bandit { d: f64 },
    Pure,
    Custom,
}

impl From<&PsiVariant> for PsiJson {
    fn from(p: &PsiVariant) -> Self {
        match p {
            PsiVariant::Inequality { gamma } => Self::Inequality { gamma: *gamma },
            PsiVariant::Bandit { d } => Self::Bandit { d: *d },
            PsiVariant::Pure => Self::Pure,
            PsiVariant::Custom(_) => Self::Custom,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeJson {
    pub samples: usize,
    pub all_escaped: bool,
    pub vacuous: bool,
    pub min_escape_time: Option<usize>,
    pub max_escape_time: Option<usize>,
    pub stuck_samples: usize,
}

impl From<&EscapeReport> for EscapeJson {
    fn from(r: &EscapeReport) -> Self {
        Self {
            samples: r.escape_times.len(),
            all_escaped: r.all_escaped,
            vacuous: r.vacuous,
            min_escape_time: r.min_escape_time,
            max_escape_time: r.max_escape_time,
            stuck_samples: r.escape_times.iter().filter(|t| t.is_none()).count(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceJson {
    /// Initial condition: all mass in this state.
    pub start_state: usize,
    /// Steps until `||x(t) - x*||_inf < tol`; null if not reached.
    pub steps: Option<usize>,
    pub beta_monotone: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FluidCheckReport {
    pub policy: String,
    pub condition: ChainJson,
    pub psi: Option<PsiJson>,
    pub boundary_escape: Option<EscapeJson>,
    pub tolerance: f64,
    pub convergence: Vec<ConvergenceJson>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub policy: String,
    pub n: u64,
    pub horizon: usize,
    pub burn_in: usize,
    pub replications: usize,
    pub seed: u64,
    pub initial_state: usize,
    pub g_r: f64,
    pub gain_mean: f64,
    pub gain_stderr: f64,
    pub gap: f64,
    pub gains: Vec<f64>,
}

impl SimulateReport {
    pub fn gap(g_r: f64, gain: f64) -> f64 {
        (g_r - gain) / g_r
    }

    pub fn from_result(
        policy: String,
        cfg: &wcmdp_core::sim::SimConfig,
        initial_state: usize,
        g_r: f64,
        r: &SimResult,
    ) -> Self {
        Self {
            policy,
            n: cfg.n,
            horizon: cfg.horizon,
            burn_in: cfg.burn_in,
            replications: cfg.replications,
            seed: cfg.seed,
            initial_state,
            g_r,
            gain_mean: r.gain_mean,
            gain_stderr: r.gain_stderr,
            gap: Self::gap(g_r, r.gain_mean),
            gains: r.gains.clone(),
        }
    }
}
