//! End-to-end construction of the fluid-discrete control: solve the
//! relaxation, pick a single-process policy that passes the chain condition,
//! build `psi` and `phi`, and round `phi` onto `Y_n`.

use crate::chain::{check_policy_condition, ChainReport};
use crate::discrete::{
    round_bandit_counts, round_inequality_counts, DiscreteAssignment, DiscreteControl, DiscreteError,
};
use crate::fluid::{compose_phi, CompositeControl, FluidControl, FluidControlSpec, FluidError, PsiVariant};
use crate::model::{ModelSpec, SinglePolicy};
use crate::relax::{policy_from_relaxation, solve_fluid_relaxation, uniform_policy, RelaxError, RelaxationSolution};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyChoice {
    /// `mu(a|i) = y*(i,a) / x*(i)` on the support.
    Mu,
    /// Every action equally likely.
    Uniform,
}

impl PolicyChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyChoice::Mu => "mu",
            PolicyChoice::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mu" => Some(PolicyChoice::Mu),
            "uniform" | "nu" => Some(PolicyChoice::Uniform),
            _ => None,
        }
    }

    pub fn policy(self, sol: &RelaxationSolution, spec: &ModelSpec) -> SinglePolicy {
        match self {
            PolicyChoice::Mu => policy_from_relaxation(sol),
            PolicyChoice::Uniform => uniform_policy(spec),
        }
    }
}

/// Which policy to use: `Auto` takes `mu` when it passes the condition and
/// the uniform policy otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicySelection {
    Auto,
    Force(PolicyChoice),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Relax(#[from] RelaxError),
    #[error("neither mu nor the uniform policy is unichain and aperiodic with the support recurrent")]
    ConditionFailed { mu: ChainReport, uniform: ChainReport },
    #[error(transparent)]
    Fluid(#[from] FluidError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rounding {
    Inequality,
    Bandit { d: f64 },
}

/// `phi_n`: the composite fluid control followed by lattice rounding.
#[derive(Debug, Clone)]
pub struct FluidDiscreteControl {
    pub phi: CompositeControl,
    pub rounding: Rounding,
}

impl DiscreteControl for FluidDiscreteControl {
    fn assign(&self, state_counts: &[u64]) -> Result<DiscreteAssignment, DiscreteError> {
        let n: u64 = state_counts.iter().sum();
        let x: alloc::vec::Vec<f64> = state_counts.iter().map(|&c| c as f64 / n as f64).collect();
        let y = self.phi.apply(&x);
        match self.rounding {
            Rounding::Inequality => round_inequality_counts(&y, state_counts),
            Rounding::Bandit { d } => round_bandit_counts(&y, state_counts, d),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineReport {
    pub relaxation: RelaxationSolution,
    pub chosen: PolicyChoice,
    pub mu_report: ChainReport,
    pub uniform_report: ChainReport,
    /// `gamma` for the resource-allocation `psi`, `d` for the bandit `psi`.
    pub psi: PsiVariant,
}

/// Builds `phi_n` for `spec`.
pub fn build_fluid_discrete(
    spec: &ModelSpec,
    selection: PolicySelection,
) -> Result<(FluidDiscreteControl, PipelineReport), PipelineError> {
    let sol = solve_fluid_relaxation(spec)?;
    build_from_relaxation(spec, sol, selection)
}

pub fn build_from_relaxation(
    spec: &ModelSpec,
    sol: RelaxationSolution,
    selection: PolicySelection,
) -> Result<(FluidDiscreteControl, PipelineReport), PipelineError> {
    let mu_report = check_policy_condition(&PolicyChoice::Mu.policy(&sol, spec), spec, &sol.support);
    let uniform_report = check_policy_condition(&PolicyChoice::Uniform.policy(&sol, spec), spec, &sol.support);
    let chosen = match selection {
        PolicySelection::Force(c) => c,
        PolicySelection::Auto if mu_report.satisfied() => PolicyChoice::Mu,
        PolicySelection::Auto if uniform_report.satisfied() => PolicyChoice::Uniform,
        PolicySelection::Auto => return Err(PipelineError::ConditionFailed { mu: mu_report, uniform: uniform_report }),
    };
    let fc = FluidControlSpec::for_model(spec, &sol, chosen.policy(&sol, spec))?;
    let rounding = match fc.psi_variant {
        PsiVariant::Bandit { d } => Rounding::Bandit { d },
        _ => Rounding::Inequality,
    };
    let psi = fc.psi_variant.clone();
    let phi = compose_phi(fc)?;
    Ok((
        FluidDiscreteControl { phi, rounding },
        PipelineReport { relaxation: sol, chosen, mu_report, uniform_report, psi },
    ))
}
