//! Fluid controls and the deterministic dynamics they induce.
//!
//! A fluid control maps a state-frequency vector `x` to a state-action table
//! `y` with `sum_a y(a) = x` that satisfies the limiting coupling constraints.
//! The composite control built here steers every fluid trajectory to the
//! relaxation optimum `x*`:
//!
//! ```text
//! beta(x) = max { l >= 0 : l x* <= x }
//! phi(x)  = beta(x) y* + (1 - beta(x)) psi( (x - beta(x) x*) / (1 - beta(x)) ),
//! phi(x*) = y*
//! ```
//!
//! The auxiliary control `psi` is either purely policy-based
//! (`psi(x, a) = x D_pi(a)`) or a mixture of that with a correction that keeps
//! the constraints satisfied, for the resource-allocation and restless-bandit
//! constraint classes. `beta` is nondecreasing along trajectories of `phi`, and
//! it reaches 1 as soon as `L o psi` can escape the boundary set
//! `Z = { x : x(i) = 0 for some i in S_+^* }`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;

use crate::dense::Dense;
use crate::model::{AssumptionError, ModelSpec, OccupancyMeasure, SinglePolicy, StateActionMeasure};
use crate::relax::RelaxationSolution;

/// `beta(x)` values this close to 1 are routed to the `y*` branch.
pub const BETA_ONE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FluidError {
    #[error("beta(x) = {0} is numerically 1; use the y* branch")]
    Degenerate(f64),
    #[error(transparent)]
    Assumption(#[from] AssumptionError),
    #[error("invalid fluid control parameters: {0}")]
    Parameters(&'static str),
}

/// Anything that maps state frequencies to state-action frequencies.
pub trait FluidControl {
    fn apply(&self, x: &[f64]) -> StateActionMeasure;
}

impl<T: FluidControl + ?Sized> FluidControl for &T {
    fn apply(&self, x: &[f64]) -> StateActionMeasure {
        (**self).apply(x)
    }
}

impl<T: FluidControl + ?Sized> FluidControl for alloc::boxed::Box<T> {
    fn apply(&self, x: &[f64]) -> StateActionMeasure {
        (**self).apply(x)
    }
}

/// Largest `l` in `[0, 1]` with `l x*(i) <= x(i)` on the support.
pub fn beta(x: &[f64], x_star: &[f64], support: &[usize]) -> f64 {
    support.iter().map(|&i| x[i] / x_star[i]).fold(1.0_f64, f64::min).clamp(0.0, 1.0)
}

/// `(x - beta(x) x*) / (1 - beta(x))`, a point of the simplex.
pub fn residual(x: &[f64], x_star: &[f64], support: &[usize]) -> Result<OccupancyMeasure, FluidError> {
    let b = beta(x, x_star, support);
    residual_with_beta(x, x_star, b)
}

fn residual_with_beta(x: &[f64], x_star: &[f64], b: f64) -> Result<OccupancyMeasure, FluidError> {
    if b >= 1.0 - BETA_ONE_TOL {
        return Err(FluidError::Degenerate(b));
    }
    let scale = 1.0 / (1.0 - b);
    let w = x.iter().zip(x_star).map(|(&xi, &si)| ((xi - b * si) * scale).max(0.0)).collect();
    Ok(OccupancyMeasure::new_unchecked(w))
}

/// `L(y) = sum_a y(a) P(a)`.
pub fn apply_l(y: &StateActionMeasure, spec: &ModelSpec) -> OccupancyMeasure {
    let mut out = vec![0.0; spec.num_states];
    for i in 0..spec.num_states {
        for a in 0..spec.num_actions {
            let m = y.get(i, a);
            if m == 0.0 {
                continue;
            }
            for (o, &p) in out.iter_mut().zip(spec.transitions[a].row(i)) {
                *o += m * p;
            }
        }
    }
    OccupancyMeasure::new_unchecked(out)
}

/// `psi(x, a) = x D_pi(a)`: every state splits its mass according to `pi`.
pub fn psi_pure(x: &[f64], pi: &SinglePolicy) -> StateActionMeasure {
    StateActionMeasure::new_unchecked(Dense::from_fn(x.len(), pi.num_actions(), |i, a| x[i] * pi.prob(i, a)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PurePsi {
    pub pi: SinglePolicy,
}

impl FluidControl for PurePsi {
    fn apply(&self, x: &[f64]) -> StateActionMeasure {
        psi_pure(x, &self.pi)
    }
}

/// Resource-allocation correction: a `gamma` share follows `pi`, the rest idles
/// in action 0, which consumes nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct InequalityPsi {
    pub pi: SinglePolicy,
    pub gamma: f64,
}

/// `gamma = min(1, min { f(k) / E(i,k,a) : E(i,k,a) != 0 })`.
pub fn inequality_gamma(spec: &ModelSpec) -> f64 {
    let Some(ineq) = &spec.ineq_constraints else {
        return 1.0;
    };
    let mut gamma = 1.0_f64;
    for m in &ineq.per_action {
        for i in 0..m.rows() {
            for (k, &e) in m.row(i).iter().enumerate() {
                if e != 0.0 {
                    gamma = gamma.min(ineq.rhs[k] / e);
                }
            }
        }
    }
    gamma
}

pub fn make_psi_inequality(spec: &ModelSpec, pi: &SinglePolicy) -> Result<InequalityPsi, FluidError> {
    spec.inequality_assumption()?;
    Ok(InequalityPsi { pi: pi.clone(), gamma: inequality_gamma(spec) })
}

impl FluidControl for InequalityPsi {
    fn apply(&self, x: &[f64]) -> StateActionMeasure {
        let g = self.gamma;
        let t = Dense::from_fn(x.len(), self.pi.num_actions(), |i, a| {
            let idle = if a == 0 { (1.0 - g) * x[i] } else { 0.0 };
            g * x[i] * self.pi.prob(i, a) + idle
        });
        StateActionMeasure::new_unchecked(t)
    }
}

/// Restless-bandit correction: a `d` share follows `pi`, and the remainder
/// activates arms in proportion to `x(i) (1 - d pi(1|i))` so that exactly `d`
/// of the mass takes action 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditPsi {
    pub pi: SinglePolicy,
    pub d: f64,
}

pub fn make_psi_bandit(spec: &ModelSpec, pi: &SinglePolicy) -> Result<BanditPsi, FluidError> {
    let d = spec.bandit_assumption()?;
    Ok(BanditPsi { pi: pi.clone(), d })
}

impl BanditPsi {
    /// Second component `psi_2(x)(i, 1)` of the mixture.
    pub fn correction_active(&self, x: &[f64]) -> Vec<f64> {
        let d = self.d;
        let weight: Vec<f64> = x.iter().enumerate().map(|(i, &xi)| xi * (1.0 - d * self.pi.prob(i, 1))).collect();
        let followed: f64 = x.iter().enumerate().map(|(i, &xi)| xi * d * self.pi.prob(i, 1)).sum();
        let denom: f64 = (1.0 - d) * weight.iter().sum::<f64>();
        let coef = (d - followed) / denom;
        weight.iter().map(|w| coef * w).collect()
    }
}

impl FluidControl for BanditPsi {
    fn apply(&self, x: &[f64]) -> StateActionMeasure {
        let d = self.d;
        let corr = self.correction_active(x);
        let mut t = Dense::zeros(x.len(), 2);
        for i in 0..x.len() {
            let active = (d * x[i] * self.pi.prob(i, 1) + (1.0 - d) * corr[i]).clamp(0.0, x[i]);
            t[(i, 1)] = active;
            t[(i, 0)] = x[i] - active;
        }
        StateActionMeasure::new_unchecked(t)
    }
}

type PsiFn = dyn Fn(&[f64]) -> StateActionMeasure + Send + Sync;

/// User-supplied `psi`; every evaluation is checked against the model.
#[derive(Clone)]
pub struct CustomPsi {
    f: Arc<PsiFn>,
    spec: Arc<ModelSpec>,
}

impl core::fmt::Debug for CustomPsi {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("CustomPsi(..)")
    }
}

impl CustomPsi {
    pub fn new(spec: ModelSpec, f: impl Fn(&[f64]) -> StateActionMeasure + Send + Sync + 'static) -> Self {
        Self { f: Arc::new(f), spec: Arc::new(spec) }
    }
}

impl FluidControl for CustomPsi {
    fn apply(&self, x: &[f64]) -> StateActionMeasure {
        let y = (self.f)(x);
        let report = fluid_feasibility(&self.spec, x, &y);
        assert!(report.is_feasible(1e-9), "custom psi left the feasible set at x = {x:?}: {report:?}");
        y
    }
}

/// Residuals of the fluid-control conditions at a single point.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidFeasibility {
    /// `max_i |sum_a y(i,a) - x(i)|`
    pub marginal_error: f64,
    /// `max_k |sum_a y(a) C(a) - d|`
    pub eq_residual: f64,
    /// `min_k (f - sum_a y(a) E(a))`; positive infinity without inequalities.
    pub ineq_slack: f64,
    pub min_entry: f64,
}

impl FluidFeasibility {
    pub fn is_feasible(&self, tol: f64) -> bool {
        self.marginal_error <= tol && self.eq_residual <= tol && self.ineq_slack >= -tol && self.min_entry >= -tol
    }
}

pub fn fluid_feasibility(spec: &ModelSpec, x: &[f64], y: &StateActionMeasure) -> FluidFeasibility {
    let act = crate::relax::constraint_activity(spec, y);
    let marginal_error = crate::model::sup_norm_diff(&y.marginal(), x);
    FluidFeasibility {
        marginal_error,
        eq_residual: act.eq_residual.iter().fold(0.0, |m, v| m.max(v.abs())),
        ineq_slack: act.ineq_slack.iter().copied().fold(f64::INFINITY, f64::min),
        min_entry: y.table().as_slice().iter().copied().fold(f64::INFINITY, f64::min),
    }
}

#[derive(Debug, Clone)]
pub enum PsiVariant {
    /// Resource-allocation correction with mixing weight `gamma`.
    Inequality {
        gamma: f64,
    },
    /// Restless-bandit correction with budget `d`.
    Bandit {
        d: f64,
    },
    /// Purely policy-based `psi`.
    Pure,
    Custom(CustomPsi),
}

/// Everything needed to assemble the composite control.
#[derive(Debug, Clone)]
pub struct FluidControlSpec {
    pub y_star: StateActionMeasure,
    pub x_star: OccupancyMeasure,
    pub support: Vec<usize>,
    pub pi: SinglePolicy,
    pub psi_variant: PsiVariant,
}

impl FluidControlSpec {
    /// Picks the structured `psi` matching the model's constraint class:
    /// the bandit correction when the bandit structure holds, otherwise the
    /// resource-allocation correction.
    pub fn for_model(spec: &ModelSpec, sol: &RelaxationSolution, pi: SinglePolicy) -> Result<Self, FluidError> {
        let psi_variant = match spec.bandit_assumption() {
            Ok(d) => PsiVariant::Bandit { d },
            Err(bandit) => match spec.inequality_assumption() {
                Ok(()) => PsiVariant::Inequality { gamma: inequality_gamma(spec) },
                Err(ineq) => {
                    return Err(FluidError::Assumption(AssumptionError(alloc::format!(
                        "neither constraint class applies (bandit: {bandit}; inequality: {ineq})"
                    ))))
                }
            },
        };
        Ok(Self {
            y_star: sol.y_star.clone(),
            x_star: sol.x_star.clone(),
            support: sol.support.clone(),
            pi,
            psi_variant,
        })
    }
}

#[derive(Debug, Clone)]
enum Psi {
    Pure(PurePsi),
    Inequality(InequalityPsi),
    Bandit(BanditPsi),
    Custom(CustomPsi),
}

impl FluidControl for Psi {
    fn apply(&self, x: &[f64]) -> StateActionMeasure {
        match self {
            Psi::Pure(p) => p.apply(x),
            Psi::Inequality(p) => p.apply(x),
            Psi::Bandit(p) => p.apply(x),
            Psi::Custom(p) => p.apply(x),
        }
    }
}

/// The composite control `phi` built around a relaxation optimum.
#[derive(Debug, Clone)]
pub struct CompositeControl {
    y_star: StateActionMeasure,
    x_star: OccupancyMeasure,
    support: Vec<usize>,
    psi: Psi,
}

pub fn compose_phi(fc: FluidControlSpec) -> Result<CompositeControl, FluidError> {
    if fc.pi.num_states() != fc.x_star.len() || fc.pi.num_actions() != fc.y_star.num_actions() {
        return Err(FluidError::Parameters("policy dimensions do not match y*"));
    }
    if fc.support.is_empty() {
        return Err(FluidError::Parameters("support of x* is empty"));
    }
    let psi = match fc.psi_variant {
        PsiVariant::Inequality { gamma } => {
            if !(gamma > 0.0 && gamma <= 1.0) {
                return Err(FluidError::Parameters("gamma must lie in (0, 1]"));
            }
            Psi::Inequality(InequalityPsi { pi: fc.pi, gamma })
        }
        PsiVariant::Bandit { d } => {
            if !(d > 0.0 && d < 1.0) || fc.y_star.num_actions() != 2 {
                return Err(FluidError::Parameters("bandit psi needs two actions and d in (0, 1)"));
            }
            Psi::Bandit(BanditPsi { pi: fc.pi, d })
        }
        PsiVariant::Pure => Psi::Pure(PurePsi { pi: fc.pi }),
        PsiVariant::Custom(c) => Psi::Custom(c),
    };
    Ok(CompositeControl { y_star: fc.y_star, x_star: fc.x_star, support: fc.support, psi })
}

impl CompositeControl {
    pub fn beta(&self, x: &[f64]) -> f64 {
        beta(x, &self.x_star, &self.support)
    }

    pub fn x_star(&self) -> &OccupancyMeasure {
        &self.x_star
    }

    pub fn y_star(&self) -> &StateActionMeasure {
        &self.y_star
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    /// The auxiliary control on its own.
    pub fn psi(&self) -> &dyn FluidControl {
        &self.psi
    }
}

impl FluidControl for CompositeControl {
    fn apply(&self, x: &[f64]) -> StateActionMeasure {
        let b = self.beta(x);
        let Ok(r) = residual_with_beta(x, &self.x_star, b) else {
            return self.y_star.clone();
        };
        let psi = self.psi.apply(&r);
        let (s, na) = (psi.num_states(), psi.num_actions());
        let t = Dense::from_fn(s, na, |i, a| b * self.y_star.get(i, a) + (1.0 - b) * psi.get(i, a));
        StateActionMeasure::new_unchecked(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidTrajectory {
    /// `x(0), ..., x(horizon)`
    pub x_seq: Vec<OccupancyMeasure>,
    /// `y(0), ..., y(horizon - 1)`
    pub y_seq: Vec<StateActionMeasure>,
    pub horizon: usize,
}

/// Iterates `y(t) = phi(x(t))`, `x(t+1) = L(y(t))`.
pub fn fluid_trajectory(
    phi: &impl FluidControl,
    x0: &OccupancyMeasure,
    horizon: usize,
    spec: &ModelSpec,
) -> FluidTrajectory {
    let mut x_seq = Vec::with_capacity(horizon + 1);
    let mut y_seq = Vec::with_capacity(horizon);
    x_seq.push(x0.clone());
    for t in 0..horizon {
        let y = phi.apply(&x_seq[t]);
        x_seq.push(apply_l(&y, spec));
        y_seq.push(y);
    }
    FluidTrajectory { x_seq, y_seq, horizon }
}

/// Result of driving `x0` towards `target` under `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    /// First `t` with `||x(t) - target||_inf < tol`.
    pub steps: Option<usize>,
    /// Largest drop `beta(x(t)) - beta(x(t+1))` seen (<= 0 when monotone).
    pub max_beta_drop: f64,
}

/// Runs the fluid dynamics without storing the path.
pub fn converge(phi: &CompositeControl, x0: &[f64], tol: f64, max_steps: usize, spec: &ModelSpec) -> Convergence {
    let mut x = x0.to_vec();
    let mut prev_beta = phi.beta(&x);
    let mut max_beta_drop = f64::NEG_INFINITY;
    for t in 0..=max_steps {
        if phi.x_star.sup_distance(&x) < tol {
            return Convergence { steps: Some(t), max_beta_drop };
        }
        x = apply_l(&phi.apply(&x), spec).into_inner();
        let b = phi.beta(&x);
        max_beta_drop = max_beta_drop.max(prev_beta - b);
        prev_beta = b;
    }
    Convergence { steps: None, max_beta_drop }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeReport {
    /// First `t >= 1` with `beta((L o psi)^t(z)) > 0`, per sampled `z`.
    pub escape_times: Vec<Option<usize>>,
    pub all_escaped: bool,
    pub min_escape_time: Option<usize>,
    pub max_escape_time: Option<usize>,
    /// True when `Z` is empty (the support is every state of a one-state model).
    pub vacuous: bool,
}

/// Samples points of the boundary set `Z` and checks that `L o psi` leaves it
/// within `horizon` steps. A sample that stays is a candidate counterexample,
/// not a proof that the condition fails.
///
/// Sample `k` zeroes support state `support[k % |support|]` and draws the rest
/// uniformly from the face of the simplex.
pub fn check_condition_general(
    psi: &dyn FluidControl,
    spec: &ModelSpec,
    x_star: &[f64],
    support: &[usize],
    horizon: usize,
    samples: usize,
    seed: u64,
) -> EscapeReport {
    let s = spec.num_states;
    if s < 2 || support.is_empty() {
        return EscapeReport {
            escape_times: Vec::new(),
            all_escaped: true,
            min_escape_time: None,
            max_escape_time: None,
            vacuous: true,
        };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut escape_times = Vec::with_capacity(samples);
    for k in 0..samples {
        let zero = support[k % support.len()];
        let mut z: Vec<f64> = (0..s).map(|i| if i == zero { 0.0 } else { rng.sample::<f64, _>(Exp1) }).collect();
        let total: f64 = z.iter().sum();
        z.iter_mut().for_each(|v| *v /= total);

        let mut escaped = None;
        for t in 1..=horizon {
            z = apply_l(&psi.apply(&z), spec).into_inner();
            if beta(&z, x_star, support) > 0.0 {
                escaped = Some(t);
                break;
            }
        }
        escape_times.push(escaped);
    }
    let all_escaped = escape_times.iter().all(Option::is_some);
    let min_escape_time = escape_times.iter().flatten().copied().min();
    let max_escape_time = escape_times.iter().flatten().copied().max();
    EscapeReport { escape_times, all_escaped, min_escape_time, max_escape_time, vacuous: false }
}
