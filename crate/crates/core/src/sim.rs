//! Monte-Carlo simulation of `n` weakly coupled processes.
//!
//! Frequency mode tracks only the state counts: each step the control splits
//! the counts into state-action counts, and the `counts(i, a)` processes in
//! `(i, a)` move according to a multinomial draw over row `i` of `P(a)`.
//! Agent mode tracks every process and lets a per-arm rule pick actions.
//!
//! Replication `r` under seed `s` draws from ChaCha8 stream `r` of key `s`, so
//! replications are independent of execution order.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::discrete::{certify, Certificate, DiscreteAssignment, DiscreteControl, DiscreteError};
use crate::fluid::{apply_l, FluidControl};
use crate::model::{ModelSpec, OccupancyMeasure};

/// Number of batches used for the within-run standard error when there is a
/// single replication.
pub const BATCHES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialCondition {
    /// Frequencies; `n x` must be integral.
    Frequency(OccupancyMeasure),
    /// All processes start in one state.
    AllIn(usize),
    /// Explicit state of every process, in ID order.
    Arms(Vec<usize>),
}

impl InitialCondition {
    /// State counts for a population of `n`.
    pub fn counts(&self, n: u64, num_states: usize) -> Result<Vec<u64>, SimError> {
        match self {
            Self::Frequency(x) => {
                if x.len() != num_states {
                    return Err(SimError::Config("initial frequencies have the wrong length"));
                }
                x.to_counts(n).ok_or(SimError::Config("n * initial is not integral"))
            }
            Self::AllIn(s) => {
                if *s >= num_states {
                    return Err(SimError::Config("initial state out of range"));
                }
                let mut c = vec![0; num_states];
                c[*s] = n;
                Ok(c)
            }
            Self::Arms(states) => {
                if states.len() as u64 != n {
                    return Err(SimError::Config("per-arm initial states do not match n"));
                }
                let mut c = vec![0; num_states];
                for &s in states {
                    *c.get_mut(s).ok_or(SimError::Config("initial state out of range"))? += 1;
                }
                Ok(c)
            }
        }
    }

    /// Per-arm states, with arms sorted by state when only counts are known.
    pub fn arms(&self, n: u64, num_states: usize) -> Result<Vec<usize>, SimError> {
        if let Self::Arms(states) = self {
            self.counts(n, num_states)?;
            return Ok(states.clone());
        }
        let counts = self.counts(n, num_states)?;
        Ok(counts.iter().enumerate().flat_map(|(s, &c)| core::iter::repeat_n(s, c as usize)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n: u64,
    pub horizon: usize,
    pub burn_in: usize,
    pub replications: usize,
    pub seed: u64,
    pub initial: InitialCondition,
    /// Keep `x_n(t)` of replication 0.
    pub record_trajectory: bool,
}

impl SimConfig {
    /// Burn-in defaults to a fifth of the horizon.
    pub fn new(n: u64, horizon: usize, initial: InitialCondition) -> Self {
        Self { n, horizon, burn_in: horizon / 5, replications: 1, seed: 0, initial, record_trajectory: false }
    }

    pub fn with_replications(mut self, replications: usize) -> Self {
        self.replications = replications;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n == 0 {
            return Err(SimError::Config("n must be positive"));
        }
        if self.horizon == 0 || self.burn_in >= self.horizon {
            return Err(SimError::Config("need 0 <= burn_in < horizon"));
        }
        if self.replications == 0 {
            return Err(SimError::Config("need at least one replication"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(&'static str),
    #[error("control failed at step {step}: {source}")]
    Control { step: usize, source: DiscreteError },
    #[error("infeasible assignment at step {step}: {}", certificate.describe())]
    Infeasible { step: usize, certificate: Certificate },
}

/// Outcome of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutput {
    pub gain: f64,
    /// Reward of every step in `[burn_in, T)`.
    pub step_rewards: Vec<f64>,
    /// `n x_n(t)` for `t = 0..=T`, when recorded.
    pub trajectory: Option<Vec<Vec<u64>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub gain_mean: f64,
    pub gain_stderr: f64,
    pub gains: Vec<f64>,
    /// `n x_n(t)` of replication 0.
    pub trajectory: Option<Vec<Vec<u64>>>,
}

impl SimResult {
    /// Merges replications given in replication-index order. With one
    /// replication the standard error comes from batch means of that run.
    pub fn from_replications(outputs: Vec<ReplicationOutput>) -> Self {
        let gains: Vec<f64> = outputs.iter().map(|o| o.gain).collect();
        let gain_mean = mean(&gains);
        let gain_stderr =
            if gains.len() > 1 { stderr(&gains) } else { batch_means_stderr(&outputs[0].step_rewards, BATCHES) };
        let trajectory = outputs.into_iter().next().and_then(|o| o.trajectory);
        Self { gain_mean, gain_stderr, gains, trajectory }
    }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Standard error of the mean of independent samples.
pub fn stderr(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64;
    libm::sqrt(var / v.len() as f64)
}

/// Standard error from `batches` contiguous batch means; zero when the series
/// is too short to batch.
pub fn batch_means_stderr(series: &[f64], batches: usize) -> f64 {
    let size = series.len() / batches;
    if size == 0 || batches < 2 {
        return 0.0;
    }
    let means: Vec<f64> = series.chunks_exact(size).take(batches).map(mean).collect();
    stderr(&means)
}

/// Random stream of replication `rep` under `seed`.
pub fn replication_rng(seed: u64, rep: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep as u64);
    rng
}

/// Adds a multinomial(`trials`, `probs`) draw into `out`, via successive
/// conditional binomials.
pub fn multinomial_into(rng: &mut ChaCha8Rng, trials: u64, probs: &[f64], out: &mut [u64]) {
    let mut left = trials;
    let mut mass = 1.0_f64;
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
    for (j, &p) in probs.iter().enumerate() {
        if left == 0 {
            break;
        }
        if j == last {
            out[j] += left;
            break;
        }
        if p <= 0.0 {
            continue;
        }
        let q = (p / mass).clamp(0.0, 1.0);
        let k = if q >= 1.0 { left } else { Binomial::new(left, q).expect("q in [0, 1]").sample(rng) };
        out[j] += k;
        left -= k;
        mass -= p;
    }
}

/// One step of the frequency-mode dynamics from a certified assignment.
pub fn step_counts(spec: &ModelSpec, assignment: &DiscreteAssignment, rng: &mut ChaCha8Rng) -> Vec<u64> {
    let mut next = vec![0u64; spec.num_states];
    for i in 0..spec.num_states {
        for a in 0..spec.num_actions {
            let c = assignment.count(i, a);
            if c > 0 {
                multinomial_into(rng, c as u64, spec.transitions[a].row(i), &mut next);
            }
        }
    }
    next
}

fn certified_assign(
    spec: &ModelSpec,
    control: &impl DiscreteControl,
    counts: &[u64],
    step: usize,
) -> Result<DiscreteAssignment, SimError> {
    let assignment = control.assign(counts).map_err(|source| SimError::Control { step, source })?;
    let certificate = certify(&assignment, spec, Some(counts), None);
    if !certificate.feasible {
        return Err(SimError::Infeasible { step, certificate });
    }
    Ok(assignment)
}

/// Runs replication `rep` in frequency mode.
pub fn run_replication(
    spec: &ModelSpec,
    control: &impl DiscreteControl,
    cfg: &SimConfig,
    rep: usize,
) -> Result<ReplicationOutput, SimError> {
    cfg.validate()?;
    let mut rng = replication_rng(cfg.seed, rep);
    let mut counts = cfg.initial.counts(cfg.n, spec.num_states)?;
    let mut trajectory = cfg.record_trajectory.then(|| vec![counts.clone()]);
    let mut step_rewards = Vec::with_capacity(cfg.horizon - cfg.burn_in);
    for t in 0..cfg.horizon {
        let assignment = certified_assign(spec, control, &counts, t)?;
        if t >= cfg.burn_in {
            step_rewards.push(assignment.reward(spec));
        }
        counts = step_counts(spec, &assignment, &mut rng);
        if let Some(tr) = trajectory.as_mut() {
            tr.push(counts.clone());
        }
    }
    Ok(ReplicationOutput { gain: mean(&step_rewards), step_rewards, trajectory })
}

pub fn simulate_frequency(
    spec: &ModelSpec,
    control: &impl DiscreteControl,
    cfg: &SimConfig,
) -> Result<SimResult, SimError> {
    let outputs = (0..cfg.replications)
        .map(|rep| {
            run_replication(
                spec,
                control,
                &SimConfig { record_trajectory: cfg.record_trajectory && rep == 0, ..cfg.clone() },
                rep,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimResult::from_replications(outputs))
}

/// Chooses an action for every arm. `actions[k]` is the action of arm `k`,
/// whose state is `states[k]`; `counts` are the state counts.
pub trait AgentPolicy {
    fn act(&self, states: &[usize], counts: &[u64], rng: &mut ChaCha8Rng, actions: &mut [usize]);
}

impl<T: AgentPolicy + ?Sized> AgentPolicy for &T {
    fn act(&self, states: &[usize], counts: &[u64], rng: &mut ChaCha8Rng, actions: &mut [usize]) {
        (**self).act(states, counts, rng, actions)
    }
}

impl<T: AgentPolicy + ?Sized> AgentPolicy for alloc::boxed::Box<T> {
    fn act(&self, states: &[usize], counts: &[u64], rng: &mut ChaCha8Rng, actions: &mut [usize]) {
        (**self).act(states, counts, rng, actions)
    }
}

fn sample_row(rng: &mut ChaCha8Rng, row: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

/// Runs replication `rep` in agent mode. Every step the realized state-action
/// counts are certified against the finite-`n` constraints.
pub fn run_agent_replication(
    spec: &ModelSpec,
    policy: &impl AgentPolicy,
    cfg: &SimConfig,
    rep: usize,
) -> Result<ReplicationOutput, SimError> {
    cfg.validate()?;
    let (s, na) = (spec.num_states, spec.num_actions);
    let mut rng = replication_rng(cfg.seed, rep);
    let mut states = cfg.initial.arms(cfg.n, s)?;
    let mut counts = cfg.initial.counts(cfg.n, s)?;
    let mut actions = vec![0usize; states.len()];
    let mut trajectory = cfg.record_trajectory.then(|| vec![counts.clone()]);
    let mut step_rewards = Vec::with_capacity(cfg.horizon - cfg.burn_in);
    for t in 0..cfg.horizon {
        policy.act(&states, &counts, &mut rng, &mut actions);
        let mut sa = vec![0i64; s * na];
        for (&st, &ac) in states.iter().zip(&actions) {
            if ac >= na {
                return Err(SimError::Config("agent policy returned an out-of-range action"));
            }
            sa[st * na + ac] += 1;
        }
        let assignment = DiscreteAssignment::new(cfg.n, na, sa).expect("shape fixed by the model");
        let certificate = certify(&assignment, spec, Some(&counts), None);
        if !certificate.feasible {
            return Err(SimError::Infeasible { step: t, certificate });
        }
        if t >= cfg.burn_in {
            step_rewards.push(assignment.reward(spec));
        }
        counts.iter_mut().for_each(|c| *c = 0);
        for (st, &ac) in states.iter_mut().zip(&actions) {
            *st = sample_row(&mut rng, spec.transitions[ac].row(*st));
            counts[*st] += 1;
        }
        if let Some(tr) = trajectory.as_mut() {
            tr.push(counts.clone());
        }
    }
    Ok(ReplicationOutput { gain: mean(&step_rewards), step_rewards, trajectory })
}

pub fn simulate_agents(spec: &ModelSpec, policy: &impl AgentPolicy, cfg: &SimConfig) -> Result<SimResult, SimError> {
    let outputs = (0..cfg.replications)
        .map(|rep| {
            run_agent_replication(
                spec,
                policy,
                &SimConfig { record_trajectory: cfg.record_trajectory && rep == 0, ..cfg.clone() },
                rep,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimResult::from_replications(outputs))
}

/// Per-`(t, j)` moments of the martingale noise
/// `z_n(t, j) = x_n(t, j) - L(y_n(t - 1))(j)` for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleCell {
    pub t: usize,
    pub state: usize,
    pub mean_x: f64,
    pub mean_z: f64,
    pub se_z: f64,
    pub mean_z2: f64,
    pub se_z2: f64,
    /// `q_min(j) / n E[x_n(t, j)]`
    pub lower: f64,
    /// `q_max(j) / n E[x_n(t, j)]`
    pub upper: f64,
    /// Standard errors of the paired differences `z^2 - q x / n`.
    pub se_lower_diff: f64,
    pub se_upper_diff: f64,
    pub mean_zero_ok: bool,
    pub sandwich_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleReport {
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub cells: Vec<MartingaleCell>,
}

impl MartingaleReport {
    pub fn all_mean_zero(&self) -> bool {
        self.cells.iter().all(|c| c.mean_zero_ok)
    }

    pub fn all_sandwiched(&self) -> bool {
        self.cells.iter().all(|c| c.sandwich_ok)
    }
}

/// `q_min(j) = min_{i,a} (1 - p(j|i,a))` and the matching maximum.
pub fn q_bounds(spec: &ModelSpec) -> (Vec<f64>, Vec<f64>) {
    let s = spec.num_states;
    let mut q_min = vec![f64::INFINITY; s];
    let mut q_max = vec![f64::NEG_INFINITY; s];
    for p in &spec.transitions {
        for i in 0..s {
            for j in 0..s {
                let q = 1.0 - p[(i, j)];
                q_min[j] = q_min[j].min(q);
                q_max[j] = q_max[j].max(q);
            }
        }
    }
    (q_min, q_max)
}

/// Estimates first and second moments of `z_n(t, j)` over `cfg.replications`
/// runs of length `cfg.horizon`, and checks them within 3 standard errors
/// against zero and against the `q`-sandwich.
pub fn martingale_diagnostic(
    spec: &ModelSpec,
    control: &impl DiscreteControl,
    cfg: &SimConfig,
) -> Result<MartingaleReport, SimError> {
    if cfg.n == 0 || cfg.horizon == 0 || cfg.replications < 2 {
        return Err(SimError::Config("need n >= 1, T >= 1 and at least two replications"));
    }
    let s = spec.num_states;
    let (q_min, q_max) = q_bounds(spec);
    let nf = cfg.n as f64;
    let cells_len = cfg.horizon * s;
    // per cell: sums of x, z, z^2, z^4, (z^2 - q_min x/n)^2, (z^2 - q_max x/n)^2, and cross terms
    let mut sx = vec![0.0; cells_len];
    let mut sz = vec![0.0; cells_len];
    let mut szz = vec![0.0; cells_len];
    let mut sz4 = vec![0.0; cells_len];
    let mut sdl = vec![0.0; cells_len];
    let mut sdl2 = vec![0.0; cells_len];
    let mut sdu = vec![0.0; cells_len];
    let mut sdu2 = vec![0.0; cells_len];

    for rep in 0..cfg.replications {
        let mut rng = replication_rng(cfg.seed, rep);
        let mut counts = cfg.initial.counts(cfg.n, s)?;
        for t in 0..cfg.horizon {
            let assignment = certified_assign(spec, control, &counts, t)?;
            let predicted = apply_l(&assignment.to_measure(), spec);
            counts = step_counts(spec, &assignment, &mut rng);
            for j in 0..s {
                let x = counts[j] as f64 / nf;
                let z = x - predicted[j];
                let k = t * s + j;
                let dl = z * z - q_min[j] * x / nf;
                let du = z * z - q_max[j] * x / nf;
                sx[k] += x;
                sz[k] += z;
                szz[k] += z * z;
                sz4[k] += z * z * z * z;
                sdl[k] += dl;
                sdl2[k] += dl * dl;
                sdu[k] += du;
                sdu2[k] += du * du;
            }
        }
    }

    let r = cfg.replications as f64;
    let se = |sum: f64, sum_sq: f64| -> f64 {
        let m = sum / r;
        libm::sqrt(((sum_sq - r * m * m) / (r - 1.0)).max(0.0) / r)
    };
    let mut cells = Vec::with_capacity(cells_len);
    for t in 0..cfg.horizon {
        for j in 0..s {
            let k = t * s + j;
            let mean_x = sx[k] / r;
            let mean_z = sz[k] / r;
            let mean_z2 = szz[k] / r;
            let se_z = se(sz[k], szz[k]);
            let se_z2 = se(szz[k], sz4[k]);
            let se_lower_diff = se(sdl[k], sdl2[k]);
            let se_upper_diff = se(sdu[k], sdu2[k]);
            cells.push(MartingaleCell {
                t: t + 1,
                state: j,
                mean_x,
                mean_z,
                se_z,
                mean_z2,
                se_z2,
                lower: q_min[j] / nf * mean_x,
                upper: q_max[j] / nf * mean_x,
                se_lower_diff,
                se_upper_diff,
                mean_zero_ok: mean_z.abs() <= 3.0 * se_z + 1e-15,
                sandwich_ok: sdl[k] / r >= -3.0 * se_lower_diff - 1e-15 && sdu[k] / r <= 3.0 * se_upper_diff + 1e-15,
            });
        }
    }
    Ok(MartingaleReport { q_min, q_max, cells })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanfieldRow {
    pub n: u64,
    pub mean_deviation: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanfieldReport {
    pub rows: Vec<MeanfieldRow>,
    pub strictly_decreasing: bool,
    /// Least-squares slope of `log(deviation)` against `log(n)`; about `-1/2`
    /// for diffusive fluctuations.
    pub log_log_slope: f64,
}

/// Mean over replications of `max_{t <= T} ||x_n(t) - x(t)||_inf`, where `x(t)`
/// is the fluid trajectory of `phi` from `x0` and `x_n` runs under
/// `control_for(n)` from `n x0`.
#[allow(clippy::too_many_arguments)]
pub fn meanfield_diagnostic<C: DiscreteControl>(
    spec: &ModelSpec,
    control_for: impl Fn(u64) -> C,
    phi: &impl FluidControl,
    x0: &OccupancyMeasure,
    horizon: usize,
    ns: &[u64],
    replications: usize,
    seed: u64,
) -> Result<MeanfieldReport, SimError> {
    if replications == 0 || ns.is_empty() {
        return Err(SimError::Config("need replications and a nonempty n list"));
    }
    let fluid = crate::fluid::fluid_trajectory(phi, x0, horizon.max(1), spec);
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        let control = control_for(n);
        let initial = x0.to_counts(n).ok_or(SimError::Config("x0 is not on every lattice X_n"))?;
        let nf = n as f64;
        let mut devs = Vec::with_capacity(replications);
        for rep in 0..replications {
            let mut rng = replication_rng(seed, rep);
            let mut counts = initial.clone();
            let mut dev = fluid.x_seq[0].sup_distance(&counts.iter().map(|&c| c as f64 / nf).collect::<Vec<_>>());
            for t in 0..horizon {
                let assignment = certified_assign(spec, &control, &counts, t)?;
                counts = step_counts(spec, &assignment, &mut rng);
                let x: Vec<f64> = counts.iter().map(|&c| c as f64 / nf).collect();
                dev = dev.max(fluid.x_seq[t + 1].sup_distance(&x));
            }
            devs.push(dev);
        }
        rows.push(MeanfieldRow { n, mean_deviation: mean(&devs), stderr: stderr(&devs) });
    }
    let strictly_decreasing = rows.windows(2).all(|w| w[1].mean_deviation < w[0].mean_deviation);
    Ok(MeanfieldReport { log_log_slope: log_log_slope(&rows), strictly_decreasing, rows })
}

fn log_log_slope(rows: &[MeanfieldRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mean_deviation > 0.0)
        .map(|r| (libm::log(r.n as f64), libm::log(r.mean_deviation)))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        0.0
    } else {
        sxy / sxx
    }
}
