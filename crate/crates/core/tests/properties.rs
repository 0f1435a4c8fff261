use proptest::prelude::*;

use wcmdp_core::baselines::{lp_priority_order, priority_control};
use wcmdp_core::dense::Dense;
use wcmdp_core::discrete::{certify, round_bandit_counts, round_inequality_counts, DiscreteControl};
use wcmdp_core::fluid::{
    apply_l, beta, compose_phi, fluid_feasibility, fluid_trajectory, make_psi_bandit, make_psi_inequality, residual,
    FluidControl, FluidControlSpec,
};
use wcmdp_core::instances::{build_example, ExampleName};
use wcmdp_core::model::{ModelSpec, OccupancyMeasure, StateActionMeasure};
use wcmdp_core::pipeline::{build_fluid_discrete, FluidDiscreteControl, PolicySelection};
use wcmdp_core::relax::{policy_from_relaxation, solve_fluid_relaxation, RelaxationSolution};

const INSTANCES: [ExampleName; 3] = [ExampleName::Taxi, ExampleName::Nonindexable, ExampleName::AttractorFail];

struct Built {
    spec: ModelSpec,
    sol: RelaxationSolution,
    control: FluidDiscreteControl,
}

fn built(name: ExampleName) -> Built {
    let spec = build_example(name);
    let sol = solve_fluid_relaxation(&spec).unwrap();
    let (control, _) = build_fluid_discrete(&spec, PolicySelection::Auto).unwrap();
    Built { spec, sol, control }
}

fn simplex(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, dim).prop_filter("nonzero mass", |v| v.iter().sum::<f64>() > 1e-6).prop_map(
        |v| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|w| w / s).collect()
        },
    )
}

/// Random simplex point with some coordinates forced to zero.
fn sparse_simplex(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    (simplex(dim), prop::collection::vec(any::<bool>(), dim)).prop_map(|(x, mask)| {
        let kept: Vec<f64> = x.iter().zip(&mask).map(|(&w, &m)| if m { 0.0 } else { w }).collect();
        let s: f64 = kept.iter().sum();
        if s > 1e-9 {
            kept.into_iter().map(|w| w / s).collect()
        } else {
            x
        }
    })
}

/// State counts summing to `n`, via sorted cut points.
fn lattice(dim: usize, n_range: core::ops::RangeInclusive<u64>) -> impl Strategy<Value = Vec<u64>> {
    n_range.prop_flat_map(move |n| {
        prop::collection::vec(0..=n, dim - 1).prop_map(move |mut cuts| {
            cuts.sort_unstable();
            let mut prev = 0;
            let mut out = Vec::with_capacity(dim);
            for c in cuts {
                out.push(c - prev);
                prev = c;
            }
            out.push(n - prev);
            out
        })
    })
}

fn instance() -> impl Strategy<Value = ExampleName> {
    prop::sample::select(INSTANCES.to_vec())
}

fn dim(name: ExampleName) -> usize {
    build_example(name).num_states
}

fn instance_and_point() -> impl Strategy<Value = (ExampleName, Vec<f64>)> {
    instance().prop_flat_map(|name| (Just(name), sparse_simplex(dim(name))))
}

#[test]
fn beta_matches_grid_search() {
    let xs = [0.5, 0.5];
    let x = [0.25, 0.75];
    let mut best = 0.0;
    for k in 0..=1_000_000u32 {
        let l = k as f64 * 1e-6;
        if xs.iter().zip(&x).all(|(s, v)| l * s <= v + 1e-15) {
            best = l;
        }
    }
    assert!((beta(&x, &xs, &[0, 1]) - best).abs() <= 1e-6);
}

#[test]
fn taxi_gamma_by_exhaustive_scan() {
    let spec = build_example(ExampleName::Taxi);
    let ineq = spec.ineq_constraints.as_ref().unwrap();
    let mut gamma = 1.0f64;
    for m in &ineq.per_action {
        for i in 0..spec.num_states {
            for k in 0..ineq.len() {
                if m[(i, k)] != 0.0 {
                    gamma = gamma.min(ineq.rhs[k] / m[(i, k)]);
                }
            }
        }
    }
    let psi = make_psi_inequality(&spec, &policy_from_relaxation(&solve_fluid_relaxation(&spec).unwrap())).unwrap();
    assert_eq!(psi.gamma, gamma);
    assert!((gamma - 0.7).abs() < 1e-15);
}

#[test]
fn trajectory_from_optimum_is_constant() {
    for name in INSTANCES {
        let b = built(name);
        let tr = fluid_trajectory(&b.control.phi, &b.sol.x_star, 20, &b.spec);
        for t in 0..20 {
            assert!(tr.x_seq[t + 1].sup_distance(&b.sol.x_star) < 1e-12);
            assert!(tr.y_seq[t].sup_distance(&b.sol.y_star) < 1e-12);
        }
    }
}

#[test]
fn trajectory_reward_tends_to_g_r() {
    for name in INSTANCES {
        let b = built(name);
        let x0 = OccupancyMeasure::point_mass(b.spec.num_states, 0);
        let tr = fluid_trajectory(&b.control.phi, &x0, 2000, &b.spec);
        assert!((tr.y_seq[1999].reward(&b.spec) - b.sol.g_r).abs() < 1e-9, "{name}");
    }
}

#[test]
fn identity_kernels_reproduce_action_marginals() {
    let spec = build_example(ExampleName::TwoStateToy);
    let y = StateActionMeasure::new(Dense::from_rows(&[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap()).unwrap();
    let x = apply_l(&y, &spec);
    assert!((x[0] - 0.3).abs() < 1e-15 && (x[1] - 0.7).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn residual_lies_in_simplex((name, x) in instance_and_point()) {
        let b = built(name);
        prop_assume!(beta(&x, &b.sol.x_star, &b.sol.support) < 1.0 - 1e-12);
        let r = residual(&x, &b.sol.x_star, &b.sol.support).unwrap();
        prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-10);
        prop_assert!(r.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn beta_is_lipschitz((name, x) in instance_and_point(), y in simplex(8)) {
        let b = built(name);
        let y = &y[..x.len()];
        let s: f64 = y.iter().sum();
        prop_assume!(s > 1e-6);
        let y: Vec<f64> = y.iter().map(|v| v / s).collect();
        let k = 1.0 / b.sol.support.iter().map(|&i| b.sol.x_star[i]).fold(f64::INFINITY, f64::min);
        let dist = x.iter().zip(&y).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max);
        let db = (beta(&x, &b.sol.x_star, &b.sol.support) - beta(&y, &b.sol.x_star, &b.sol.support)).abs();
        prop_assert!(db <= k * dist + 1e-12);
    }

    #[test]
    fn composite_control_is_feasible((name, x) in instance_and_point()) {
        let b = built(name);
        let y = b.control.phi.apply(&x);
        let f = fluid_feasibility(&b.spec, &x, &y);
        prop_assert!(f.marginal_error <= 1e-12, "{f:?}");
        prop_assert!(f.eq_residual <= 1e-10, "{f:?}");
        prop_assert!(f.ineq_slack >= -1e-10, "{f:?}");
        prop_assert!(f.min_entry >= 0.0, "{f:?}");
    }

    #[test]
    fn bandit_psi_spends_exact_budget(
        name in prop::sample::select(vec![ExampleName::Nonindexable, ExampleName::AttractorFail]),
        x in sparse_simplex(3),
        uniform in any::<bool>(),
    ) {
        let spec = build_example(name);
        let sol = solve_fluid_relaxation(&spec).unwrap();
        let pi = if uniform { wcmdp_core::relax::uniform_policy(&spec) } else { policy_from_relaxation(&sol) };
        let psi = make_psi_bandit(&spec, &pi).unwrap();
        let y = psi.apply(&x);
        let spent: f64 = (0..3).map(|i| y.get(i, 1)).sum();
        prop_assert!((spent - psi.d).abs() <= 1e-12);
        for i in 0..3 {
            prop_assert!(y.get(i, 1) <= x[i] + 1e-15);
            prop_assert!((y.get(i, 0) + y.get(i, 1) - x[i]).abs() <= 1e-15);
        }
    }

    #[test]
    fn inequality_psi_respects_resources(x in sparse_simplex(8)) {
        let spec = build_example(ExampleName::Taxi);
        let psi = make_psi_inequality(&spec, &wcmdp_core::relax::uniform_policy(&spec)).unwrap();
        let f = fluid_feasibility(&spec, &x, &psi.apply(&x));
        prop_assert!(f.is_feasible(1e-12), "{f:?}");
    }

    #[test]
    fn beta_never_decreases((name, x) in instance_and_point()) {
        let b = built(name);
        let tr = fluid_trajectory(&b.control.phi, &OccupancyMeasure::new_unchecked(x), 200, &b.spec);
        for w in tr.x_seq.windows(2) {
            prop_assert!(b.control.phi.beta(&w[1]) >= b.control.phi.beta(&w[0]) - 1e-12);
        }
    }

    #[test]
    fn policy_part_dominates_iterates((name, z) in instance_and_point()) {
        // (L o psi)^k(z) - gamma^k z P_pi^k stays componentwise nonnegative
        let b = built(name);
        let pi = policy_from_relaxation(&b.sol);
        let fc = FluidControlSpec::for_model(&b.spec, &b.sol, pi.clone()).unwrap();
        let gamma = match fc.psi_variant {
            wcmdp_core::fluid::PsiVariant::Inequality { gamma } => gamma,
            wcmdp_core::fluid::PsiVariant::Bandit { d } => d,
            _ => unreachable!(),
        };
        let phi = compose_phi(fc).unwrap();
        let chain = pi.induced_chain(&b.spec);
        let mut it = z.clone();
        let mut lin = z.clone();
        let mut g = 1.0;
        for _ in 0..10 {
            it = apply_l(&phi.psi().apply(&it), &b.spec).into_inner();
            lin = chain.left_mul(&lin);
            g *= gamma;
            for (a, l) in it.iter().zip(&lin) {
                prop_assert!(a - g * l >= -1e-10);
            }
        }
    }

    #[test]
    fn inequality_rounding_certified(counts in lattice(8, 8..=512)) {
        let b = built(ExampleName::Taxi);
        let n: u64 = counts.iter().sum();
        let x: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let y = b.control.phi.apply(&x);
        let a = round_inequality_counts(&y, &counts).unwrap();
        let cert = certify(&a, &b.spec, Some(&counts), Some(&y));
        prop_assert!(cert.feasible, "{:?}", cert.violations);
        prop_assert!(cert.gap.unwrap() <= 3.0 / n as f64);
    }

    #[test]
    fn bandit_rounding_certified(
        name in prop::sample::select(vec![ExampleName::Nonindexable, ExampleName::AttractorFail]),
        counts in lattice(3, 8..=512),
    ) {
        let b = built(name);
        let n: u64 = counts.iter().sum();
        let d = b.spec.bandit_assumption().unwrap();
        let x: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let y = b.control.phi.apply(&x);
        let a = round_bandit_counts(&y, &counts, d).unwrap();
        let cert = certify(&a, &b.spec, Some(&counts), Some(&y));
        prop_assert!(cert.feasible, "{:?}", cert.violations);
        prop_assert!(cert.gap.unwrap() <= 1.0 / n as f64);
        prop_assert_eq!((0..3).map(|i| a.count(i, 1)).sum::<i64>(), (d * n as f64 + 1e-9).floor() as i64);
    }

    #[test]
    fn rounding_is_exact_on_lattice(counts in lattice(3, 1..=64), split in prop::collection::vec(0.0f64..=1.0, 3)) {
        let n: u64 = counts.iter().sum();
        let active: Vec<u64> = counts.iter().zip(&split).map(|(&c, &s)| (c as f64 * s).floor() as u64).collect();
        let table = Dense::from_fn(3, 2, |i, a| {
            let k = if a == 1 { active[i] } else { counts[i] - active[i] };
            k as f64 / n as f64
        });
        let y = StateActionMeasure::new_unchecked(table);
        let d = active.iter().sum::<u64>() as f64 / n as f64;
        let expect: Vec<i64> = counts.iter().zip(&active).flat_map(|(&c, &k)| [(c - k) as i64, k as i64]).collect();
        let ineq = round_inequality_counts(&y, &counts).unwrap();
        let bandit = round_bandit_counts(&y, &counts, d).unwrap();
        prop_assert_eq!(ineq.as_slice(), &expect[..]);
        prop_assert_eq!(bandit.as_slice(), &expect[..]);
    }

    #[test]
    fn priority_control_certified(
        name in prop::sample::select(vec![ExampleName::Nonindexable, ExampleName::AttractorFail]),
        counts in lattice(3, 1..=1000),
    ) {
        let b = built(name);
        let c = priority_control(lp_priority_order(&b.sol), b.spec.bandit_assumption().unwrap());
        let a = c.assign(&counts).unwrap();
        prop_assert!(certify(&a, &b.spec, Some(&counts), None).feasible);
    }
}
