use fredstop::bounds::{iterate, EnvelopeConfig};
use fredstop::fredholm::{penalty, uniform_nodes, CGrid, KernelTable};
use fredstop::oracle::{backward_induction, mc_value, DpConfig};
use fredstop::problem::{self, remove_drift, PayoffProblem, PutParams};
use fredstop::solver::{solve, SolverConfig};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn penalty_at_least_one(c in 0.05f64..8.0, x in -2.0f64..2.0) {
        let f = penalty(c, x);
        prop_assert!(f >= 1.0);
        if (c * c * x).abs() > 1e-6 {
            prop_assert!(f > 1.0);
        }
    }
}

fn monotone_grid(steps: &[f64]) -> Vec<f64> {
    let mut d = vec![0.0];
    for s in steps {
        d.push(d.last().unwrap() - s);
    }
    d
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn residual_non_decreasing_in_each_node(
        steps in prop::collection::vec(0.0f64..2.0, 9),
        n in 1usize..10,
        h in 1e-5f64..1.0,
        put in any::<bool>(),
    ) {
        let p = if put {
            problem::american_put(PutParams { rho: 1.0, theta: 2.0 }).unwrap()
        } else {
            problem::linear(1.0).unwrap()
        };
        let nodes = uniform_nodes(p.b_inf, 10);
        let table = KernelTable::build(&p, &nodes, &CGrid::arithmetic(p.r, 5, 0.4).unwrap()).unwrap();
        let d = monotone_grid(&steps);
        let mut up = d.clone();
        up[n] = (d[n] + h).min(d[n - 1]);
        for l in 0..table.m() {
            prop_assert!(table.residual(l, &up) >= table.residual(l, &d) - 1e-14);
        }
    }
}

#[test]
fn single_node_solution_is_scale_invariant() {
    let p = problem::linear(1.0).unwrap();
    let nodes = vec![0.0, 0.5 * p.b_inf, p.b_inf];
    let cgrid = CGrid::arithmetic(p.r, 1, 0.1).unwrap();
    let cfg = SolverConfig::default();
    let d_of = |q: &fredstop::problem::Problem| {
        let env = iterate(q, &nodes, &cgrid, 2, &EnvelopeConfig::for_problem(q))
            .unwrap()
            .pop()
            .unwrap();
        solve(q, &cgrid, &env, &cfg).unwrap().grid.values()[1]
    };
    let base = d_of(&p);
    for k in [0.1, 3.0, 40.0] {
        assert!((d_of(&p.scaled(k)) - base).abs() <= 1e-6, "k = {k}");
    }
}

fn put_payoff() -> PayoffProblem {
    PayoffProblem::new("put", 1.0, |x: f64| (1.0 - x.exp()).max(0.0)).with_drift(-0.5)
}

fn small_dp(t_min: f64, t_steps: usize) -> DpConfig {
    DpConfig {
        t_min,
        t_steps,
        x_steps: 800,
        x_lo: -4.0,
        x_hi: 4.0,
        store_stride: 0,
    }
}

#[test]
fn drift_removal_preserves_values() {
    let drifted = put_payoff();
    let plain = remove_drift(&drifted);
    let cfg = small_dp(-1.0, 200);
    let a = backward_induction(&drifted, &cfg).unwrap();
    let b = backward_induction(&plain, &cfg).unwrap();
    let mu = drifted.drift;
    for x in [-0.5, 0.0, 0.3] {
        let va = a.value_at(a.initial_values(), x);
        let vb = (-mu * x + 0.5 * mu * mu * cfg.t_min).exp() * b.value_at(b.initial_values(), x);
        assert!((va - vb).abs() <= 1e-2, "x = {x}: {va} vs {vb}");
    }
}

#[test]
fn backward_induction_is_markov() {
    let pp = remove_drift(&put_payoff());
    let full = backward_induction(
        &pp,
        &DpConfig {
            store_stride: 50,
            ..small_dp(-1.0, 200)
        },
    )
    .unwrap();
    let half = backward_induction(&pp, &small_dp(-0.5, 100)).unwrap();
    let mid = full.slice_at(-0.5).expect("stored slice");
    let gap = mid
        .iter()
        .zip(half.initial_values())
        .map(|(u, v)| (u - v).abs())
        .fold(0.0, f64::max);
    assert!(gap <= 1e-12, "gap {gap}");
}

#[test]
fn monte_carlo_reproduces_dp_value() {
    let p = problem::linear(1.0).unwrap();
    let pp = p.payoff().unwrap();
    let cfg = DpConfig::for_problem(&p, -1.0, 400, 800);
    let dp = backward_induction(&pp, &cfg).unwrap();
    let v = dp.value_at(dp.initial_values(), 0.0);
    let mc = mc_value(&pp, -1.0, 0.0, &dp.boundary, 20_000, 400, 11).unwrap();
    assert!(
        (mc.estimate - v).abs() <= 4.0 * mc.std_error,
        "DP {v}, MC {} ± {}",
        mc.estimate,
        mc.std_error
    );
}
