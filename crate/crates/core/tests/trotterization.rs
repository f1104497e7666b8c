use proptest::prelude::*;

use sparse_trotter::observables::fidelity;
use sparse_trotter::oracle::ExactPropagator;
use sparse_trotter::trotter::{
    audit, build_sparse, build_sparse_dt, build_stochastic, build_uniform, build_uniform_dt, execute, TIME_EPS,
};
use sparse_trotter::{ChainModel, LayerKind, Partition, Schedule, StateVector, StochasticParams};

fn evolve(model: &ChainModel, schedule: &Schedule) -> StateVector {
    let mut state = model.initial_state().unwrap();
    execute(schedule, model, &mut state, |_, _| {}).unwrap();
    state
}

fn exact(model: &ChainModel, t: f64) -> StateVector {
    let prop = ExactPropagator::new(model).unwrap();
    prop.evolve(&model.initial_state().unwrap(), t).unwrap()
}

#[test]
fn uniform_four_sites_tracks_exact_evolution() {
    for (model, steps) in [(ChainModel::xy(4).unwrap(), 100), (ChainModel::tfi(4, 1.0).unwrap(), 400)] {
        let s = build_uniform(&model, steps, 10.0).unwrap();
        let f = fidelity(&exact(&model, 10.0), &evolve(&model, &s)).unwrap();
        assert!(f >= 1.0 - 1e-3, "{:?}: F = {f}", model.kind());
    }
}

#[test]
fn uniform_checkpoints_follow_exact_trajectory() {
    let model = ChainModel::tfi(6, 0.5).unwrap();
    let prop = ExactPropagator::new(&model).unwrap();
    let psi0 = model.initial_state().unwrap();
    let s = build_uniform_dt(&model, 0.02, 1.0).unwrap();
    let mut state = psi0.clone();
    let mut seen = 0;
    execute(&s, &model, &mut state, |t, st| {
        let f = fidelity(&prop.evolve(&psi0, t).unwrap(), st).unwrap();
        assert!(f > 1.0 - 1e-5, "t = {t}: F = {f}");
        seen += 1;
    })
    .unwrap();
    assert_eq!(seen, 51);
}

#[test]
fn sparse_scheme_converges_as_step_shrinks() {
    let model = ChainModel::xy(8).unwrap();
    let partition = Partition::new(&model, 2).unwrap();
    let target = exact(&model, 2.0);
    let infidelity = |dt: f64| {
        let s = build_sparse_dt(&model, &partition, dt, 4, 2.0).unwrap();
        1.0 - fidelity(&target, &evolve(&model, &s)).unwrap()
    };
    let coarse = infidelity(0.1);
    let fine = infidelity(0.05);
    assert!(fine < coarse / 8.0, "coarse {coarse:e}, fine {fine:e}");
}

#[test]
fn sparse_schedules_need_a_cut() {
    let model = ChainModel::tfi(6, 0.9).unwrap();
    let partition = Partition::new(&model, 1).unwrap();
    assert!(build_sparse(&model, &partition, 40, 2, 2.0).is_err());
}

#[test]
fn cut_bond_uses_scale_inversely_with_sparsity() {
    let model = ChainModel::xy(12).unwrap();
    let partition = Partition::new(&model, 3).unwrap();
    for sparsity in [2, 4, 8] {
        let s = build_sparse(&model, &partition, 80, sparsity, 8.0).unwrap();
        assert_eq!(s.cut_bond_uses(), 2 * 80 / sparsity);
        let mut state = model.initial_state().unwrap();
        let stats = execute(&s, &model, &mut state, |_, _| {}).unwrap();
        assert_eq!(stats.cut_gates, 2 * 80 / sparsity);
        assert_eq!(s.checkpoint_times().len(), 80 / sparsity + 1);
    }
    let uniform = build_uniform(&model, 80, 8.0).unwrap();
    assert_eq!(uniform.cut_bond_uses(), 0);
    assert_eq!(uniform.count(LayerKind::LocalBlock), 0);
}

#[test]
fn zero_variance_stochastic_state_equals_sparse() {
    for nodes in [2, 3] {
        let model = ChainModel::xy(12).unwrap();
        let partition = Partition::new(&model, nodes).unwrap();
        let sparse = build_sparse(&model, &partition, 40, 4, 4.0).unwrap();
        let params = StochasticParams::new(0.4, 0.0, 99);
        let stochastic = build_stochastic(&model, &partition, &params, 0.1, 4.0).unwrap();
        let f = fidelity(&evolve(&model, &sparse), &evolve(&model, &stochastic)).unwrap();
        assert!((1.0 - f).abs() < 1e-12, "nodes {nodes}: F = {f}");
    }
}

#[test]
fn stochastic_schedules_are_seed_deterministic() {
    let model = ChainModel::tfi(9, 2.0).unwrap();
    let partition = Partition::new(&model, 3).unwrap();
    let p = StochasticParams::new(0.3, 0.1, 5);
    let a = build_stochastic(&model, &partition, &p, 0.1, 5.0).unwrap();
    let b = build_stochastic(&model, &partition, &p, 0.1, 5.0).unwrap();
    assert_eq!(a, b);
    let c = build_stochastic(&model, &partition, &StochasticParams { seed: 6, ..p }, 0.1, 5.0).unwrap();
    assert_ne!(a.meta.cut_steps, c.meta.cut_steps);
    assert_eq!(a.checkpoint_times(), vec![0.0, 5.0]);
}

#[test]
fn evolution_is_norm_preserving_for_every_scheme() {
    let model = ChainModel::tfi(10, 1.3).unwrap();
    let partition = Partition::new(&model, 2).unwrap();
    let schedules = [
        build_uniform_dt(&model, 0.3, 3.0).unwrap(),
        build_sparse_dt(&model, &partition, 0.1, 6, 3.0).unwrap(),
        build_stochastic(&model, &partition, &StochasticParams::new(0.5, 0.2, 3), 0.1, 3.0).unwrap(),
    ];
    for s in &schedules {
        let norm = evolve(&model, s).norm();
        assert!((norm - 1.0).abs() < 1e-12, "{:?}: {norm}", s.meta.scheme);
    }
}

#[test]
fn schedule_dump_matches_golden_file() {
    let model = ChainModel::tfi(4, 0.5).unwrap();
    let partition = Partition::new(&model, 2).unwrap();
    let s = build_sparse(&model, &partition, 4, 2, 0.4).unwrap();
    let golden = include_str!("data/sparse_tfi_l4.dump");
    assert_eq!(s.to_dump(), golden);
    assert_eq!(Schedule::parse_dump(golden).unwrap(), s);
}

#[test]
fn dump_round_trips_every_scheme() {
    let model = ChainModel::xy(8).unwrap();
    let partition = Partition::new(&model, 4).unwrap();
    let schedules = [
        build_uniform_dt(&model, 0.3, 1.0).unwrap(),
        build_sparse_dt(&model, &partition, 0.1, 4, 1.0).unwrap(),
        build_stochastic(&model, &partition, &StochasticParams::new(0.3, 0.1, 17), 0.1, 2.0).unwrap(),
    ];
    for s in schedules {
        let back = Schedule::parse_dump(&s.to_dump()).unwrap();
        assert_eq!(back, s);
    }
}

#[test]
fn malformed_dumps_report_the_line() {
    let model = ChainModel::xy(4).unwrap();
    let dump = build_uniform(&model, 2, 0.2).unwrap().to_dump();
    let mut lines: Vec<&str> = dump.lines().collect();
    let bad_at = lines.len() - 2;
    lines[bad_at] = "even_bonds chain not-a-number";
    let err = Schedule::parse_dump(&lines.join("\n")).unwrap_err();
    assert!(err.to_string().contains(&format!("line {}", bad_at + 1)), "{err}");
    assert!(Schedule::parse_dump("").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn uniform_and_sparse_account_for_all_time(
        half_sites in 2usize..=6,
        nodes_pick in 0usize..3,
        dt in 0.02f64..0.5,
        sparsity_half in 1usize..=4,
        t_end in 0.1f64..6.0,
    ) {
        let sites = 2 * half_sites;
        let model = ChainModel::tfi(sites, 0.7).unwrap();
        let uniform = build_uniform_dt(&model, dt, t_end).unwrap();
        prop_assert!(audit(&uniform, &model).unwrap().max_deviation(t_end) <= 1e-9);

        let divisors: Vec<usize> = (2..=sites / 2).filter(|k| sites % k == 0).collect();
        let nodes = divisors[nodes_pick % divisors.len()];
        let partition = Partition::new(&model, nodes).unwrap();
        let sparse = build_sparse_dt(&model, &partition, dt, 2 * sparsity_half, t_end).unwrap();
        let a = audit(&sparse, &model).unwrap();
        prop_assert!(a.max_deviation(t_end) <= 1e-9, "{a:?}");
        prop_assert!((sparse.checkpoint_times().last().unwrap() - t_end).abs() <= TIME_EPS);
    }

    #[test]
    fn stochastic_accounts_for_all_time(
        seed in any::<u64>(),
        mu in 0.1f64..1.0,
        sigma in 0.0f64..0.3,
        nodes in 2usize..=4,
        t_end in 2.0f64..8.0,
    ) {
        let model = ChainModel::xy(4 * nodes).unwrap();
        let partition = Partition::new(&model, nodes).unwrap();
        let s = build_stochastic(&model, &partition, &StochasticParams::new(mu, sigma, seed), 0.1, t_end).unwrap();
        let a = audit(&s, &model).unwrap();
        prop_assert!(a.max_deviation(t_end) <= 1e-9, "{a:?}");
        for steps in &s.meta.cut_steps {
            prop_assert!((steps.iter().sum::<f64>() - t_end).abs() <= 1e-9);
            prop_assert!(steps.iter().all(|&x| x > 0.0));
        }
    }
}
