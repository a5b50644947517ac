mod common;

use brokergame::sim::{
    benchmark_control, path_seed, run_paths, simulate_path, simulate_with_increments, Increments,
};
use brokergame::{
    BrokerMode, Model, ModelParams, PathResult, SignalSource, StrategyConfig, TimeGrid,
};
use proptest::prelude::*;

fn small_grid() -> TimeGrid {
    TimeGrid::new(1.0, 250).unwrap()
}

/// Largest violation of the inventory and cash identities over the path,
/// with left-point sums matching the explicit Euler scheme.
fn bookkeeping_residuals(path: &PathResult, p: &ModelParams) -> (f64, f64) {
    let dt = path.t[1] - path.t[0];
    let (mut int_nu, mut int_xi) = (0.0, 0.0);
    let (mut cash_nu, mut cash_xi) = (0.0, 0.0);
    let q_i0 = path.q_i[0];
    let (mut inv, mut cash): (f64, f64) = (0.0, 0.0);
    for k in 0..path.len() {
        let r_inv = path.q_b[k] - int_nu + (path.q_i[k] - q_i0) + int_xi;
        let r_cash = path.x_b[k] + path.x_i[k] + cash_nu - cash_xi;
        inv = inv.max(r_inv.abs());
        cash = cash.max(r_cash.abs());
        let (s, nu, xi) = (path.s[k], path.nu[k], path.xi[k]);
        int_nu += nu * dt;
        int_xi += xi * dt;
        cash_nu += nu * (s + p.cost_broker * nu) * dt;
        cash_xi += xi * (s + p.cost_uninformed * xi) * dt;
    }
    (inv, cash)
}

#[test]
fn zero_noise_from_zero_state_stays_at_zero() {
    let model = Model::new(&ModelParams::default(), &small_grid()).unwrap();
    let inc = Increments::zeros(&small_grid());
    for source in [SignalSource::Price, SignalSource::Flow, SignalSource::Naive] {
        let cfg = StrategyConfig {
            signal_source: source,
            ..StrategyConfig::default()
        };
        let path = simulate_with_increments(&model, &cfg, &inc).unwrap();
        for series in [
            &path.alpha,
            &path.xi,
            &path.nu,
            &path.eta,
            &path.q_b,
            &path.q_i,
            &path.x_b,
            &path.x_i,
            &path.nu_hat,
            &path.alpha_hat_price,
            &path.alpha_hat_flow,
            &path.alpha_hat_naive,
        ] {
            assert!(series.iter().all(|&x| x == 0.0));
        }
        assert!(path.s.iter().all(|&s| s == 100.0));
    }
}

#[test]
fn bookkeeping_on_default_paths() {
    let p = ModelParams::default();
    let model = Model::new(&p, &TimeGrid::new(1.0, 1000).unwrap()).unwrap();
    for mode in [
        BrokerMode::Optimal,
        BrokerMode::Benchmark1,
        BrokerMode::Benchmark2,
        BrokerMode::Benchmark3,
    ] {
        let cfg = StrategyConfig {
            broker_mode: mode,
            mispecify_qi: true,
            ..StrategyConfig::default()
        };
        let path = simulate_path(&model, &cfg, 17).unwrap();
        let (inv, cash) = bookkeeping_residuals(&path, &p);
        assert!(inv < 1e-10, "{mode:?} inventory {inv}");
        assert!(cash < 1e-8, "{mode:?} cash {cash}");
    }
}

#[test]
fn arms_share_market_noise() {
    let model = Model::new(&ModelParams::default(), &small_grid()).unwrap();
    let base = simulate_path(&model, &StrategyConfig::default(), 3).unwrap();
    for mode in BrokerMode::BENCHMARKS {
        let cfg = StrategyConfig {
            broker_mode: mode,
            ..StrategyConfig::default()
        };
        let path = simulate_path(&model, &cfg, 3).unwrap();
        assert_eq!(path.alpha, base.alpha);
        assert_eq!(path.xi, base.xi);
        assert_ne!(path.nu, base.nu);
    }
}

#[test]
fn path_records_do_not_depend_on_thread_count() {
    let model = Model::new(&ModelParams::default(), &small_grid()).unwrap();
    let cfg = StrategyConfig::default();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_paths(&model, &cfg, &BrokerMode::BENCHMARKS, 40, 5))
    };
    let one = run(1);
    assert_eq!(one, run(4));
    for (n, rec) in one.iter().enumerate() {
        assert_eq!(rec.seed, path_seed(5, n as u64));
        assert_eq!(rec.arms.len(), 4);
    }
}

#[test]
fn nearby_base_seeds_do_not_share_paths() {
    let a: Vec<u64> = (0..1000).map(|n| path_seed(0, n)).collect();
    let b: std::collections::HashSet<u64> = (0..1000).map(|n| path_seed(1, n)).collect();
    assert!(a.iter().all(|s| !b.contains(s)));
}

#[test]
fn no_impact_means_trader_ignores_broker_flow() {
    let p = ModelParams {
        perm_impact: 0.0,
        ..ModelParams::default()
    };
    let model = Model::new(&p, &small_grid()).unwrap();
    let path = simulate_path(&model, &StrategyConfig::default(), 8).unwrap();
    assert!(path.nu_hat.iter().all(|&x| x == 0.0));
    for k in 0..path.len() {
        let from_alpha_and_inventory =
            model.trader.f1.at(k) * path.alpha[k] + model.trader.f3.at(k) * path.q_i[k];
        assert!((path.eta[k] - from_alpha_and_inventory).abs() < 1e-12 * (1.0 + path.eta[k].abs()));
    }
}

#[test]
fn twap_unwinds_linearly() {
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let dt = grid.dt();
    let q0 = 3.5;
    let mut q: f64 = q0;
    for k in 0..grid.steps() {
        let t = grid.t(k);
        assert!((q - q0 * (1.0 - t)).abs() < 1e-10);
        q += benchmark_control(BrokerMode::Benchmark1, 1.0 - t, dt, 0.0, 0.0, q) * dt;
    }
    assert!(q.abs() < 1e-10);
}

#[test]
fn mispecified_optimal_ignores_signal_at_the_end() {
    let model = Model::new(&ModelParams::default(), &small_grid()).unwrap();
    let cfg = StrategyConfig {
        mispecify_qi: true,
        signal_source: SignalSource::Naive,
        ..StrategyConfig::default()
    };
    let path = simulate_path(&model, &cfg, 2).unwrap();
    let n = small_grid().steps();
    assert_ne!(path.q_i[0], 0.0);
    assert_eq!(path.q_i_belief[0], 0.0);
    for k in n - cfg.unwind_steps..=n {
        assert_eq!(path.alpha_hat_used[k], 0.0);
        assert_eq!(path.nu_components[1][k], 0.0);
    }
}

#[test]
fn components_sum_to_the_optimal_rate() {
    let model = Model::new(&ModelParams::default(), &small_grid()).unwrap();
    let path = simulate_path(&model, &StrategyConfig::default(), 6).unwrap();
    for k in 0..path.len() {
        let sum: f64 = (0..4).map(|i| path.nu_components[i][k]).sum();
        assert!((sum - path.nu[k]).abs() < 1e-12 * (1.0 + path.nu[k].abs()));
    }
}

#[test]
fn csv_round_trips_at_full_precision() {
    let model = Model::new(&ModelParams::default(), &small_grid()).unwrap();
    let path = simulate_path(&model, &StrategyConfig::default(), 6).unwrap();
    let mut buf = Vec::new();
    path.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), path.len());
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0], path.t[k]);
        assert_eq!(row[4], path.nu[k]);
        assert_eq!(row[13], path.alpha_hat_flow[k]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn bookkeeping_with_random_parameters(
        perm in 0.0f64..2e-3,
        kappa_alpha in 1.0f64..10.0,
        sigma_alpha in 0.2f64..2.0,
        rho in -0.5f64..0.5,
        sigma_u in 10.0f64..200.0,
        theta_b in 2.0f64..20.0,
        seed in 0u64..1000,
        mispecify in proptest::bool::ANY,
    ) {
        let p = ModelParams {
            perm_impact: perm,
            kappa_alpha,
            sigma_alpha,
            rho,
            sigma_u,
            theta_b,
            ..ModelParams::default()
        };
        let model = Model::new(&p, &common::default_grid()).unwrap();
        let cfg = StrategyConfig { mispecify_qi: mispecify, ..StrategyConfig::default() };
        let path = simulate_path(&model, &cfg, seed).unwrap();
        let (inv, cash) = bookkeeping_residuals(&path, &p);
        prop_assert!(inv < 1e-10, "inventory {}", inv);
        prop_assert!(cash < 1e-8, "cash {}", cash);
    }
}
