mod common;

use brokergame::broker::{
    build_p_matrices, compute_v_b_price, existence_diagnostic, existence_eigenvalues,
    reduced_matrices, terminal_g2, BrokerInputs,
};
use brokergame::numerics::rk4_integrate;
use brokergame::{
    AdmissibilityPolicy, BrokerCoefficients, Direction, ModelParams, TraderCoefficients,
};
use common::{default_grid, riccati_exact};
use nalgebra::{Matrix4, RowVector4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn solve_all(p: &ModelParams) -> (TraderCoefficients, BrokerCoefficients) {
    let grid = default_grid();
    let trader = TraderCoefficients::solve(p, &grid, AdmissibilityPolicy::Strict).unwrap();
    let v_b = compute_v_b_price(p, &grid).unwrap();
    let broker = BrokerCoefficients::solve(p, &trader, &v_b).unwrap();
    (trader, broker)
}

#[test]
fn price_filter_variance_matches_analytic_riccati() {
    let p = ModelParams::default();
    let grid = default_grid();
    let v = compute_v_b_price(&p, &grid).unwrap();
    let ss = p.sigma_s;
    let q = -1.0 / (ss * ss);
    let l = 2.0 * (-p.kappa_alpha - p.rho * p.sigma_alpha / ss);
    let c = (1.0 - p.rho * p.rho) * p.sigma_alpha.powi(2);
    for (k, val) in v.values().iter().enumerate() {
        assert!((val - riccati_exact(q, l, c, 0.0, grid.t(k))).abs() < 1e-8);
    }
    let steady = (-10.0 + 104f64.sqrt()) / 2.0;
    assert!((v.last() - steady).abs() < 2e-3);
}

#[test]
fn price_filter_variance_without_signal_noise() {
    let p = ModelParams {
        sigma_alpha: 0.0,
        ..ModelParams::default()
    };
    let v = compute_v_b_price(&p, &default_grid()).unwrap();
    assert!(v.values().iter().all(|&x| x == 0.0));
}

#[test]
fn p_matrices_against_direct_arithmetic() {
    let p = ModelParams::default();
    let (trader, broker) = solve_all(&p);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let t = rng.random_range(0.0..1.0);
        let inputs = BrokerInputs::at_time(&trader, &broker.v_b, t).unwrap();
        let m = build_p_matrices(&inputs, &p).unwrap();
        assert_eq!(m.p5, m.p5.transpose());
        let recomputed = m.p8.transpose() * m.p7 * 2.0 + m.p2.transpose();
        assert!((recomputed - m.p9).amax() < 1e-14);
        let d = p.cost_broker - inputs.f2 * inputs.f2 * p.cost_informed;
        assert!((m.denom - d).abs() < 1e-18);
        let p8 = RowVector4::new(1.0 - inputs.f2, 0.0, 0.0, inputs.f2) / (2.0 * d.sqrt());
        assert!((m.p8 - p8).amax() < 1e-14);
    }
}

#[test]
fn zero_impact_kills_the_signal_row() {
    let p = ModelParams {
        perm_impact: 0.0,
        ..ModelParams::default()
    };
    let (trader, broker) = solve_all(&p);
    for t in [0.0, 0.4, 0.9] {
        let inputs = BrokerInputs::at_time(&trader, &broker.v_b, t).unwrap();
        let m = build_p_matrices(&inputs, &p).unwrap();
        assert_eq!(m.p7, RowVector4::zeros());
        let expected = RowVector4::new(1.0 / (2.0 * p.cost_broker.sqrt()), 0.0, 0.0, 0.0);
        assert!((m.p8 - expected).amax() < 1e-15);
    }
}

#[test]
fn terminal_matrix() {
    let p = ModelParams::default();
    let (_, broker) = solve_all(&p);
    let g = broker.g2.last();
    let expected = terminal_g2(&p, broker.v_b.last());
    assert_eq!(g, expected);
    assert_eq!(g[(0, 0)], -(0.1 + 1e-3 * broker.v_b.last()));
    assert_eq!(broker.g0.last(), 0.0);
}

#[test]
fn linear_coefficient_stays_zero() {
    let p = ModelParams::default();
    let (trader, broker) = solve_all(&p);
    let g2 = &broker.g2;
    let g1 = rk4_integrate(
        "g1",
        |t, g1: &RowVector4<f64>| {
            let inputs = BrokerInputs::at_time(&trader, &broker.v_b, t).unwrap();
            let m = build_p_matrices(&inputs, &p).unwrap();
            let g = g2.eval(t).unwrap();
            -(g1 * m.p2.transpose()
                + 2.0 * g1 * m.p8.transpose() * m.p7
                + 4.0 * g1 * m.p8.transpose() * m.p8 * g)
        },
        RowVector4::zeros(),
        &default_grid(),
        Direction::Backward,
    )
    .unwrap();
    let worst = g1.values().iter().map(|r| r.amax()).fold(0.0, f64::max);
    assert!(worst < 1e-14);
}

#[test]
fn full_and_reduced_solves_agree() {
    let (_, broker) = solve_all(&ModelParams::default());
    assert!(broker.max_asymmetry() < 1e-10);
    let mut gap: f64 = 0.0;
    for (full, red) in broker
        .g2_full
        .values()
        .iter()
        .zip(broker.g2_reduced.values())
    {
        gap = gap
            .max((full[(0, 0)] - red[(0, 0)]).abs())
            .max((full[(0, 3)] - red[(0, 1)]).abs())
            .max((full[(3, 3)] - red[(1, 1)]).abs());
    }
    assert!(gap < 1e-8, "gap {gap}");
    assert!(broker.reduction_gap < 1e-8);
}

#[test]
fn existence_eigenvalues_without_impact() {
    let p = ModelParams {
        perm_impact: 0.0,
        ..ModelParams::default()
    };
    let (trader, broker) = solve_all(&p);
    for k in [0, 250, 500, 999, 1000] {
        let inputs = BrokerInputs::at_time(&trader, &broker.v_b, default_grid().t(k)).unwrap();
        let m = reduced_matrices(&inputs, &p).unwrap().existence_matrix();
        let mut got: Vec<f64> = existence_eigenvalues(&m).iter().copied().collect();
        let f3 = inputs.f3;
        let mut expected = vec![
            -2.0 * p.risk_broker.running(inputs.v_b),
            2.0 * f3 * (1.0 + p.cost_informed * f3),
            -2.0 / p.cost_broker,
            0.0,
        ];
        got.sort_by(|a, b| a.total_cmp(b));
        expected.sort_by(|a, b| a.total_cmp(b));
        for (g, e) in got.iter().zip(&expected) {
            assert!(
                (g - e).abs() < 1e-9 * (1.0 + e.abs()),
                "k={k}: {got:?} vs {expected:?}"
            );
        }
    }
}

#[test]
fn existence_diagnostic_with_default_parameters() {
    let p = ModelParams::default();
    let (trader, broker) = solve_all(&p);
    let diag = existence_diagnostic(&p, &trader, &broker.v_b).unwrap();
    assert!(
        diag.flagged.is_empty(),
        "flagged {:?}",
        &diag.flagged[..diag.flagged.len().min(5)]
    );
    assert!(diag.scaled_det.max_abs() < 1e-8);
    for ev in diag.eigenvalues.values() {
        assert!(ev[0] >= ev[1] && ev[1] >= ev[2]);
    }
}

#[test]
fn inventory_gain_unwinds_without_impact() {
    let p = ModelParams {
        perm_impact: 0.0,
        ..ModelParams::default()
    };
    let (_, broker) = solve_all(&p);
    for k in 0..=1000 {
        assert!(broker.gain.at(k)[0] < 0.0);
        let up = broker.control_at(k, &Vector4::new(1.5, 0.0, 0.0, 0.0));
        let down = broker.control_at(k, &Vector4::new(-0.5, 0.0, 0.0, 0.0));
        assert!(up < 0.0 && down > 0.0);
    }
}

#[test]
fn control_components_sum_to_total() {
    let (_, broker) = solve_all(&ModelParams::default());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    assert_eq!(broker.control(0.5, &Vector4::zeros()).unwrap(), 0.0);
    for _ in 0..100 {
        let t = rng.random_range(0.0..1.0);
        let y = Vector4::from_fn(|_, _| rng.random_range(-10.0..10.0));
        let parts = broker.control_components(t, &y).unwrap();
        let total = broker.control(t, &y).unwrap();
        assert!((parts.sum() - total).abs() < 1e-12 * (1.0 + total.abs()));
    }
}

#[test]
fn belief_sweep_changes_gains_continuously() {
    let base = ModelParams::default();
    let gains: Vec<Vec<RowVector4<f64>>> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&c| {
            let (_, b) = solve_all(&ModelParams {
                c_belief: c,
                ..base
            });
            b.gain.values().to_vec()
        })
        .collect();
    for w in gains.windows(3) {
        for k in (0..1000).step_by(50) {
            let second = w[0][k] - 2.0 * w[1][k] + w[2][k];
            let first = (w[2][k] - w[0][k]).amax();
            assert!(second.amax() <= first + 1e-12, "k={k}");
        }
    }
}

#[test]
fn gain_table_matches_p_matrix_feedback() {
    let p = ModelParams::default();
    let (trader, broker) = solve_all(&p);
    for k in [0, 100, 900] {
        let inputs = BrokerInputs::at_time(&trader, &broker.v_b, default_grid().t(k)).unwrap();
        let m = build_p_matrices(&inputs, &p).unwrap();
        let g: Matrix4<f64> = broker.g2.at(k);
        let direct = (m.p7 + 2.0 * m.p8 * g) / m.denom.sqrt();
        assert!((direct - broker.gain.at(k)).amax() < 1e-12);
    }
}

#[test]
fn csv_exports() {
    let p = ModelParams::default();
    let (trader, broker) = solve_all(&p);
    let mut buf = Vec::new();
    broker.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().next().unwrap().split(',').count(), 13);
    let diag = existence_diagnostic(&p, &trader, &broker.v_b).unwrap();
    let mut buf = Vec::new();
    diag.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "t,lambda1,lambda2,lambda3,lambda4,scaled_det"
    );
    assert_eq!(text.lines().count(), 1002);
}
