use super::*;
use crate::conic::ClarabelSolver;
use crate::uncertainty::fit;
use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Correlated deviation rows in [-1, 1] with a small positive drift.
fn deviation_rows(n: usize, n_t: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut x: f64 = rng.random_range(-0.2..0.2);
            (0..n_t)
                .map(|_| {
                    x = (0.7 * x + rng.random_range(-0.12..0.15)).clamp(-1.0, 1.0);
                    x
                })
                .collect()
        })
        .collect()
}

fn model(n_t: usize, eps: f64) -> UncertaintyModel {
    fit(&deviation_rows(3 * n_t + 40, n_t, 7), eps).unwrap()
}

fn solver() -> ClarabelSolver {
    ClarabelSolver::default()
}

fn fcr(model: &UncertaintyModel, cfg: &BatteryConfig, grid: &TimeGrid, fix_r: Option<f64>) -> CoOptSolution {
    solve(&build_fcr_problem(model, cfg, grid, fix_r).unwrap(), &solver()).unwrap()
}

#[test]
fn row_counts() {
    let grid = TimeGrid::quarter_hourly_day();
    let m = model(96, 0.01);
    let p = build_fcr_problem(&m, &BatteryConfig::residential(), &grid, None).unwrap();
    // the two first-step power rows have no uncertain part and become linear
    assert_eq!(p.program.size().n_soc, 4 * 96 - 2);
    let wrong = TimeGrid::hourly_day();
    assert!(matches!(
        build_fcr_problem(&m, &BatteryConfig::residential(), &wrong, None),
        Err(OptimizeError::DimensionMismatch { .. })
    ));
}

#[test]
fn single_step_matches_closed_form() {
    let grid = TimeGrid::new(1, 1.0).unwrap();
    let m = fit(&deviation_rows(50, 1, 3), 0.05).unwrap();
    let cfg = BatteryConfig::residential();
    let sol = fcr(&m, &cfg, &grid, None);
    assert!(sol.is_optimal());
    assert_eq!(sol.policy.d, vec![vec![0.0]]);
    let l = m.w_inv[0][0];
    let omega = m.omega();
    let up = (cfg.e_max - cfg.e_0) / (m.mean[0] + omega * m.sigma_f[0] * l);
    let down = (cfg.e_0 - cfg.e_min) / (-m.mean[0] + omega * m.sigma_b[0] * l);
    let expected = cfg.p_max.min(-cfg.p_min).min(up).min(down);
    assert_abs_diff_eq!(sol.r(), expected, epsilon = 1e-6);
}

#[test]
fn unlimited_energy_leaves_power_binding() {
    let grid = TimeGrid::hourly_day();
    let m = model(24, 0.01);
    let cfg = BatteryConfig {
        e_min: -1e4,
        e_max: 1e4,
        e_0: 0.0,
        p_min: -6.0,
        ..BatteryConfig::residential()
    };
    let sol = fcr(&m, &cfg, &grid, None);
    assert_abs_diff_eq!(sol.r(), 6.0, epsilon = 1e-5);
}

#[test]
fn no_energy_room_means_no_reserve() {
    let grid = TimeGrid::hourly_day();
    let m = model(24, 0.01);
    let cfg = BatteryConfig {
        e_min: 5.0,
        e_max: 5.0 + 1e-6,
        e_0: 5.0,
        ..BatteryConfig::residential()
    };
    let sol = fcr(&m, &cfg, &grid, None);
    assert!(sol.is_optimal());
    assert!(sol.r() < 1e-5, "r = {}", sol.r());
}

#[test]
fn fixed_reserve_feasibility() {
    let grid = TimeGrid::hourly_day();
    let m = model(24, 0.01);
    let cfg = BatteryConfig::residential();
    let free = fcr(&m, &cfg, &grid, None);
    assert!(free.is_optimal());
    assert!(free.residuals.primal <= 1e-7 && free.residuals.dual <= 1e-7);
    assert!(free.residuals.max_violation <= 1e-6);
    let r = free.r();
    assert!(r > 0.5 && r < 7.0, "r = {r}");
    assert_eq!(fcr(&m, &cfg, &grid, Some(0.9 * r)).status, SolveStatus::Optimal);
    assert_eq!(fcr(&m, &cfg, &grid, Some(r * 1.05 + 1e-3)).status, SolveStatus::Infeasible);
}

#[test]
fn solution_satisfies_explicit_rows() {
    // the whitened parametrization and the explicit D-based rows must agree
    let grid = TimeGrid::hourly_day();
    let m = model(24, 0.01);
    let cfg = BatteryConfig::residential();
    let sol = fcr(&m, &cfg, &grid, None);
    sol.policy.validate().unwrap();
    let report = verify_constraints(&sol.policy, &sol.envelope, &m, &cfg, &grid, &deviation_rows(200, 24, 99));
    assert!(report.min_margin >= -1e-6, "{}", report.min_margin);
    // at least one row is tight at the optimum
    assert!(report.min_margin <= 1e-5);
}

#[test]
fn zero_policy_margins_are_static_bounds() {
    let grid = TimeGrid::hourly_day();
    let m = model(24, 0.01);
    let cfg = BatteryConfig::residential();
    let env = ScEnvelope::collapsed(cfg.e_0, &grid);
    let report = verify_constraints(&RechargePolicy::zero(24), &env, &m, &cfg, &grid, &[]);
    for row in &report.rows {
        let expected = match row.block {
            RowBlock::UpperPower => cfg.p_max,
            RowBlock::LowerPower => -cfg.p_min,
            RowBlock::UpperEnergy => cfg.e_max - cfg.e_0,
            RowBlock::LowerEnergy => cfg.e_0 - cfg.e_min,
        };
        assert_eq!(row.margin, expected);
        assert_eq!(row.empirical_max, None);
    }
}

#[test]
fn dense_whitening_takes_the_constrained_path() {
    // with unit deviations the robust rows depend on ‖c‖ only, so rotating
    // the whitened coordinates must not change the optimum
    let grid = TimeGrid::new(6, 1.0).unwrap();
    let cfg = BatteryConfig::residential();
    let mut base = fit(&deviation_rows(60, 6, 5), 0.05).unwrap();
    base.sigma_f = vec![1.0; 6];
    base.sigma_b = vec![1.0; 6];
    let (c, s) = (0.6f64, 0.8f64);
    let mut rotated = base.clone();
    // W' = Q W, L' = L Qᵀ with a Givens rotation on coordinates 0 and 5
    for col in 0..6 {
        let (a, b) = (base.w[0][col], base.w[5][col]);
        rotated.w[0][col] = c * a - s * b;
        rotated.w[5][col] = s * a + c * b;
    }
    for row in 0..6 {
        let (a, b) = (base.w_inv[row][0], base.w_inv[row][5]);
        rotated.w_inv[row][0] = c * a - s * b;
        rotated.w_inv[row][5] = s * a + c * b;
    }
    assert!(!is_lower_triangular(&rotated.w));
    let p = build_fcr_problem(&rotated, &cfg, &grid, None).unwrap();
    assert!(p.program.size().n_eq > build_fcr_problem(&base, &cfg, &grid, None).unwrap().program.size().n_eq);
    let a = fcr(&base, &cfg, &grid, None);
    let b = solve(&p, &solver()).unwrap();
    assert_abs_diff_eq!(a.r(), b.r(), epsilon = 1e-5);
    b.policy.validate().unwrap();
}

fn flat_prices(c_r: f64) -> PriceSet {
    PriceSet { c_r, ..PriceSet::german_residential() }
}

fn profiles(n: usize, seed: u64) -> ProfileScenarioSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ProfileScenarioSet::uniform(
        (0..n)
            .map(|_| {
                (0..24)
                    .map(|k| {
                        let sun = if (8..17).contains(&k) { 2.5 } else { 0.0 };
                        0.6 + rng.random_range(-0.3..0.6) - sun * rng.random_range(0.5..1.0)
                    })
                    .collect()
            })
            .collect(),
    )
    .unwrap()
}

fn combined(m: &UncertaintyModel, prices: &PriceSet, set: &ProfileScenarioSet, fix_r: Option<f64>) -> CoOptSolution {
    let grid = TimeGrid::hourly_day();
    let p = build_combined_problem(m, &BatteryConfig::residential(), &grid, prices, set, fix_r).unwrap();
    solve(&p, &solver()).unwrap()
}

#[test]
fn combined_validation_errors() {
    let m = model(24, 0.01);
    let grid = TimeGrid::hourly_day();
    let cfg = BatteryConfig::residential();
    let prices = PriceSet::german_residential();
    let empty = ProfileScenarioSet::uniform(Vec::new()).unwrap();
    assert!(matches!(
        build_combined_problem(&m, &cfg, &grid, &prices, &empty, None),
        Err(OptimizeError::EmptyScenarios)
    ));
    let short = ProfileScenarioSet::uniform(vec![vec![0.0; 23]]).unwrap();
    assert!(matches!(
        build_combined_problem(&m, &cfg, &grid, &prices, &short, None),
        Err(OptimizeError::ScenarioLengthMismatch { .. })
    ));
}

#[test]
fn without_reserve_value_the_envelope_opens_fully() {
    // with no reserve price the widest envelope is optimal, which the exact
    // second-stage recursion prices independently
    let m = model(24, 0.01);
    let grid = TimeGrid::hourly_day();
    let cfg = BatteryConfig::residential();
    let prices = flat_prices(0.0);
    let set = profiles(3, 13);
    let sol = combined(&m, &prices, &set, Some(0.0));
    assert!(sol.is_optimal());
    let full = ScEnvelope::full(&cfg, &grid);
    let expected: f64 = set
        .profiles
        .iter()
        .map(|p| second_stage_cost(p, &full, &cfg, &grid, &prices).unwrap() / 3.0)
        .sum();
    assert_abs_diff_eq!(sol.objective, expected, epsilon = 1e-6);
}

#[test]
fn duplicate_scenarios_are_invariant() {
    let m = model(24, 0.01);
    let one = profiles(1, 4);
    let two = ProfileScenarioSet::uniform(vec![one.profiles[0].clone(); 2]).unwrap();
    let prices = PriceSet::german_residential();
    let a = combined(&m, &prices, &one, None);
    let b = combined(&m, &prices, &two, None);
    assert_abs_diff_eq!(a.objective, b.objective, epsilon = 1e-6);
    assert_abs_diff_eq!(a.r(), b.r(), epsilon = 1e-4);
}

#[test]
fn combined_solution_structure() {
    let m = model(24, 0.01);
    let set = profiles(20, 8);
    let prices = PriceSet::german_residential();
    let sol = combined(&m, &prices, &set, None);
    assert!(sol.is_optimal());
    assert!(sol.residuals.max_violation <= 1e-6);
    sol.envelope.validate(&BatteryConfig::residential(), 1e-6).unwrap();
    let bd = sol.breakdown.unwrap();
    assert_abs_diff_eq!(bd.total, sol.objective, epsilon = 1e-6);
    assert_abs_diff_eq!(bd.fcr_revenue, prices.reserve_revenue(sol.r(), &TimeGrid::hourly_day()), epsilon = 1e-12);
    for d in &sol.dispatch {
        for k in 0..24 {
            assert!((d.p_cons[k] * d.p_inj[k]).abs() <= 1e-6);
            assert!((d.p_sc_c[k] * d.p_sc_d[k]).abs() <= 1e-6);
        }
    }
    let report = verify_constraints(&sol.policy, &sol.envelope, &m, &BatteryConfig::residential(), &TimeGrid::hourly_day(), &[]);
    assert!(report.min_margin >= -1e-6);
}

#[test]
fn co_optimization_dominates() {
    let m = model(24, 0.01);
    let grid = TimeGrid::hourly_day();
    let cfg = BatteryConfig::residential();
    let set = profiles(30, 2);
    let prices = PriceSet::german_residential();
    let joint = combined(&m, &prices, &set, None);
    let sc_only = combined(&m, &prices, &set, Some(0.0));
    let reserve_only = fcr(&m, &cfg, &grid, None);
    // the reserve-only strategy as a point of the combined program
    let idle_cost: f64 = set
        .profiles
        .iter()
        .zip(&set.weights)
        .map(|(p, w)| w * p.iter().map(|&v| prices.exchange_cost(v, grid.dt)).sum::<f64>())
        .sum();
    let reserve_only_obj = idle_cost - prices.reserve_revenue(reserve_only.r(), &grid);
    assert!(joint.objective <= sc_only.objective + 1e-6);
    assert!(joint.objective <= reserve_only_obj + 1e-6);
    // and a huge reserve price pushes the joint optimum to the reserve-only one
    let pricey = combined(&m, &flat_prices(1e4), &set, None);
    // a free envelope can only add room for reserve
    assert!(pricey.r() >= reserve_only.r() - 1e-6);
    assert!(pricey.r() >= joint.r() - 1e-6);
}

#[test]
fn reserve_grows_with_epsilon() {
    let grid = TimeGrid::hourly_day();
    let cfg = BatteryConfig::residential();
    let base = model(24, 0.01);
    let rs: Vec<f64> = [1e-4, 1e-3, 1e-2, 1e-1]
        .iter()
        .map(|&e| fcr(&base.with_epsilon(e).unwrap(), &cfg, &grid, None).r())
        .collect();
    for w in rs.windows(2) {
        assert!(w[1] >= w[0] - 1e-6, "{rs:?}");
    }
}

#[test]
fn gap_adapter_prices_candidates() {
    let m = model(24, 0.01);
    let prices = PriceSet::german_residential();
    let s = solver();
    let gp = CombinedGapProblem {
        model: &m,
        cfg: BatteryConfig::residential(),
        grid: TimeGrid::hourly_day(),
        prices,
        solver: &s,
    };
    let set = profiles(5, 21);
    let (obj, first) = gp.solve_saa(&set).unwrap();
    // the SAA optimum equals the average of its own second stages
    let avg: f64 = set.profiles.iter().map(|p| gp.evaluate(&first, p).unwrap()).sum::<f64>() / 5.0;
    assert_abs_diff_eq!(obj, avg, epsilon = 1e-5);
}
