use bess_bench::{frequency_rows, model, net_profiles, SEED};
use bess_core::conic::ClarabelSolver;
use bess_core::optimizer::{build_combined_problem, build_fcr_problem, solve};
use bess_core::scenarios::{reduce_backward, second_stage_cost};
use bess_core::simulator::{resample_frequency, run_closed_loop, simulate, ClosedLoopOptions, RechargeController, SimulationConfig};
use bess_core::uncertainty::fit;
use bess_core::{BatteryConfig, PriceSet, ScEnvelope, TimeGrid};
use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

fn fitting(c: &mut Criterion) {
    let rows = frequency_rows(200);
    c.bench_function("fit/200 days", |b| b.iter(|| fit(black_box(&rows), 0.01).unwrap()));
}

fn optimization(c: &mut Criterion) {
    let grid = TimeGrid::hourly_day();
    let cfg = BatteryConfig::residential();
    let prices = PriceSet::german_residential();
    let model = model(200);
    let solver = ClarabelSolver::default();
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    g.bench_function("fcr", |b| {
        b.iter(|| solve(&build_fcr_problem(&model, &cfg, &grid, None).unwrap(), &solver).unwrap())
    });
    for n in [10, 30] {
        let profiles = net_profiles(n);
        g.bench_with_input(BenchmarkId::new("combined", n), &profiles, |b, p| {
            b.iter(|| solve(&build_combined_problem(&model, &cfg, &grid, &prices, p, None).unwrap(), &solver).unwrap())
        });
    }
    g.finish();
}

fn simulation(c: &mut Criterion) {
    let grid = TimeGrid::hourly_day();
    let cfg = BatteryConfig::residential();
    let rows = frequency_rows(200);
    let model = fit(&rows, 0.01).unwrap();
    let sol = solve(&build_fcr_problem(&model, &cfg, &grid, None).unwrap(), &ClarabelSolver::default()).unwrap();
    let controller = RechargeController::from_policy(&sol.policy);
    let samples = resample_frequency(&rows, &model, 1000, SEED);
    c.bench_function("closed loop/one day", |b| {
        b.iter(|| run_closed_loop(&controller, &cfg, &grid, black_box(&samples[0].df), None, ClosedLoopOptions::default()).unwrap())
    });
    let mut g = c.benchmark_group("monte carlo");
    g.sample_size(10);
    g.bench_function("resample 1000", |b| b.iter(|| resample_frequency(&rows, &model, 1000, SEED)));
    g.bench_function("simulate 1000", |b| {
        b.iter(|| simulate(&sol.policy, &cfg, &grid, &samples, None, &SimulationConfig::default()).unwrap())
    });
    g.finish();
}

fn scenarios(c: &mut Criterion) {
    let grid = TimeGrid::hourly_day();
    let cfg = BatteryConfig::residential();
    let prices = PriceSet::german_residential();
    let profiles = net_profiles(200);
    let env = ScEnvelope::full(&cfg, &grid);
    let mut g = c.benchmark_group("scenarios");
    g.sample_size(10);
    g.bench_function("reduce 200 to 20", |b| b.iter(|| reduce_backward(&profiles, 20).unwrap()));
    g.finish();
    c.bench_function("second stage/one profile", |b| {
        b.iter(|| second_stage_cost(black_box(&profiles.profiles[0]), &env, &cfg, &grid, &prices).unwrap())
    });
}

criterion_group!(benches, fitting, optimization, simulation, scenarios);
criterion_main!(benches);
