//! Shared fixtures for the benchmarks.

use bess_core::freq::{discretize, synth_day, SynthFrequencyParams};
use bess_core::scenarios::{synth_profiles, ProfileKind, ProfileParams, ProfileScenarioSet};
use bess_core::uncertainty::fit;
use bess_core::{BatteryConfig, TimeGrid, UncertaintyModel};

pub const SEED: u64 = 42;

/// Folded hourly deviation rows of `n` synthetic days.
pub fn frequency_rows(n: u64) -> Vec<Vec<f64>> {
    let grid = TimeGrid::hourly_day();
    let cfg = BatteryConfig::residential();
    let params = SynthFrequencyParams::default();
    (0..n)
        .map(|i| discretize(&synth_day(&params, SEED, i), &grid, &cfg, true).unwrap().df)
        .collect()
}

pub fn model(n_days: u64) -> UncertaintyModel {
    fit(&frequency_rows(n_days), 0.01).unwrap()
}

pub fn net_profiles(n: usize) -> ProfileScenarioSet {
    synth_profiles(ProfileKind::Net, &ProfileParams::default(), n, SEED)
}
