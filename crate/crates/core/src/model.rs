//! Shared domain types and the discrete lossy battery model.
//!
//! Power is signed with charging (consumption from the grid) positive. Energy
//! is in kWh, power in kW and durations in hours.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("invalid battery configuration: {0}")]
    InvalidBattery(String),
    #[error("invalid prices: {0}")]
    InvalidPrices(String),
    #[error("series length {actual} does not match grid length {expected}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// Uniform discretization of the optimization horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub n_t: usize,
    /// Step length in hours.
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(n_t: usize, dt: f64) -> Result<Self, ModelError> {
        let grid = Self { n_t, dt };
        grid.validate()?;
        Ok(grid)
    }

    /// One day in quarter-hour steps.
    pub fn quarter_hourly_day() -> Self {
        Self { n_t: 96, dt: 0.25 }
    }

    /// One day in hourly steps.
    pub fn hourly_day() -> Self {
        Self { n_t: 24, dt: 1.0 }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.n_t == 0 {
            return Err(ModelError::InvalidGrid("n_t must be at least 1".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(ModelError::InvalidGrid(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    pub fn horizon_hours(&self) -> f64 {
        self.n_t as f64 * self.dt
    }

    /// Step length in whole seconds, if the step is an integer number of seconds.
    pub fn step_seconds(&self) -> Option<u64> {
        let s = self.dt * 3600.0;
        let rounded = s.round();
        ((s - rounded).abs() < 1e-9 && rounded >= 1.0).then_some(rounded as u64)
    }

    /// Hour of day at the midpoint of step `k`.
    pub fn midpoint_hour(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.dt
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self::quarter_hourly_day()
    }
}

/// Physical envelope of the storage plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryConfig {
    pub e_min: f64,
    pub e_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub e_0: f64,
}

impl BatteryConfig {
    /// Residential 10 kWh / 7 kW unit, half charged, 90% round trip.
    pub fn residential() -> Self {
        let eta = 0.90_f64.sqrt();
        Self {
            e_min: 0.0,
            e_max: 10.0,
            p_min: -7.0,
            p_max: 7.0,
            eta_c: eta,
            eta_d: eta,
            e_0: 5.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let all = [self.e_min, self.e_max, self.p_min, self.p_max, self.eta_c, self.eta_d, self.e_0];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidBattery("all fields must be finite".into()));
        }
        if self.e_min >= self.e_max {
            return Err(ModelError::InvalidBattery("e_min must be below e_max".into()));
        }
        if self.p_min > 0.0 || self.p_max < 0.0 {
            return Err(ModelError::InvalidBattery("require p_min <= 0 <= p_max".into()));
        }
        if self.e_0 < self.e_min || self.e_0 > self.e_max {
            return Err(ModelError::InvalidBattery("e_0 outside [e_min, e_max]".into()));
        }
        for (name, eta) in [("eta_c", self.eta_c), ("eta_d", self.eta_d)] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(ModelError::InvalidBattery(format!("{name} must lie in (0, 1]")));
            }
        }
        if self.p_max <= 0.0 {
            return Err(ModelError::InvalidBattery("c-rate must be positive".into()));
        }
        Ok(())
    }

    pub fn capacity(&self) -> f64 {
        self.e_max - self.e_min
    }

    pub fn c_rate(&self) -> f64 {
        self.p_max / self.capacity()
    }

    pub fn round_trip_efficiency(&self) -> f64 {
        self.eta_c * self.eta_d
    }

    /// Same plant with the given round-trip efficiency split evenly.
    pub fn with_round_trip(mut self, eta: f64) -> Self {
        self.eta_c = eta.sqrt();
        self.eta_d = eta.sqrt();
        self
    }

    /// Same plant with unit efficiencies.
    pub fn lossless(mut self) -> Self {
        self.eta_c = 1.0;
        self.eta_d = 1.0;
        self
    }

    /// Energy gained per hour for a signed power set-point.
    pub fn energy_rate(&self, p: f64) -> f64 {
        self.eta_c * p.max(0.0) - (-p).max(0.0) / self.eta_d
    }
}

/// Energy tariffs in EUR/kWh and reserve price in EUR/MW/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriceSet {
    pub c_cons: f64,
    pub c_inj: f64,
    pub c_r: f64,
}

impl PriceSet {
    /// German residential tariffs and average 2016 reserve price.
    pub fn german_residential() -> Self {
        Self {
            c_cons: 0.2873,
            c_inj: 0.1220,
            c_r: 14.71,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if [self.c_cons, self.c_inj, self.c_r].iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return Err(ModelError::InvalidPrices("prices must be finite and nonnegative".into()));
        }
        if self.c_inj >= self.c_cons {
            return Err(ModelError::InvalidPrices("c_inj must be below c_cons".into()));
        }
        Ok(())
    }

    /// Reserve revenue in EUR for `r` kW held over the grid horizon.
    pub fn reserve_revenue(&self, r: f64, grid: &TimeGrid) -> f64 {
        self.c_r * (r / 1000.0) * grid.horizon_hours()
    }

    /// Cost in EUR of exchanging `p_grid` kW with the grid for `dt` hours.
    pub fn exchange_cost(&self, p_grid: f64, dt: f64) -> f64 {
        (self.c_cons * p_grid.max(0.0) - self.c_inj * (-p_grid).max(0.0)) * dt
    }
}

/// Power values in kW, one per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerSeries(pub Vec<f64>);

/// Energy values in kWh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergySeries(pub Vec<f64>);

impl PowerSeries {
    pub fn zeros(grid: &TimeGrid) -> Self {
        Self(vec![0.0; grid.n_t])
    }

    pub fn aligned(values: Vec<f64>, grid: &TimeGrid) -> Result<Self, ModelError> {
        check_len(values.len(), grid)?;
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl EnergySeries {
    pub fn aligned(values: Vec<f64>, grid: &TimeGrid) -> Result<Self, ModelError> {
        check_len(values.len(), grid)?;
        Ok(Self(values))
    }

    pub fn constant(value: f64, grid: &TimeGrid) -> Self {
        Self(vec![value; grid.n_t])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

fn check_len(actual: usize, grid: &TimeGrid) -> Result<(), ModelError> {
    if actual != grid.n_t {
        return Err(ModelError::LengthMismatch {
            expected: grid.n_t,
            actual,
        });
    }
    Ok(())
}

/// One step of the lossy battery. The result is not clamped.
pub fn battery_step(e: f64, p: f64, cfg: &BatteryConfig, dt: f64) -> f64 {
    e + cfg.energy_rate(p) * dt
}

/// Kind of bound crossed during a simulated step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundViolation {
    EnergyAbove,
    EnergyBelow,
    PowerAbove,
    PowerBelow,
}

/// A bound violation at a 1-based step index (energy index `k` is the state
/// after step `k`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepViolation {
    pub step: usize,
    pub kind: BoundViolation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `n_t + 1` energies, starting with the initial energy.
    pub energy: EnergySeries,
    pub violations: Vec<StepViolation>,
}

impl Trajectory {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Applies `battery_step` along a power series and flags every bound crossing.
pub fn simulate_trajectory(e0: f64, powers: &PowerSeries, cfg: &BatteryConfig, grid: &TimeGrid) -> Trajectory {
    const TOL: f64 = 1e-9;
    let mut energy = Vec::with_capacity(powers.len() + 1);
    let mut violations = Vec::new();
    let mut e = e0;
    energy.push(e);
    for (k, &p) in powers.0.iter().enumerate() {
        let step = k + 1;
        if p > cfg.p_max + TOL {
            violations.push(StepViolation { step, kind: BoundViolation::PowerAbove });
        } else if p < cfg.p_min - TOL {
            violations.push(StepViolation { step, kind: BoundViolation::PowerBelow });
        }
        e = battery_step(e, p, cfg, grid.dt);
        if e > cfg.e_max + TOL {
            violations.push(StepViolation { step, kind: BoundViolation::EnergyAbove });
        } else if e < cfg.e_min - TOL {
            violations.push(StepViolation { step, kind: BoundViolation::EnergyBelow });
        }
        energy.push(e);
    }
    Trajectory {
        energy: EnergySeries(energy),
        violations,
    }
}
