//! Recharge policies for reserve delivery and the rule-based self-consumption
//! controller.

use crate::model::{battery_step, BatteryConfig, EnergySeries, PowerSeries, TimeGrid};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PolicyError {
    #[error("policy matrix must be {n}x{n} and strictly lower triangular")]
    NotStrictlyLower { n: usize },
    #[error("reserve capacity must be nonnegative, got {0}")]
    NegativeReserve(f64),
    #[error("state feedback is undefined for zero reserve")]
    ZeroReserve,
    #[error("envelope violates battery limits at step {step}: {msg}")]
    InvalidEnvelope { step: usize, msg: String },
    #[error("length {actual} does not match policy dimension {expected}")]
    LengthMismatch { expected: usize, actual: usize },
}

/// Disturbance-feedback recharge policy `P_rc = D Δf` with reserve `r` in kW.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RechargePolicy {
    /// Row-major, strictly lower triangular.
    pub d: Vec<Vec<f64>>,
    pub r: f64,
}

impl RechargePolicy {
    pub fn new(d: Vec<Vec<f64>>, r: f64) -> Result<Self, PolicyError> {
        let p = Self { d, r };
        p.validate()?;
        Ok(p)
    }

    pub fn zero(n_t: usize) -> Self {
        Self {
            d: vec![vec![0.0; n_t]; n_t],
            r: 0.0,
        }
    }

    pub fn n_t(&self) -> usize {
        self.d.len()
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        let n = self.d.len();
        let strictly_lower = self
            .d
            .iter()
            .enumerate()
            .all(|(k, row)| row.len() == n && row[k..].iter().all(|&v| v == 0.0) && row.iter().all(|v| v.is_finite()));
        if !strictly_lower {
            return Err(PolicyError::NotStrictlyLower { n });
        }
        if !(self.r >= 0.0) {
            return Err(PolicyError::NegativeReserve(self.r));
        }
        Ok(())
    }

    /// Recharge power for a deviation scenario; entry `k` uses `df[..k]` only.
    pub fn recharge_disturbance(&self, df: &[f64]) -> Result<PowerSeries, PolicyError> {
        if df.len() != self.n_t() {
            return Err(PolicyError::LengthMismatch {
                expected: self.n_t(),
                actual: df.len(),
            });
        }
        Ok(PowerSeries(
            self.d
                .iter()
                .enumerate()
                .map(|(k, row)| row[..k].iter().zip(df).map(|(a, b)| a * b).sum())
                .collect(),
        ))
    }

    /// Equivalent feedback on past energy increments,
    /// `K = (I + D/r)⁻¹ D/r`, by forward substitution on the unit lower
    /// triangular factor.
    pub fn to_state_feedback(&self) -> Result<StateFeedbackController, PolicyError> {
        if self.r <= 0.0 {
            return Err(PolicyError::ZeroReserve);
        }
        let n = self.n_t();
        let scaled: Vec<Vec<f64>> = self.d.iter().map(|row| row.iter().map(|v| v / self.r).collect()).collect();
        let mut k = vec![vec![0.0; n]; n];
        for row in 0..n {
            for col in 0..row {
                let mut v = scaled[row][col];
                for j in (col + 1)..row {
                    v -= scaled[row][j] * k[j][col];
                }
                k[row][col] = v;
            }
        }
        Ok(StateFeedbackController { k, r: self.r })
    }
}

/// Recharge controller acting on measured energy increments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateFeedbackController {
    pub k: Vec<Vec<f64>>,
    pub r: f64,
}

impl StateFeedbackController {
    /// Recharge set-point for 0-based step `step`, given the energy increments
    /// (kWh) of all earlier steps.
    pub fn command(&self, step: usize, increments: &[f64], dt: f64) -> f64 {
        self.k[step][..step]
            .iter()
            .zip(increments)
            .map(|(g, de)| g * de / dt)
            .sum()
    }
}

/// Time-varying limits within which self-consumption may operate. Energy
/// bounds apply to the state at the end of each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScEnvelope {
    pub e_min_sc: EnergySeries,
    pub e_max_sc: EnergySeries,
    pub p_min_sc: PowerSeries,
    pub p_max_sc: PowerSeries,
}

/// Envelope limits of a single step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeStep {
    pub e_min: f64,
    pub e_max: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl ScEnvelope {
    /// The whole battery available to self-consumption.
    pub fn full(cfg: &BatteryConfig, grid: &TimeGrid) -> Self {
        Self {
            e_min_sc: EnergySeries::constant(cfg.e_min, grid),
            e_max_sc: EnergySeries::constant(cfg.e_max, grid),
            p_min_sc: PowerSeries(vec![cfg.p_min; grid.n_t]),
            p_max_sc: PowerSeries(vec![cfg.p_max; grid.n_t]),
        }
    }

    /// No self-consumption: energy pinned at `e0`, zero power.
    pub fn collapsed(e0: f64, grid: &TimeGrid) -> Self {
        Self {
            e_min_sc: EnergySeries::constant(e0, grid),
            e_max_sc: EnergySeries::constant(e0, grid),
            p_min_sc: PowerSeries::zeros(grid),
            p_max_sc: PowerSeries::zeros(grid),
        }
    }

    pub fn n_t(&self) -> usize {
        self.e_min_sc.len()
    }

    pub fn step(&self, k: usize) -> EnvelopeStep {
        EnvelopeStep {
            e_min: self.e_min_sc.0[k],
            e_max: self.e_max_sc.0[k],
            p_min: self.p_min_sc.0[k],
            p_max: self.p_max_sc.0[k],
        }
    }

    /// Checks the nesting `E_min ≤ e_min_sc ≤ e_max_sc ≤ E_max` and
    /// `P_min ≤ p_min_sc ≤ 0 ≤ p_max_sc ≤ P_max` with tolerance `tol`.
    pub fn validate(&self, cfg: &BatteryConfig, tol: f64) -> Result<(), PolicyError> {
        let n = self.n_t();
        for (name, len) in [
            ("e_max_sc", self.e_max_sc.len()),
            ("p_min_sc", self.p_min_sc.len()),
            ("p_max_sc", self.p_max_sc.len()),
        ] {
            if len != n {
                return Err(PolicyError::InvalidEnvelope {
                    step: 0,
                    msg: format!("{name} has length {len}, expected {n}"),
                });
            }
        }
        for k in 0..n {
            let s = self.step(k);
            let bad = |msg: &str| PolicyError::InvalidEnvelope {
                step: k + 1,
                msg: msg.to_string(),
            };
            if s.e_min < cfg.e_min - tol || s.e_max > cfg.e_max + tol || s.e_min > s.e_max + tol {
                return Err(bad("energy limits not nested"));
            }
            if s.p_min < cfg.p_min - tol || s.p_max > cfg.p_max + tol || s.p_min > tol || s.p_max < -tol {
                return Err(bad("power limits not nested"));
            }
        }
        Ok(())
    }
}

/// The self-consumption rule for one step: absorb surplus while below the
/// energy cap, cover deficits while above the floor. A state exactly on a
/// bound blocks that direction.
pub fn sc_rule_step(p_prof: f64, e_sc: f64, env: &EnvelopeStep) -> f64 {
    if p_prof < 0.0 && e_sc < env.e_max {
        (-p_prof).min(env.p_max)
    } else if p_prof > 0.0 && e_sc > env.e_min {
        (-p_prof).max(env.p_min)
    } else {
        0.0
    }
}

/// [`sc_rule_step`] with the set-point scaled down so the step ends exactly
/// on an energy bound instead of crossing it.
pub fn sc_rule_command(p_prof: f64, e_sc: f64, env: &EnvelopeStep, cfg: &BatteryConfig, dt: f64) -> f64 {
    let p = sc_rule_step(p_prof, e_sc, env);
    let next = battery_step(e_sc, p, cfg, dt);
    if p > 0.0 && next > env.e_max {
        ((env.e_max - e_sc) / (cfg.eta_c * dt)).clamp(0.0, p)
    } else if p < 0.0 && next < env.e_min {
        (-(e_sc - env.e_min) * cfg.eta_d / dt).clamp(p, 0.0)
    } else {
        p
    }
}

/// Integrates self-consumption power into the virtual self-consumption
/// energy; returns `n_t + 1` values starting with `e0_sc`.
pub fn track_sc_energy(p_sc: &PowerSeries, cfg: &BatteryConfig, grid: &TimeGrid, e0_sc: f64) -> EnergySeries {
    let mut out = Vec::with_capacity(p_sc.len() + 1);
    let mut e = e0_sc;
    out.push(e);
    for &p in &p_sc.0 {
        e = battery_step(e, p, cfg, grid.dt);
        out.push(e);
    }
    EnergySeries(out)
}

/// Runs the rule over a whole profile. Returns the set-points and the
/// `n_t + 1` virtual energies.
pub fn run_sc_rule(
    profile: &[f64],
    env: &ScEnvelope,
    cfg: &BatteryConfig,
    grid: &TimeGrid,
    e0_sc: f64,
) -> (PowerSeries, EnergySeries) {
    let mut powers = Vec::with_capacity(profile.len());
    let mut energy = Vec::with_capacity(profile.len() + 1);
    let mut e = e0_sc;
    energy.push(e);
    for (k, &p_prof) in profile.iter().enumerate() {
        let p = sc_rule_command(p_prof, e, &env.step(k), cfg, grid.dt);
        e = battery_step(e, p, cfg, grid.dt);
        powers.push(p);
        energy.push(e);
    }
    (PowerSeries(powers), EnergySeries(energy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Gains up to |D/r| = 1, the range optimized policies live in.
    fn random_policy(n: usize, rng: &mut impl Rng) -> RechargePolicy {
        let r = rng.random_range(0.1..7.0);
        let d = (0..n)
            .map(|k| (0..n).map(|i| if i < k { r * rng.random_range(-1.0..1.0) } else { 0.0 }).collect())
            .collect();
        RechargePolicy::new(d, r).unwrap()
    }

    #[test]
    fn disturbance_examples() {
        let zero = RechargePolicy::zero(4);
        assert_eq!(zero.recharge_disturbance(&[1.0, -2.0, 3.0, 0.5]).unwrap().0, vec![0.0; 4]);
        let mut d = vec![vec![0.0; 3]; 3];
        d[1][0] = 0.5;
        let p = RechargePolicy::new(d, 1.0).unwrap();
        assert_eq!(p.recharge_disturbance(&[1.0, 0.0, 0.0]).unwrap().0, vec![0.0, 0.5, 0.0]);
        assert!(p.recharge_disturbance(&[1.0]).is_err());
    }

    #[test]
    fn disturbance_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let p = random_policy(12, &mut rng);
            let df: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let fast = p.recharge_disturbance(&df).unwrap();
            for k in 0..12 {
                let mut s = 0.0;
                for i in 0..k {
                    s += p.d[k][i] * df[i];
                }
                assert_abs_diff_eq!(fast.0[k], s, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_causal_policy() {
        let mut d = vec![vec![0.0; 2]; 2];
        d[0][0] = 1.0;
        assert!(RechargePolicy::new(d, 1.0).is_err());
        assert!(RechargePolicy::new(vec![vec![0.0; 2]; 2], -1.0).is_err());
    }

    #[test]
    fn state_feedback_examples() {
        let zero = RechargePolicy { d: vec![vec![0.0; 3]; 3], r: 2.0 };
        assert!(zero.to_state_feedback().unwrap().k.iter().flatten().all(|&v| v == 0.0));
        let p = RechargePolicy {
            d: vec![vec![0.0, 0.0], vec![0.7, 0.0]],
            r: 1.0,
        };
        assert_abs_diff_eq!(p.to_state_feedback().unwrap().k[1][0], 0.7, epsilon = 1e-15);
        assert_eq!(RechargePolicy::zero(3).to_state_feedback(), Err(PolicyError::ZeroReserve));
    }

    #[test]
    fn state_feedback_inverts_unit_lower_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_policy(7, &mut rng);
        let k = p.to_state_feedback().unwrap().k;
        // (I + D/r) K = D/r
        for i in 0..7 {
            for j in 0..7 {
                let mut lhs = k[i][j];
                for m in 0..7 {
                    lhs += p.d[i][m] / p.r * k[m][j];
                }
                assert_abs_diff_eq!(lhs, p.d[i][j] / p.r, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn state_feedback_reproduces_disturbance_feedback() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = TimeGrid::new(10, 0.25).unwrap();
        for _ in 0..100 {
            let p = random_policy(10, &mut rng);
            let ctrl = p.to_state_feedback().unwrap();
            for _ in 0..10 {
                let df: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
                let expected = p.recharge_disturbance(&df).unwrap();
                let mut inc = Vec::new();
                for k in 0..10 {
                    let p_rc = ctrl.command(k, &inc, grid.dt);
                    assert!((p_rc - expected.0[k]).abs() <= 1e-8);
                    inc.push((p_rc + p.r * df[k]) * grid.dt);
                }
            }
        }
    }

    fn env_step(e_min: f64, e_max: f64, p_min: f64, p_max: f64) -> EnvelopeStep {
        EnvelopeStep { e_min, e_max, p_min, p_max }
    }

    #[test]
    fn rule_examples() {
        let s = env_step(1.0, 9.0, -7.0, 2.0);
        assert_eq!(sc_rule_step(-3.0, 5.0, &s), 2.0);
        assert_eq!(sc_rule_step(0.0, 5.0, &s), 0.0);
        assert_eq!(sc_rule_step(1.5, 5.0, &s), -1.5);
        // ties block
        assert_eq!(sc_rule_step(-3.0, 9.0, &s), 0.0);
        assert_eq!(sc_rule_step(3.0, 1.0, &s), 0.0);
    }

    #[test]
    fn rule_lands_on_bound() {
        let cfg = BatteryConfig::residential();
        let s = env_step(1.0, 5.2, -7.0, 7.0);
        let p = sc_rule_command(-6.0, 5.0, &s, &cfg, 0.25);
        assert_abs_diff_eq!(battery_step(5.0, p, &cfg, 0.25), 5.2, epsilon = 1e-12);
        let p = sc_rule_command(6.0, 1.1, &s, &cfg, 0.25);
        assert_abs_diff_eq!(battery_step(1.1, p, &cfg, 0.25), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tracking_examples() {
        let cfg = BatteryConfig::residential();
        let grid = TimeGrid::new(3, 0.25).unwrap();
        let flat = track_sc_energy(&PowerSeries::zeros(&grid), &cfg, &grid, 4.0);
        assert_eq!(flat.0, vec![4.0; 4]);
        let one = track_sc_energy(&PowerSeries(vec![2.0, 0.0, 0.0]), &cfg, &grid, 4.0);
        assert_abs_diff_eq!(one.0[1] - 4.0, 0.4743, epsilon = 1e-4);
        let pair = track_sc_energy(&PowerSeries(vec![2.0, -2.0, 0.0]), &cfg.lossless(), &grid, 4.0);
        assert_abs_diff_eq!(pair.0[3], 4.0, epsilon = 1e-12);
    }

    #[test]
    fn envelope_validation() {
        let cfg = BatteryConfig::residential();
        let grid = TimeGrid::hourly_day();
        assert!(ScEnvelope::full(&cfg, &grid).validate(&cfg, 0.0).is_ok());
        assert!(ScEnvelope::collapsed(5.0, &grid).validate(&cfg, 0.0).is_ok());
        let mut env = ScEnvelope::full(&cfg, &grid);
        env.p_max_sc.0[3] = -0.1;
        assert!(matches!(env.validate(&cfg, 0.0), Err(PolicyError::InvalidEnvelope { step: 4, .. })));
    }

    proptest! {
        #[test]
        fn causality(seed in 0u64..500, j in 0usize..12, bump in -1.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_policy(12, &mut rng);
            let df: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut changed = df.clone();
            changed[j] += bump;
            let a = p.recharge_disturbance(&df).unwrap();
            let b = p.recharge_disturbance(&changed).unwrap();
            for k in 0..=j {
                prop_assert_eq!(a.0[k], b.0[k]);
            }
        }

        #[test]
        fn rule_respects_envelope(
            seed in 0u64..1000,
            eta in 0.8f64..1.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = BatteryConfig::residential().with_round_trip(eta);
            let grid = TimeGrid::new(24, 0.5).unwrap();
            let lo = rng.random_range(0.0..4.0);
            let hi = rng.random_range(6.0..10.0);
            let env = ScEnvelope {
                e_min_sc: EnergySeries::constant(lo, &grid),
                e_max_sc: EnergySeries::constant(hi, &grid),
                p_min_sc: PowerSeries((0..24).map(|_| rng.random_range(-7.0..0.0)).collect()),
                p_max_sc: PowerSeries((0..24).map(|_| rng.random_range(0.0..7.0)).collect()),
            };
            let profile: Vec<f64> = (0..24).map(|_| rng.random_range(-5.0..5.0)).collect();
            let e0 = rng.random_range(lo..hi);
            let (p, e) = run_sc_rule(&profile, &env, &cfg, &grid, e0);
            for k in 0..24 {
                prop_assert!(e.0[k + 1] >= lo - 1e-9 && e.0[k + 1] <= hi + 1e-9);
                prop_assert!(p.0[k] >= env.p_min_sc.0[k] - 1e-12 && p.0[k] <= env.p_max_sc.0[k] + 1e-12);
            }
            let tracked = track_sc_energy(&p, &cfg, &grid, e0);
            for (a, b) in tracked.0.iter().zip(&e.0) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
