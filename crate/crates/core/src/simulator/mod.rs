//! Monte Carlo validation of recharge controllers on the lossy battery.

use crate::freq::FrequencyScenario;
use crate::model::{battery_step, BatteryConfig, PriceSet, TimeGrid};
use crate::optimizer::{CoOptSolution, RowBlock};
use crate::policy::{run_sc_rule, sc_rule_command, RechargePolicy, ScEnvelope, StateFeedbackController};
use crate::stats::{clopper_pearson_upper, derive_seed, mean_std, normal_quantile, sorted_quantile};
use crate::uncertainty::UncertaintyModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

const TOL: f64 = 1e-9;
const RESAMPLE_TAG: u64 = 0xb007;

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("scenario has {actual} steps, controller expects {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("self-consumption needs at least one profile")]
    NoProfiles,
    #[error("alpha must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Bootstraps new deviation days: each whitened coordinate is drawn
/// independently, with replacement, from the training pool of that
/// coordinate. Sample `s` uses its own random stream.
pub fn resample_frequency(
    train: &[Vec<f64>],
    model: &UncertaintyModel,
    n_r: usize,
    seed: u64,
) -> Vec<FrequencyScenario> {
    if train.is_empty() {
        return Vec::new();
    }
    let whitened: Vec<Vec<f64>> = train.iter().map(|row| model.whiten(row)).collect();
    let n_t = model.n_t();
    (0..n_r)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, RESAMPLE_TAG, s as u64));
            let z: Vec<f64> = (0..n_t)
                .map(|m| whitened[rng.random_range(0..whitened.len())][m])
                .collect();
            FrequencyScenario {
                df: model.unwhiten(&z),
                folded: false,
            }
        })
        .collect()
}

/// Recharge controller used in simulation. The state-feedback form needs
/// `r > 0`; without reserve the disturbance form is the only one defined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RechargeController {
    StateFeedback(StateFeedbackController),
    Disturbance(RechargePolicy),
}

impl RechargeController {
    pub fn from_policy(policy: &RechargePolicy) -> Self {
        match policy.to_state_feedback() {
            Ok(k) => Self::StateFeedback(k),
            Err(_) => Self::Disturbance(policy.clone()),
        }
    }

    pub fn r(&self) -> f64 {
        match self {
            Self::StateFeedback(c) => c.r,
            Self::Disturbance(p) => p.r,
        }
    }

    pub fn n_t(&self) -> usize {
        match self {
            Self::StateFeedback(c) => c.k.len(),
            Self::Disturbance(p) => p.n_t(),
        }
    }

    fn command(&self, step: usize, increments: &[f64], df: &[f64], dt: f64) -> f64 {
        match self {
            Self::StateFeedback(c) => c.command(step, increments, dt),
            Self::Disturbance(p) => p.d[step][..step].iter().zip(df).map(|(g, x)| g * x).sum(),
        }
    }
}

/// Self-consumption run alongside frequency control.
#[derive(Debug, Clone, Copy)]
pub struct ScRun<'a> {
    pub envelope: &'a ScEnvelope,
    pub profile: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopOptions {
    /// Clamp power and energy to the physical limits after flagging a
    /// violation, so one violation does not propagate.
    pub clamp: bool,
}

impl Default for ClosedLoopOptions {
    fn default() -> Self {
        Self { clamp: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrajectory {
    /// `n_t + 1` battery energies starting with the initial one.
    pub energy: Vec<f64>,
    pub p_rc: Vec<f64>,
    pub p_reserve: Vec<f64>,
    pub p_sc: Vec<f64>,
    /// One flag per robust row, in optimizer row order.
    pub violated: Vec<bool>,
}

impl ClosedLoopTrajectory {
    pub fn total_power(&self, k: usize) -> f64 {
        self.p_rc[k] + self.p_reserve[k] + self.p_sc[k]
    }

    pub fn n_violations(&self) -> usize {
        self.violated.iter().filter(|&&v| v).count()
    }

    /// Writes `step, energy, p_rc, p_reserve, p_sc` rows; step 0 holds the
    /// initial energy and zero powers.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimulationError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "energy", "p_rc", "p_reserve", "p_sc"])?;
        for (k, e) in self.energy.iter().enumerate() {
            let (rc, res, sc) = if k == 0 {
                (0.0, 0.0, 0.0)
            } else {
                (self.p_rc[k - 1], self.p_reserve[k - 1], self.p_sc[k - 1])
            };
            w.write_record([k.to_string(), e.to_string(), rc.to_string(), res.to_string(), sc.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs one day of the controller plus reserve activation `r·df` (and the
/// self-consumption rule when given) through the lossy battery. The
/// controller sees the measured energy increments net of the
/// self-consumption part.
pub fn run_closed_loop(
    controller: &RechargeController,
    cfg: &BatteryConfig,
    grid: &TimeGrid,
    df: &[f64],
    sc: Option<ScRun<'_>>,
    opts: ClosedLoopOptions,
) -> Result<ClosedLoopTrajectory, SimulationError> {
    let n = controller.n_t();
    for len in [df.len(), grid.n_t].into_iter().chain(sc.map(|s| s.profile.len())) {
        if len != n {
            return Err(SimulationError::LengthMismatch { expected: n, actual: len });
        }
    }
    let dt = grid.dt;
    let r = controller.r();
    let mut energy = Vec::with_capacity(n + 1);
    let mut p_rc = Vec::with_capacity(n);
    let mut p_reserve = Vec::with_capacity(n);
    let mut p_sc = Vec::with_capacity(n);
    let mut increments = Vec::with_capacity(n);
    let mut violated = vec![false; 4 * n];
    let mut e = cfg.e_0;
    let mut e_sc = cfg.e_0;
    energy.push(e);
    for k in 0..n {
        let sc_k = match sc {
            Some(s) => sc_rule_command(s.profile[k], e_sc, &s.envelope.step(k), cfg, dt),
            None => 0.0,
        };
        let rc_k = controller.command(k, &increments, df, dt);
        let res_k = r * df[k];
        let mut p = sc_k + rc_k + res_k;
        if p > cfg.p_max + TOL {
            violated[k] = true;
        } else if p < cfg.p_min - TOL {
            violated[n + k] = true;
        }
        if opts.clamp {
            p = p.clamp(cfg.p_min, cfg.p_max);
        }
        let mut next = battery_step(e, p, cfg, dt);
        if next > cfg.e_max + TOL {
            violated[2 * n + k] = true;
        } else if next < cfg.e_min - TOL {
            violated[3 * n + k] = true;
        }
        if opts.clamp {
            next = next.clamp(cfg.e_min, cfg.e_max);
        }
        let next_sc = battery_step(e_sc, sc_k, cfg, dt);
        increments.push((next - e) - (next_sc - e_sc));
        e = next;
        e_sc = next_sc;
        energy.push(e);
        p_rc.push(rc_k);
        p_reserve.push(res_k);
        p_sc.push(sc_k);
    }
    Ok(ClosedLoopTrajectory {
        energy,
        p_rc,
        p_reserve,
        p_sc,
        violated,
    })
}

/// Upper confidence bound at level `1 − alpha` on a violation probability:
/// the normal approximation, or the exact Clopper-Pearson bound below five
/// observed violations.
pub fn violation_bound(count: u64, n: u64, alpha: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    if count < 5 {
        return clopper_pearson_upper(count, n, alpha);
    }
    let p = count as f64 / n as f64;
    (p + normal_quantile(1.0 - alpha) * (p * (1.0 - p) / n as f64).sqrt()).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowViolations {
    pub block: RowBlock,
    /// 1-based step.
    pub step: usize,
    pub count: u64,
}

/// Per-step quantiles of a simulated quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBand {
    pub q: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevenueStats {
    pub n: usize,
    /// Grid cost without a battery.
    pub baseline_cost: f64,
    /// Grid cost with the self-consumption rule.
    pub sc_cost: f64,
    /// `baseline_cost − sc_cost`
    pub sc_revenue: f64,
    pub fcr_revenue: f64,
    /// `sc_revenue + fcr_revenue`
    pub total_revenue: f64,
    /// `sc_cost − fcr_revenue`, comparable to the optimizer objective.
    pub net_cost: f64,
    pub total_std: f64,
    pub total_quantiles: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub n_samples: usize,
    pub alpha: f64,
    pub r: f64,
    pub state_feedback: bool,
    pub rows: Vec<RowViolations>,
    /// Samples with at least one violation anywhere.
    pub any_violation: u64,
    pub max_violation_prob_hat: f64,
    pub upper_conf_bound: f64,
    pub worst_row: Option<(RowBlock, usize)>,
    pub energy_quantiles: Vec<QuantileBand>,
    pub power_quantiles: Vec<QuantileBand>,
    pub revenue: Option<RevenueStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub alpha: f64,
    pub quantiles: Vec<f64>,
    pub clamp: bool,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            quantiles: vec![0.01, 0.5, 0.99],
            clamp: true,
        }
    }
}

/// Self-consumption inputs for [`simulate`]; sample `s` is paired with
/// profile `s mod len`.
#[derive(Debug, Clone, Copy)]
pub struct ScInputs<'a> {
    pub envelope: &'a ScEnvelope,
    pub profiles: &'a [Vec<f64>],
    pub prices: Option<&'a PriceSet>,
}

/// Runs the controller over every scenario and summarizes violations and
/// trajectory quantiles.
pub fn simulate(
    policy: &RechargePolicy,
    cfg: &BatteryConfig,
    grid: &TimeGrid,
    scenarios: &[FrequencyScenario],
    sc: Option<ScInputs<'_>>,
    sim: &SimulationConfig,
) -> Result<SimulationReport, SimulationError> {
    if !(sim.alpha > 0.0 && sim.alpha < 1.0) {
        return Err(SimulationError::InvalidAlpha(sim.alpha));
    }
    if sc.is_some_and(|s| s.profiles.is_empty()) {
        return Err(SimulationError::NoProfiles);
    }
    let controller = RechargeController::from_policy(policy);
    let opts = ClosedLoopOptions { clamp: sim.clamp };
    let runs: Vec<ClosedLoopTrajectory> = scenarios
        .par_iter()
        .enumerate()
        .map(|(s, scen)| {
            let run = sc.map(|i| ScRun {
                envelope: i.envelope,
                profile: &i.profiles[s % i.profiles.len()],
            });
            run_closed_loop(&controller, cfg, grid, &scen.df, run, opts)
        })
        .collect::<Result<_, _>>()?;

    let n = policy.n_t();
    let n_samples = runs.len();
    let mut counts = vec![0u64; 4 * n];
    let mut any_violation = 0;
    for run in &runs {
        for (c, &v) in counts.iter_mut().zip(&run.violated) {
            *c += v as u64;
        }
        any_violation += run.violated.iter().any(|&v| v) as u64;
    }
    let rows: Vec<RowViolations> = counts
        .iter()
        .enumerate()
        .map(|(i, &count)| RowViolations {
            block: RowBlock::ALL[i / n],
            step: i % n + 1,
            count,
        })
        .collect();
    // first row with the largest count
    let worst = rows.iter().rev().max_by_key(|r| r.count).map(|r| (r.block, r.step, r.count));
    let max_count = worst.map_or(0, |w| w.2);
    let max_violation_prob_hat = if n_samples == 0 { 0.0 } else { max_count as f64 / n_samples as f64 };
    let upper_conf_bound = violation_bound(max_count, n_samples as u64, sim.alpha);

    let band = |values: &dyn Fn(&ClosedLoopTrajectory, usize) -> f64, len: usize| -> Vec<QuantileBand> {
        let columns: Vec<Vec<f64>> = (0..len)
            .map(|k| {
                let mut col: Vec<f64> = runs.iter().map(|t| values(t, k)).collect();
                col.sort_by(f64::total_cmp);
                col
            })
            .collect();
        sim.quantiles
            .iter()
            .map(|&q| QuantileBand {
                q,
                values: columns.iter().map(|c| sorted_quantile(c, q)).collect(),
            })
            .collect()
    };
    let energy_quantiles = band(&|t, k| t.energy[k], n + 1);
    let power_quantiles = band(&|t, k| t.total_power(k), n);

    let revenue = match sc {
        Some(ScInputs {
            envelope,
            profiles,
            prices: Some(prices),
        }) => Some(evaluate_revenue(policy.r, envelope, profiles, prices, cfg, grid, &sim.quantiles)?),
        _ => None,
    };

    Ok(SimulationReport {
        n_samples,
        alpha: sim.alpha,
        r: policy.r,
        state_feedback: matches!(controller, RechargeController::StateFeedback(_)),
        rows,
        any_violation,
        max_violation_prob_hat,
        upper_conf_bound,
        worst_row: worst.filter(|w| w.2 > 0).map(|w| (w.0, w.1)),
        energy_quantiles,
        power_quantiles,
        revenue,
    })
}

/// Prices the self-consumption rule on each profile against the no-battery
/// baseline and adds the reserve payment.
pub fn evaluate_revenue(
    r: f64,
    envelope: &ScEnvelope,
    profiles: &[Vec<f64>],
    prices: &PriceSet,
    cfg: &BatteryConfig,
    grid: &TimeGrid,
    quantiles: &[f64],
) -> Result<RevenueStats, SimulationError> {
    if profiles.is_empty() {
        return Err(SimulationError::NoProfiles);
    }
    let fcr_revenue = prices.reserve_revenue(r, grid);
    let mut per: Vec<(f64, f64)> = Vec::with_capacity(profiles.len());
    for profile in profiles {
        if profile.len() != grid.n_t {
            return Err(SimulationError::LengthMismatch {
                expected: grid.n_t,
                actual: profile.len(),
            });
        }
        let (p_sc, _) = run_sc_rule(profile, envelope, cfg, grid, cfg.e_0);
        let baseline: f64 = profile.iter().map(|&p| prices.exchange_cost(p, grid.dt)).sum();
        let with_sc: f64 = profile
            .iter()
            .zip(&p_sc.0)
            .map(|(&p, &b)| prices.exchange_cost(p + b, grid.dt))
            .sum();
        per.push((baseline, with_sc));
    }
    let n = per.len() as f64;
    let baseline_cost = per.iter().map(|x| x.0).sum::<f64>() / n;
    let sc_cost = per.iter().map(|x| x.1).sum::<f64>() / n;
    let mut totals: Vec<f64> = per.iter().map(|(b, c)| b - c + fcr_revenue).collect();
    let (_, total_std) = mean_std(&totals);
    totals.sort_by(f64::total_cmp);
    let sc_revenue = baseline_cost - sc_cost;
    Ok(RevenueStats {
        n: per.len(),
        baseline_cost,
        sc_cost,
        sc_revenue,
        fcr_revenue,
        total_revenue: sc_revenue + fcr_revenue,
        net_cost: sc_cost - fcr_revenue,
        total_std,
        total_quantiles: quantiles.iter().map(|&q| (q, sorted_quantile(&totals, q))).collect(),
    })
}

/// [`evaluate_revenue`] for an optimizer solution.
pub fn evaluate_solution_revenue(
    solution: &CoOptSolution,
    profiles: &[Vec<f64>],
    prices: &PriceSet,
    cfg: &BatteryConfig,
    grid: &TimeGrid,
) -> Result<RevenueStats, SimulationError> {
    evaluate_revenue(solution.r(), &solution.envelope, profiles, prices, cfg, grid, &[0.05, 0.5, 0.95])
}
