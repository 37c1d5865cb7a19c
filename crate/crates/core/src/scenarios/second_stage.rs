//! Optimal self-consumption cost of one profile once the first-stage
//! envelope is fixed.
//!
//! The recursion works on convex piecewise-linear value functions: the
//! cost-to-arrive at each energy level is the infimal convolution of the
//! previous one with the stage cost as a function of the energy change, then
//! restricted to the envelope.

use crate::conic::{ConicProgram, ConicSolver, LinExpr, SolveStatus, SolverError};
use crate::model::{BatteryConfig, PriceSet, TimeGrid};
use crate::policy::ScEnvelope;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SecondStageError {
    #[error("profile has {actual} steps, envelope {expected}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("envelope cannot be followed from the initial energy (step {0})")]
    Infeasible(usize),
    #[error("solver ended with status {0:?}")]
    Status(SolveStatus),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

const FEAS_TOL: f64 = 1e-9;

/// Convex piecewise-linear function on `[x0, x0 + Σ len]`.
#[derive(Debug, Clone, PartialEq)]
struct Pwl {
    x0: f64,
    f0: f64,
    /// `(length, slope)` with nondecreasing slopes.
    segs: Vec<(f64, f64)>,
}

impl Pwl {
    fn point(x: f64) -> Self {
        Self {
            x0: x,
            f0: 0.0,
            segs: Vec::new(),
        }
    }

    fn from_points(pts: &[(f64, f64)]) -> Self {
        let segs = pts
            .windows(2)
            .filter(|w| w[1].0 > w[0].0)
            .map(|w| (w[1].0 - w[0].0, (w[1].1 - w[0].1) / (w[1].0 - w[0].0)))
            .collect();
        Self {
            x0: pts[0].0,
            f0: pts[0].1,
            segs,
        }
    }

    fn end(&self) -> f64 {
        self.x0 + self.segs.iter().map(|s| s.0).sum::<f64>()
    }

    fn inf_conv(&self, other: &Pwl) -> Pwl {
        let mut segs: Vec<(f64, f64)> = self.segs.iter().chain(&other.segs).copied().collect();
        segs.sort_by(|a, b| a.1.total_cmp(&b.1));
        Pwl {
            x0: self.x0 + other.x0,
            f0: self.f0 + other.f0,
            segs,
        }
    }

    /// Restriction to `[lo, hi]`; `None` if the intersection is empty.
    fn clip(&self, lo: f64, hi: f64) -> Option<Pwl> {
        let end = self.end();
        if lo > end + FEAS_TOL || hi < self.x0 - FEAS_TOL {
            return None;
        }
        let start = lo.clamp(self.x0, end);
        let stop = hi.clamp(start, end);
        let mut x = self.x0;
        let mut f = self.f0;
        let mut out = Pwl {
            x0: start,
            f0: 0.0,
            segs: Vec::new(),
        };
        let mut started = start <= x;
        if started {
            out.f0 = f;
        }
        for &(len, slope) in &self.segs {
            let (a, b) = (x, x + len);
            if !started && start < b {
                out.f0 = f + slope * (start - a);
                started = true;
            }
            if started {
                let s = a.max(start);
                let e = b.min(stop);
                if e > s {
                    out.segs.push((e - s, slope));
                }
            }
            x = b;
            f += slope * len;
            if x >= stop {
                break;
            }
        }
        if !started {
            out.f0 = f;
        }
        Some(out)
    }

    fn min(&self) -> f64 {
        let mut f = self.f0;
        let mut best = f;
        for &(len, slope) in &self.segs {
            f += slope * len;
            best = best.min(f);
        }
        best
    }
}

fn check_len(profile: &[f64], env: &ScEnvelope) -> Result<(), SecondStageError> {
    if profile.len() != env.n_t() {
        return Err(SecondStageError::LengthMismatch {
            expected: env.n_t(),
            actual: profile.len(),
        });
    }
    Ok(())
}

/// Minimal grid-exchange cost (EUR) of `profile` when the self-consumption
/// battery starts at `cfg.e_0` and stays inside `env`.
pub fn second_stage_cost(
    profile: &[f64],
    env: &ScEnvelope,
    cfg: &BatteryConfig,
    grid: &TimeGrid,
    prices: &PriceSet,
) -> Result<f64, SecondStageError> {
    check_len(profile, env)?;
    let dt = grid.dt;
    let power = |x: f64| if x >= 0.0 { x / (cfg.eta_c * dt) } else { x * cfg.eta_d / dt };
    let mut value = Pwl::point(cfg.e_0);
    for (k, &p_prof) in profile.iter().enumerate() {
        let s = env.step(k);
        let lo = s.p_min * dt / cfg.eta_d;
        let hi = s.p_max * cfg.eta_c * dt;
        // energy change that exactly balances the profile
        let balance = if p_prof <= 0.0 { -p_prof * cfg.eta_c * dt } else { -p_prof * dt / cfg.eta_d };
        let mut xs = vec![lo, hi];
        for x in [0.0, balance] {
            if x > lo && x < hi {
                xs.push(x);
            }
        }
        xs.sort_by(f64::total_cmp);
        let pts: Vec<(f64, f64)> = xs.iter().map(|&x| (x, prices.exchange_cost(p_prof + power(x), dt))).collect();
        let stage = Pwl::from_points(&pts);
        value = value
            .inf_conv(&stage)
            .clip(s.e_min, s.e_max)
            .ok_or(SecondStageError::Infeasible(k + 1))?;
    }
    Ok(value.min())
}

/// The same quantity as [`second_stage_cost`] from an explicit LP.
pub fn second_stage_lp(
    profile: &[f64],
    env: &ScEnvelope,
    cfg: &BatteryConfig,
    grid: &TimeGrid,
    prices: &PriceSet,
    solver: &dyn ConicSolver,
) -> Result<f64, SecondStageError> {
    check_len(profile, env)?;
    let dt = grid.dt;
    let mut prog = ConicProgram::new();
    let mut obj = LinExpr::default();
    let mut prev_e = None;
    for (k, &p_prof) in profile.iter().enumerate() {
        let s = env.step(k);
        let pc = prog.add_var();
        let pd = prog.add_var();
        let cons = prog.add_var();
        let inj = prog.add_var();
        let e = prog.add_var();
        prog.add_bounds(pc, 0.0, s.p_max);
        prog.add_bounds(pd, s.p_min, 0.0);
        prog.add_bounds(cons, 0.0, f64::INFINITY);
        prog.add_bounds(inj, f64::NEG_INFINITY, 0.0);
        prog.add_bounds(e, s.e_min, s.e_max);
        let mut bal = LinExpr::constant(-p_prof);
        bal.add_term(cons, 1.0).add_term(inj, 1.0).add_term(pc, -1.0).add_term(pd, -1.0);
        prog.add_eq(bal);
        let mut dyn_ = LinExpr::var(e);
        dyn_.add_term(pc, -cfg.eta_c * dt).add_term(pd, -dt / cfg.eta_d);
        match prev_e {
            Some(v) => {
                dyn_.add_term(v, -1.0);
            }
            None => dyn_.constant = -cfg.e_0,
        }
        prog.add_eq(dyn_);
        prev_e = Some(e);
        obj.add_term(cons, prices.c_cons * dt).add_term(inj, prices.c_inj * dt);
    }
    prog.set_objective(obj);
    let sol = solver.solve(&prog)?;
    match sol.status {
        SolveStatus::Optimal => Ok(sol.objective),
        other => Err(SecondStageError::Status(other)),
    }
}
