//! Robust second-order cone programs for reserve sizing, alone or combined
//! with a sample-average self-consumption schedule.
//!
//! The recharge policy is optimized in whitened coordinates. With the
//! whitening factor `W = L⁻¹` lower triangular, `C = D·L` is again strictly
//! lower triangular and free, so every robust row `a_i` maps to a sparse
//! whitened direction `c_i = Lᵀ a_i` without coupling constraints.
//! `D = C·W` is recovered after solving.

mod robust;

pub use robust::{cumulative_matrix, verify_constraints, ConstraintReport, RobustConstraintSystem, RowBlock, RowCheck};

use crate::conic::{ConicProgram, ConicSolver, LinExpr, SolveStatus, SolverError};
use crate::model::{BatteryConfig, EnergySeries, ModelError, PowerSeries, PriceSet, TimeGrid};
use crate::policy::{RechargePolicy, ScEnvelope};
use crate::scenarios::{second_stage_cost, GapProblem, ProfileScenarioSet, ScenarioError, SecondStageError};
use crate::uncertainty::UncertaintyModel;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("uncertainty model has {model} steps, grid {grid}")]
    DimensionMismatch { model: usize, grid: usize },
    #[error("scenario {index} has {actual} steps, expected {expected}")]
    ScenarioLengthMismatch { index: usize, expected: usize, actual: usize },
    #[error("no scenarios given")]
    EmptyScenarios,
    #[error("solver finished with status {0:?}")]
    Status(SolveStatus),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    SecondStage(#[from] SecondStageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemKind {
    Fcr,
    Combined,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct EnvelopeVars {
    e_min: usize,
    e_max: usize,
    p_min: usize,
    p_max: usize,
}

/// Per scenario, five consecutive blocks of `n_t` variables.
#[derive(Debug, Clone, Copy, PartialEq)]
struct DispatchVars {
    p_sc_c: usize,
    p_sc_d: usize,
    p_cons: usize,
    p_inj: usize,
    e_sc: usize,
}

/// An assembled program plus the variable layout needed to read a solution.
#[derive(Debug, Clone)]
pub struct CoOptProblem {
    pub kind: ProblemKind,
    pub program: ConicProgram,
    grid: TimeGrid,
    cfg: BatteryConfig,
    prices: Option<PriceSet>,
    weights: Vec<f64>,
    w: Vec<Vec<f64>>,
    r: usize,
    /// Whitened recharge coefficients `C[k][m]`.
    c: Vec<Vec<Option<usize>>>,
    envelope: Option<EnvelopeVars>,
    dispatch: Vec<DispatchVars>,
}

fn is_lower_triangular(m: &[Vec<f64>]) -> bool {
    m.iter().enumerate().all(|(i, row)| row[i + 1..].iter().all(|&v| v == 0.0))
}

/// Robust rows, their right-hand sides given as affine expressions.
struct RowRhs {
    upper_power: Vec<LinExpr>,
    lower_power: Vec<LinExpr>,
    upper_energy: Vec<LinExpr>,
    lower_energy: Vec<LinExpr>,
}

/// Adds `r`, the whitened policy and all `4·n_t` robust cone constraints.
/// Returns `(r, C)`.
fn add_robust_rows(
    prog: &mut ConicProgram,
    model: &UncertaintyModel,
    grid: &TimeGrid,
    rhs: impl FnOnce(usize) -> RowRhs,
) -> (usize, Vec<Vec<Option<usize>>>) {
    let n = grid.n_t;
    let dt = grid.dt;
    let l = &model.w_inv;
    let w = &model.w;
    let lower = is_lower_triangular(w);
    let omega = model.omega();
    let r = prog.add_var();
    prog.add_bounds(r, 0.0, f64::INFINITY);

    // C = D·L. For lower triangular L it inherits D's strict lower pattern.
    let c: Vec<Vec<Option<usize>>> = (0..n)
        .map(|k| {
            (0..n)
                .map(|m| (!lower || m < k).then(|| prog.add_var()))
                .collect()
        })
        .collect();
    if !lower {
        // keep D = C·W strictly lower triangular
        for k in 0..n {
            for col in k..n {
                let mut e = LinExpr::default();
                for m in 0..n {
                    e.add_term(c[k][m].unwrap(), w[m][col]);
                }
                prog.add_eq(e);
            }
        }
    }
    // whitened energy rows: E_k = E_{k−1} + dt·(C_k + r·L_k)
    let mut ce: Vec<Vec<Option<usize>>> = Vec::with_capacity(n);
    for k in 0..n {
        let row: Vec<Option<usize>> = (0..n)
            .map(|m| {
                let used = c[k][m].is_some() || l[k][m] != 0.0 || (k > 0 && ce[k - 1][m].is_some());
                used.then(|| {
                    let v = prog.add_var();
                    let mut e = LinExpr::var(v);
                    if k > 0 {
                        if let Some(prev) = ce[k - 1][m] {
                            e.add_term(prev, -1.0);
                        }
                    }
                    if let Some(cv) = c[k][m] {
                        e.add_term(cv, -dt);
                    }
                    e.add_term(r, -dt * l[k][m]);
                    prog.add_eq(e);
                    v
                })
            })
            .collect();
        ce.push(row);
    }

    let mu: Vec<f64> = w
        .iter()
        .map(|row| row.iter().zip(&model.mean).map(|(a, b)| a * b).sum())
        .collect();
    let b = rhs(r);
    let mut add_row = |coefs: &[Option<usize>], sign: f64, b: &LinExpr| {
        let mut t = b.clone();
        let mut us = Vec::new();
        for (m, v) in coefs.iter().enumerate() {
            let Some(v) = *v else { continue };
            t.add_term(v, -sign * mu[m]);
            let u = prog.add_var();
            let mut fwd = LinExpr::default();
            fwd.add_term(v, sign * model.sigma_f[m]).add_term(u, -1.0);
            prog.add_le(fwd);
            let mut bwd = LinExpr::default();
            bwd.add_term(v, -sign * model.sigma_b[m]).add_term(u, -1.0);
            prog.add_le(bwd);
            us.push(LinExpr::var(u));
        }
        prog.add_soc(t.scaled(1.0 / omega), us);
    };
    for k in 0..n {
        add_row(&c[k], 1.0, &b.upper_power[k]);
    }
    for k in 0..n {
        add_row(&c[k], -1.0, &b.lower_power[k]);
    }
    for k in 0..n {
        add_row(&ce[k], 1.0, &b.upper_energy[k]);
    }
    for k in 0..n {
        add_row(&ce[k], -1.0, &b.lower_energy[k]);
    }
    (r, c)
}

fn check_model(model: &UncertaintyModel, grid: &TimeGrid, cfg: &BatteryConfig) -> Result<(), OptimizeError> {
    grid.validate()?;
    cfg.validate()?;
    if model.n_t() != grid.n_t {
        return Err(OptimizeError::DimensionMismatch {
            model: model.n_t(),
            grid: grid.n_t,
        });
    }
    Ok(())
}

/// Reserve maximization (or feasibility at a fixed reserve) without
/// self-consumption: the battery idles at `e_0` apart from reserve delivery.
pub fn build_fcr_problem(
    model: &UncertaintyModel,
    cfg: &BatteryConfig,
    grid: &TimeGrid,
    fix_r: Option<f64>,
) -> Result<CoOptProblem, OptimizeError> {
    check_model(model, grid, cfg)?;
    let n = grid.n_t;
    let mut prog = ConicProgram::new();
    let (r, c) = add_robust_rows(&mut prog, model, grid, |r| RowRhs {
        upper_power: vec![LinExpr::constant(cfg.p_max).with_term(r, -1.0); n],
        lower_power: vec![LinExpr::constant(-cfg.p_min).with_term(r, -1.0); n],
        upper_energy: vec![LinExpr::constant(cfg.e_max - cfg.e_0); n],
        lower_energy: vec![LinExpr::constant(cfg.e_0 - cfg.e_min); n],
    });
    match fix_r {
        Some(v) => {
            let mut e = LinExpr::var(r);
            e.constant = -v;
            prog.add_eq(e);
        }
        None => prog.set_objective(LinExpr::default().with_term(r, -1.0)),
    }
    Ok(CoOptProblem {
        kind: ProblemKind::Fcr,
        program: prog,
        grid: *grid,
        cfg: *cfg,
        prices: None,
        weights: Vec::new(),
        w: model.w.clone(),
        r,
        c,
        envelope: None,
        dispatch: Vec::new(),
    })
}

/// Reserve, recharge policy and self-consumption envelopes together, with
/// the expected exchange cost over weighted profile scenarios.
pub fn build_combined_problem(
    model: &UncertaintyModel,
    cfg: &BatteryConfig,
    grid: &TimeGrid,
    prices: &PriceSet,
    scenarios: &ProfileScenarioSet,
    fix_r: Option<f64>,
) -> Result<CoOptProblem, OptimizeError> {
    check_model(model, grid, cfg)?;
    prices.validate()?;
    if scenarios.is_empty() {
        return Err(OptimizeError::EmptyScenarios);
    }
    let n = grid.n_t;
    if let Some((index, p)) = scenarios.profiles.iter().enumerate().find(|(_, p)| p.len() != n) {
        return Err(OptimizeError::ScenarioLengthMismatch {
            index,
            expected: n,
            actual: p.len(),
        });
    }
    let dt = grid.dt;
    let mut prog = ConicProgram::new();
    let env = EnvelopeVars {
        e_min: prog.add_vars(n),
        e_max: prog.add_vars(n),
        p_min: prog.add_vars(n),
        p_max: prog.add_vars(n),
    };
    for k in 0..n {
        prog.add_bounds(env.e_min + k, cfg.e_min, cfg.e_max);
        prog.add_bounds(env.e_max + k, cfg.e_min, cfg.e_max);
        prog.add_le(LinExpr::var(env.e_min + k).with_term(env.e_max + k, -1.0));
        prog.add_bounds(env.p_min + k, cfg.p_min, 0.0);
        prog.add_bounds(env.p_max + k, 0.0, cfg.p_max);
    }
    let (r, c) = add_robust_rows(&mut prog, model, grid, |r| RowRhs {
        upper_power: (0..n)
            .map(|k| LinExpr::constant(cfg.p_max).with_term(env.p_max + k, -1.0).with_term(r, -1.0))
            .collect(),
        lower_power: (0..n)
            .map(|k| LinExpr::constant(-cfg.p_min).with_term(env.p_min + k, 1.0).with_term(r, -1.0))
            .collect(),
        upper_energy: (0..n)
            .map(|k| LinExpr::constant(cfg.e_max).with_term(env.e_max + k, -1.0))
            .collect(),
        lower_energy: (0..n)
            .map(|k| LinExpr::constant(-cfg.e_min).with_term(env.e_min + k, 1.0))
            .collect(),
    });
    if let Some(v) = fix_r {
        let mut e = LinExpr::var(r);
        e.constant = -v;
        prog.add_eq(e);
    }

    let mut obj = LinExpr::default();
    obj.add_term(r, -prices.c_r / 1000.0 * grid.horizon_hours());
    let mut dispatch = Vec::with_capacity(scenarios.len());
    for (profile, &weight) in scenarios.profiles.iter().zip(&scenarios.weights) {
        let d = DispatchVars {
            p_sc_c: prog.add_vars(n),
            p_sc_d: prog.add_vars(n),
            p_cons: prog.add_vars(n),
            p_inj: prog.add_vars(n),
            e_sc: prog.add_vars(n),
        };
        for k in 0..n {
            let (pc, pd, cons, inj, e) = (d.p_sc_c + k, d.p_sc_d + k, d.p_cons + k, d.p_inj + k, d.e_sc + k);
            prog.add_bounds(pc, 0.0, f64::INFINITY);
            prog.add_le(LinExpr::var(pc).with_term(env.p_max + k, -1.0));
            prog.add_bounds(pd, f64::NEG_INFINITY, 0.0);
            prog.add_le(LinExpr::var(env.p_min + k).with_term(pd, -1.0));
            prog.add_bounds(cons, 0.0, f64::INFINITY);
            prog.add_bounds(inj, f64::NEG_INFINITY, 0.0);
            prog.add_le(LinExpr::var(env.e_min + k).with_term(e, -1.0));
            prog.add_le(LinExpr::var(e).with_term(env.e_max + k, -1.0));
            let mut bal = LinExpr::constant(-profile[k]);
            bal.add_term(cons, 1.0).add_term(inj, 1.0).add_term(pc, -1.0).add_term(pd, -1.0);
            prog.add_eq(bal);
            let mut dynamics = LinExpr::var(e);
            dynamics.add_term(pc, -cfg.eta_c * dt).add_term(pd, -dt / cfg.eta_d);
            if k == 0 {
                dynamics.constant = -cfg.e_0;
            } else {
                dynamics.add_term(e - 1, -1.0);
            }
            prog.add_eq(dynamics);
            if weight != 0.0 {
                obj.add_term(cons, weight * prices.c_cons * dt).add_term(inj, weight * prices.c_inj * dt);
            }
        }
        dispatch.push(d);
    }
    prog.set_objective(obj);
    Ok(CoOptProblem {
        kind: ProblemKind::Combined,
        program: prog,
        grid: *grid,
        cfg: *cfg,
        prices: Some(*prices),
        weights: scenarios.weights.clone(),
        w: model.w.clone(),
        r,
        c,
        envelope: Some(env),
        dispatch,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDispatch {
    pub p_cons: Vec<f64>,
    pub p_inj: Vec<f64>,
    pub p_sc_c: Vec<f64>,
    pub p_sc_d: Vec<f64>,
    pub e_sc: Vec<f64>,
}

/// Objective parts in EUR over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveBreakdown {
    /// Weighted expected grid exchange cost.
    pub sc_cost: f64,
    pub fcr_revenue: f64,
    /// `sc_cost − fcr_revenue`
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    /// Largest absolute constraint violation of the returned point.
    pub max_violation: f64,
    pub iterations: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoOptSolution {
    pub kind: ProblemKind,
    pub status: SolveStatus,
    pub policy: RechargePolicy,
    pub envelope: ScEnvelope,
    pub dispatch: Vec<ScenarioDispatch>,
    /// Program objective: `−r` for reserve-only problems, EUR otherwise.
    pub objective: f64,
    pub breakdown: Option<ObjectiveBreakdown>,
    pub residuals: Residuals,
    pub solver_log: String,
}

impl CoOptSolution {
    pub fn r(&self) -> f64 {
        self.policy.r
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Solves and maps the solver point back to policy, envelope and dispatch.
/// Non-optimal outcomes come back with their status and a zero policy.
pub fn solve(problem: &CoOptProblem, solver: &dyn ConicSolver) -> Result<CoOptSolution, OptimizeError> {
    let sol = solver.solve(&problem.program)?;
    let n = problem.grid.n_t;
    let residuals = Residuals {
        primal: sol.primal_residual,
        dual: sol.dual_residual,
        max_violation: problem.program.max_violation(&sol.x),
        iterations: sol.iterations,
    };
    let collapsed = ScEnvelope::collapsed(problem.cfg.e_0, &problem.grid);
    if sol.status != SolveStatus::Optimal {
        return Ok(CoOptSolution {
            kind: problem.kind,
            status: sol.status,
            policy: RechargePolicy::zero(n),
            envelope: collapsed,
            dispatch: Vec::new(),
            objective: 0.0,
            breakdown: None,
            residuals,
            solver_log: sol.log,
        });
    }
    let x = &sol.x;
    let r = x[problem.r].max(0.0);
    let cval = |k: usize, m: usize| problem.c[k][m].map_or(0.0, |v| x[v]);
    let d: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            (0..n)
                .map(|col| if col < k { (0..n).map(|m| cval(k, m) * problem.w[m][col]).sum() } else { 0.0 })
                .collect()
        })
        .collect();
    let read = |start: usize| -> Vec<f64> { x[start..start + n].to_vec() };
    let envelope = match problem.envelope {
        Some(ev) => ScEnvelope {
            e_min_sc: EnergySeries(read(ev.e_min)),
            e_max_sc: EnergySeries(read(ev.e_max)),
            p_min_sc: PowerSeries(read(ev.p_min)),
            p_max_sc: PowerSeries(read(ev.p_max)),
        },
        None => collapsed,
    };
    let dispatch: Vec<ScenarioDispatch> = problem
        .dispatch
        .iter()
        .map(|d| ScenarioDispatch {
            p_cons: read(d.p_cons),
            p_inj: read(d.p_inj),
            p_sc_c: read(d.p_sc_c),
            p_sc_d: read(d.p_sc_d),
            e_sc: read(d.e_sc),
        })
        .collect();
    let breakdown = problem.prices.map(|p| {
        let sc_cost: f64 = dispatch
            .iter()
            .zip(&problem.weights)
            .map(|(d, w)| {
                w * d
                    .p_cons
                    .iter()
                    .zip(&d.p_inj)
                    .map(|(c, i)| (p.c_cons * c + p.c_inj * i) * problem.grid.dt)
                    .sum::<f64>()
            })
            .sum();
        let fcr_revenue = p.reserve_revenue(r, &problem.grid);
        ObjectiveBreakdown {
            sc_cost,
            fcr_revenue,
            total: sc_cost - fcr_revenue,
        }
    });
    Ok(CoOptSolution {
        kind: problem.kind,
        status: sol.status,
        policy: RechargePolicy { d, r },
        envelope,
        dispatch,
        objective: sol.objective,
        breakdown,
        residuals,
        solver_log: sol.log,
    })
}

/// First-stage decision of the combined problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    pub r: f64,
    pub envelope: ScEnvelope,
}

/// The combined problem seen as a two-stage program for gap estimation.
/// Second stages are priced with the exact piecewise-linear recursion.
pub struct CombinedGapProblem<'a> {
    pub model: &'a UncertaintyModel,
    pub cfg: BatteryConfig,
    pub grid: TimeGrid,
    pub prices: PriceSet,
    pub solver: &'a dyn ConicSolver,
}

impl GapProblem for CombinedGapProblem<'_> {
    type FirstStage = FirstStage;
    type Error = OptimizeError;

    fn solve_saa(&self, scenarios: &ProfileScenarioSet) -> Result<(f64, FirstStage), OptimizeError> {
        let problem = build_combined_problem(self.model, &self.cfg, &self.grid, &self.prices, scenarios, None)?;
        let sol = solve(&problem, self.solver)?;
        if !sol.is_optimal() {
            return Err(OptimizeError::Status(sol.status));
        }
        Ok((
            sol.objective,
            FirstStage {
                r: sol.r(),
                envelope: sol.envelope,
            },
        ))
    }

    fn evaluate(&self, x: &FirstStage, profile: &[f64]) -> Result<f64, OptimizeError> {
        let cost = second_stage_cost(profile, &x.envelope, &self.cfg, &self.grid, &self.prices)?;
        Ok(cost - self.prices.reserve_revenue(x.r, &self.grid))
    }
}

#[cfg(test)]
mod tests;
