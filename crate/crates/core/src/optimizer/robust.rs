use crate::model::{BatteryConfig, TimeGrid};
use crate::policy::{RechargePolicy, ScEnvelope};
use crate::uncertainty::UncertaintyModel;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowBlock {
    UpperPower,
    LowerPower,
    UpperEnergy,
    LowerEnergy,
}

impl RowBlock {
    pub const ALL: [RowBlock; 4] = [RowBlock::UpperPower, RowBlock::LowerPower, RowBlock::UpperEnergy, RowBlock::LowerEnergy];
}

/// Robust rows `a_iᵀ Δf ≤ b_i` evaluated at a fixed policy and envelope.
///
/// Rows come in four blocks of `n_t`: upper power, lower power, upper
/// energy, lower energy. The reserve activation `r·Δf_k` is absorbed in the
/// power right-hand sides; energy rows integrate `(D + rI)Δf` through `G`.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustConstraintSystem {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Lower triangular cumulative-sum matrix with entries `dt`.
pub fn cumulative_matrix(n_t: usize, dt: f64) -> Vec<Vec<f64>> {
    (0..n_t)
        .map(|k| (0..n_t).map(|j| if j <= k { dt } else { 0.0 }).collect())
        .collect()
}

impl RobustConstraintSystem {
    pub fn assemble(policy: &RechargePolicy, env: &ScEnvelope, cfg: &BatteryConfig, grid: &TimeGrid) -> Self {
        let n = policy.n_t();
        let r = policy.r;
        let g = cumulative_matrix(n, grid.dt);
        // (D + rI)
        let mut dr = policy.d.clone();
        for (k, row) in dr.iter_mut().enumerate() {
            row[k] += r;
        }
        let energy: Vec<Vec<f64>> = (0..n)
            .map(|k| (0..n).map(|m| (0..n).map(|j| g[k][j] * dr[j][m]).sum()).collect())
            .collect();
        let neg = |v: &Vec<f64>| v.iter().map(|x| -x).collect::<Vec<f64>>();
        let mut a = Vec::with_capacity(4 * n);
        let mut b = Vec::with_capacity(4 * n);
        for k in 0..n {
            a.push(policy.d[k].clone());
            b.push(cfg.p_max - env.p_max_sc.0[k] - r);
        }
        for k in 0..n {
            a.push(neg(&policy.d[k]));
            b.push(env.p_min_sc.0[k] - cfg.p_min - r);
        }
        for k in 0..n {
            a.push(energy[k].clone());
            b.push(cfg.e_max - env.e_max_sc.0[k]);
        }
        for k in 0..n {
            a.push(neg(&energy[k]));
            b.push(env.e_min_sc.0[k] - cfg.e_min);
        }
        Self { a, b }
    }

    pub fn n_rows(&self) -> usize {
        self.b.len()
    }

    pub fn block(&self, i: usize) -> (RowBlock, usize) {
        let n = self.n_rows() / 4;
        (RowBlock::ALL[i / n], i % n + 1)
    }

    /// `a_iᵀ df` for every row.
    pub fn evaluate(&self, df: &[f64]) -> Vec<f64> {
        self.a.iter().map(|row| row.iter().zip(df).map(|(x, y)| x * y).sum()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowCheck {
    pub block: RowBlock,
    /// 1-based step within the block.
    pub step: usize,
    pub b: f64,
    pub worst_case: f64,
    /// `b − worst_case`
    pub margin: f64,
    /// Largest `a_iᵀ df` over the validation scenarios (`None` without any).
    pub empirical_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub rows: Vec<RowCheck>,
    pub min_margin: f64,
    /// Validation maxima never exceed the worst-case values.
    pub dominated: bool,
}

/// Evaluates every robust row at the solution's worst case and over
/// held-out scenarios.
pub fn verify_constraints(
    policy: &RechargePolicy,
    env: &ScEnvelope,
    model: &UncertaintyModel,
    cfg: &BatteryConfig,
    grid: &TimeGrid,
    validation: &[Vec<f64>],
) -> ConstraintReport {
    let sys = RobustConstraintSystem::assemble(policy, env, cfg, grid);
    let values: Vec<Vec<f64>> = validation.iter().map(|df| sys.evaluate(df)).collect();
    let rows: Vec<RowCheck> = (0..sys.n_rows())
        .map(|i| {
            let (block, step) = sys.block(i);
            let worst_case = model.worst_case(&sys.a[i]).expect("model and policy share n_t");
            let empirical_max = values.iter().map(|v| v[i]).reduce(f64::max);
            RowCheck {
                block,
                step,
                b: sys.b[i],
                worst_case,
                margin: sys.b[i] - worst_case,
                empirical_max,
            }
        })
        .collect();
    let min_margin = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let dominated = rows
        .iter()
        .all(|r| r.empirical_max.is_none_or(|m| m <= r.worst_case + 1e-9));
    ConstraintReport {
        rows,
        min_margin,
        dominated,
    }
}
