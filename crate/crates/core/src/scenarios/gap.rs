use super::{ProfileScenarioSet, ScenarioError, ScenarioSource};
use crate::stats::{mean_std, normal_quantile, t_quantile};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A two-stage problem whose sample-average approximation can be solved and
/// whose candidate first stage can be priced on single profiles.
pub trait GapProblem: Sync {
    type FirstStage: Sync;
    type Error: Send + From<ScenarioError>;

    /// Optimal SAA objective and first stage for a scenario set.
    fn solve_saa(&self, scenarios: &ProfileScenarioSet) -> Result<(f64, Self::FirstStage), Self::Error>;

    /// Objective of a fixed first stage on one profile.
    fn evaluate(&self, first_stage: &Self::FirstStage, profile: &[f64]) -> Result<f64, Self::Error>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapEstimate {
    pub upper_mean: f64,
    pub lower_mean: f64,
    pub gap: f64,
    pub alpha: f64,
    pub n_u: usize,
    pub n_l: usize,
    pub n_sc: usize,
    pub sigma_u: f64,
    pub sigma_l: f64,
}

impl GapEstimate {
    /// Combines the two samples with normal and Student-t quantiles at
    /// one-sided level `alpha`.
    pub fn from_samples(upper: &[f64], lower: &[f64], alpha: f64, n_sc: usize) -> Self {
        let (upper_mean, sigma_u) = mean_std(upper);
        let (lower_mean, sigma_l) = mean_std(lower);
        let n_u = upper.len();
        let n_l = lower.len();
        let z = normal_quantile(1.0 - alpha);
        let t = t_quantile(1.0 - alpha, (n_l - 1) as f64);
        let gap = upper_mean - lower_mean + z * sigma_u / (n_u as f64).sqrt() + t * sigma_l / (n_l as f64).sqrt();
        Self {
            upper_mean,
            lower_mean,
            gap,
            alpha,
            n_u,
            n_l,
            n_sc,
            sigma_u,
            sigma_l,
        }
    }

    /// Gap relative to the magnitude of the upper estimate.
    pub fn relative(&self) -> f64 {
        self.gap / self.upper_mean.abs()
    }
}

/// Statistical optimality gap of `candidate`.
///
/// The upper estimate prices the candidate on `n_u` fresh profiles (sample
/// stream 0); the lower estimate solves `n_l` independent SAA problems of
/// `n_sc` scenarios each (streams `1..=n_l`).
#[allow(clippy::too_many_arguments)]
pub fn estimate_gap<P: GapProblem>(
    problem: &P,
    candidate: &P::FirstStage,
    source: &dyn ScenarioSource,
    n_u: usize,
    n_l: usize,
    n_sc: usize,
    alpha: f64,
    seed: u64,
) -> Result<GapEstimate, P::Error> {
    if n_l < 2 || n_u < 2 || n_sc < 1 {
        return Err(ScenarioError::TooFewSamples { n_u, n_l, n_sc }.into());
    }
    let fresh = source.sample(n_u, seed, 0)?;
    let upper: Vec<f64> = fresh
        .profiles
        .par_iter()
        .map(|p| problem.evaluate(candidate, p))
        .collect::<Result<_, _>>()?;
    let lower: Vec<f64> = (1..=n_l as u64)
        .into_par_iter()
        .map(|s| {
            let set = source.sample(n_sc, seed, s)?;
            problem.solve_saa(&set).map(|(v, _)| v)
        })
        .collect::<Result<_, _>>()?;
    Ok(GapEstimate::from_samples(&upper, &lower, alpha, n_sc))
}
