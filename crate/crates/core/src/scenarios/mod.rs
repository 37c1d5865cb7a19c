//! Consumption/production profile scenarios: storage, reduction, synthetic
//! generation, second-stage evaluation and optimality-gap estimation.

mod gap;
mod second_stage;
mod synth;

pub use gap::{estimate_gap, GapEstimate, GapProblem};
pub use second_stage::{second_stage_cost, second_stage_lp, SecondStageError};
pub use synth::{synth_profiles, ProfileKind, ProfileParams, ScenarioSource, SyntheticSource};

use crate::freq::{read_scenario_matrix, IngestError};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario {index} has length {actual}, expected {expected}")]
    ScenarioLengthMismatch { index: usize, expected: usize, actual: usize },
    #[error("weights must be nonnegative and sum to 1 (sum = {0})")]
    InvalidWeights(f64),
    #[error("{0} weights for {1} scenarios")]
    WeightCount(usize, usize),
    #[error("target count {target} outside 1..={n}")]
    InvalidTarget { target: usize, n: usize },
    #[error("gap estimation needs n_u, n_l ≥ 2 and n_sc ≥ 1 (got {n_u}, {n_l}, {n_sc})")]
    TooFewSamples { n_u: usize, n_l: usize, n_sc: usize },
    #[error(transparent)]
    Io(#[from] IngestError),
}

/// Net power profiles (kW, demand minus production), one row per scenario,
/// with probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileScenarioSet {
    pub profiles: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl ProfileScenarioSet {
    pub fn uniform(profiles: Vec<Vec<f64>>) -> Result<Self, ScenarioError> {
        let n = profiles.len();
        let w = if n == 0 { Vec::new() } else { vec![1.0 / n as f64; n] };
        Self::new(profiles, w)
    }

    pub fn new(profiles: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self, ScenarioError> {
        if weights.len() != profiles.len() {
            return Err(ScenarioError::WeightCount(weights.len(), profiles.len()));
        }
        if let Some(first) = profiles.first() {
            let n_t = first.len();
            if let Some((index, p)) = profiles.iter().enumerate().find(|(_, p)| p.len() != n_t) {
                return Err(ScenarioError::ScenarioLengthMismatch {
                    index,
                    expected: n_t,
                    actual: p.len(),
                });
            }
        }
        let sum: f64 = weights.iter().sum();
        if !profiles.is_empty() && ((sum - 1.0).abs() > 1e-9 || weights.iter().any(|w| !(*w >= 0.0))) {
            return Err(ScenarioError::InvalidWeights(sum));
        }
        Ok(Self { profiles, weights })
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn n_t(&self) -> usize {
        self.profiles.first().map_or(0, Vec::len)
    }

    /// Reads a scenario CSV; weights default to uniform.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, ScenarioError> {
        let (rows, weights) = read_scenario_matrix(reader)?;
        match weights {
            Some(w) => Self::new(rows, w),
            None => Self::uniform(rows),
        }
    }

    /// Writes a header `t1..tn,weight` and one row per scenario.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ScenarioError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| ScenarioError::Io(IngestError::Csv(e));
        let mut header: Vec<String> = (1..=self.n_t()).map(|k| format!("t{k}")).collect();
        header.push("weight".into());
        w.write_record(&header).map_err(io)?;
        for (p, wt) in self.profiles.iter().zip(&self.weights) {
            w.write_record(p.iter().chain(std::iter::once(wt)).map(|v| format!("{v:?}")))
                .map_err(io)?;
        }
        w.flush().map_err(|e| ScenarioError::Io(IngestError::Io(e)))?;
        Ok(())
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Kantorovich distance between `set` and its restriction to `kept` when
/// every removed scenario moves to its nearest kept one.
pub fn kantorovich_to_subset(set: &ProfileScenarioSet, kept: &[usize]) -> f64 {
    (0..set.len())
        .filter(|i| !kept.contains(i))
        .map(|i| {
            let d = kept
                .iter()
                .map(|&j| euclid(&set.profiles[i], &set.profiles[j]))
                .fold(f64::INFINITY, f64::min);
            set.weights[i] * d
        })
        .sum()
}

/// Backward reduction to `target_n` scenarios.
///
/// Each pass deletes the scenario whose removal increases the Kantorovich
/// distance to the original distribution the least (ties go to the lowest
/// index). Removed probability moves to the nearest survivor.
pub fn reduce_backward(set: &ProfileScenarioSet, target_n: usize) -> Result<ProfileScenarioSet, ScenarioError> {
    let n = set.len();
    if target_n < 1 || target_n > n {
        return Err(ScenarioError::InvalidTarget { target: target_n, n });
    }
    if target_n == n {
        return Ok(set.clone());
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = euclid(&set.profiles[i], &set.profiles[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let c = |i: usize, j: usize| dist[i * n + j];
    let mut kept = vec![true; n];
    // nearest and second-nearest kept scenario other than the point itself
    let nearest_two = |i: usize, kept: &[bool]| {
        let mut best = (usize::MAX, f64::INFINITY);
        let mut second = (usize::MAX, f64::INFINITY);
        for j in 0..n {
            if j == i || !kept[j] {
                continue;
            }
            let d = c(i, j);
            if d < best.1 {
                second = best;
                best = (j, d);
            } else if d < second.1 {
                second = (j, d);
            }
        }
        (best.0, second.0)
    };
    let mut nn: Vec<(usize, usize)> = (0..n).map(|i| nearest_two(i, &kept)).collect();
    // deleted points assigned to each kept scenario
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); n];

    for _ in 0..(n - target_n) {
        let mut best = (usize::MAX, f64::INFINITY);
        for l in (0..n).filter(|&l| kept[l]) {
            let mut inc = set.weights[l] * c(l, nn[l].0);
            for &i in &assigned[l] {
                // i is deleted, its nearest kept is l; after removal it moves
                // to its second-nearest kept
                inc += set.weights[i] * (c(i, nn[i].1) - c(i, l));
            }
            if inc < best.1 {
                best = (l, inc);
            }
        }
        let l = best.0;
        kept[l] = false;
        let orphans = std::mem::take(&mut assigned[l]);
        for i in 0..n {
            if i != l && (nn[i].0 == l || nn[i].1 == l) {
                nn[i] = nearest_two(i, &kept);
            }
        }
        for i in orphans.into_iter().chain(std::iter::once(l)) {
            assigned[nn[i].0].push(i);
        }
    }

    let survivors: Vec<usize> = (0..n).filter(|&i| kept[i]).collect();
    let mut weights: Vec<f64> = survivors.iter().map(|&j| set.weights[j]).collect();
    for i in (0..n).filter(|&i| !kept[i]) {
        let k = survivors
            .iter()
            .enumerate()
            .min_by(|a, b| c(i, *a.1).total_cmp(&c(i, *b.1)))
            .map(|(k, _)| k)
            .expect("at least one survivor");
        weights[k] += set.weights[i];
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(ProfileScenarioSet {
        profiles: survivors.iter().map(|&j| set.profiles[j].clone()).collect(),
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_best(set: &ProfileScenarioSet, k: usize) -> f64 {
        let n = set.len();
        (0u32..(1 << n))
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| {
                let kept: Vec<usize> = (0..n).filter(|i| m & (1 << i) != 0).collect();
                kantorovich_to_subset(set, &kept)
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn kept_indices(orig: &ProfileScenarioSet, red: &ProfileScenarioSet) -> Vec<usize> {
        let mut used = vec![false; orig.len()];
        red.profiles
            .iter()
            .map(|p| {
                let i = (0..orig.len()).find(|&i| !used[i] && &orig.profiles[i] == p).unwrap();
                used[i] = true;
                i
            })
            .collect()
    }

    #[test]
    fn validation() {
        assert!(ProfileScenarioSet::new(vec![vec![1.0]], vec![0.5]).is_err());
        assert!(ProfileScenarioSet::uniform(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(ProfileScenarioSet::uniform(Vec::new()).unwrap().is_empty());
    }

    #[test]
    fn duplicate_merge() {
        let s = ProfileScenarioSet::uniform(vec![vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap();
        let r = reduce_backward(&s, 1).unwrap();
        assert_eq!(r.weights, vec![1.0]);
        assert_eq!(kantorovich_to_subset(&s, &kept_indices(&s, &r)), 0.0);
    }

    #[test]
    fn three_point_example() {
        let s = ProfileScenarioSet::uniform(vec![vec![0.0], vec![1.0], vec![10.0]]).unwrap();
        assert_abs_diff_eq!(brute_force_best(&s, 2), 1.0 / 3.0, epsilon = 1e-15);
        let r = reduce_backward(&s, 2).unwrap();
        assert_eq!(r.profiles, vec![vec![1.0], vec![10.0]]);
        assert_abs_diff_eq!(r.weights[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.weights[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_eq!(reduce_backward(&s, 3).unwrap(), s);
        assert!(reduce_backward(&s, 0).is_err());
    }

    #[test]
    fn within_factor_of_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 1.0;
        for _ in 0..200 {
            let n = rng.random_range(2..=6);
            let profiles: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let s = ProfileScenarioSet::new(profiles, raw.iter().map(|w| w / total).collect()).unwrap();
            for k in 1..=n {
                let red = reduce_backward(&s, k).unwrap();
                let got = kantorovich_to_subset(&s, &kept_indices(&s, &red));
                let opt = brute_force_best(&s, k);
                assert!(got <= 1.5 * opt + 1e-12, "n={n} k={k}: {got} vs {opt}");
                if opt > 0.0 {
                    worst = worst.max(got / opt);
                }
            }
        }
        assert!(worst <= 1.5);
    }

    #[test]
    fn csv_roundtrip() {
        let s = ProfileScenarioSet::new(vec![vec![0.5, -1.25], vec![3.0, 1e-3]], vec![0.25, 0.75]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(ProfileScenarioSet::read_csv(buf.as_slice()).unwrap(), s);
        let plain = ProfileScenarioSet::read_csv("1,2\n3,4\n".as_bytes()).unwrap();
        assert_eq!(plain.weights, vec![0.5, 0.5]);
    }

    proptest! {
        #[test]
        fn reduction_weights_and_duplicates(seed in 0u64..1000, n in 2usize..30, frac in 0.05f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut profiles: Vec<Vec<f64>> = (0..n).map(|_| (0..4).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
            // plant a duplicate
            profiles.push(profiles[0].clone());
            let s = ProfileScenarioSet::uniform(profiles).unwrap();
            let target = ((s.len() as f64 * frac).ceil() as usize).clamp(1, s.len() - 1);
            let r = reduce_backward(&s, target).unwrap();
            prop_assert_eq!(r.len(), target);
            prop_assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(r.weights.iter().all(|w| *w > 0.0));
            // the cheapest first deletion is one of the zero-cost duplicates
            let mut distinct = r.profiles.clone();
            distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
            distinct.dedup();
            prop_assert_eq!(distinct.len(), r.len());
        }
    }
}
