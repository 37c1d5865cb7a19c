//! Frequency measurements: gap cleaning, segmentation into days, and
//! discretization into normalized deviation scenarios.

mod io;
mod synth;

pub use io::{
    read_frequency_csv, read_scenario_matrix, write_scenario_matrix, IngestManifest, RejectedDay,
};
pub use synth::{synth_day, SynthFrequencyParams};

use crate::model::{BatteryConfig, TimeGrid};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SECONDS_PER_DAY: u64 = 86_400;
pub const NOMINAL_FREQUENCY_HZ: f64 = 50.0;
/// Deviation at which the reserve is fully activated, in Hz.
pub const FULL_ACTIVATION_HZ: f64 = 0.2;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("day {label} rejected: {gap_len_s} s gap starting at second {gap_start_s}")]
    Rejected {
        label: String,
        gap_start_s: u64,
        gap_len_s: u64,
    },
    #[error("grid step of {dt} h does not tile a day")]
    GridMismatch { dt: f64 },
    #[error("step {step} has no samples")]
    EmptyStep { step: usize },
    #[error("need at least 2 days to split, got {0}")]
    EmptySet(usize),
    #[error("invalid split fraction {0}")]
    InvalidFraction(f64),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("scenario rows have inconsistent lengths ({0} vs {1})")]
    RaggedMatrix(usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Frequency samples of one day, timestamps in seconds since midnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawFrequencyDay {
    pub label: String,
    pub timestamps: Vec<f64>,
    pub f: Vec<f64>,
    pub f_nom: f64,
    pub df_max: f64,
}

impl RawFrequencyDay {
    pub fn new(label: impl Into<String>, timestamps: Vec<f64>, f: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            timestamps,
            f,
            f_nom: NOMINAL_FREQUENCY_HZ,
            df_max: FULL_ACTIVATION_HZ,
        }
    }

    /// A day sampled every second from a per-second closure.
    pub fn from_fn(label: impl Into<String>, mut f: impl FnMut(u64) -> f64) -> Self {
        let timestamps = (0..SECONDS_PER_DAY).map(|s| s as f64).collect();
        let values = (0..SECONDS_PER_DAY).map(&mut f).collect();
        Self::new(label, timestamps, values)
    }

    pub fn is_complete(&self) -> bool {
        self.timestamps.len() == SECONDS_PER_DAY as usize
            && self.timestamps.iter().enumerate().all(|(i, &t)| t == i as f64)
            && self.f.iter().all(|v| v.is_finite())
    }
}

/// Normalized, time-averaged deviations of one day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyScenario {
    pub df: Vec<f64>,
    /// Whether charge/discharge efficiencies were folded into the signal.
    pub folded: bool,
}

/// Fills gaps of at most `max_gap_s` missing seconds by linear interpolation
/// (edge gaps hold the nearest sample). Any longer gap rejects the day.
pub fn clean_day(raw: &RawFrequencyDay, max_gap_s: u64) -> Result<RawFrequencyDay, IngestError> {
    if raw.is_complete() {
        return Ok(raw.clone());
    }
    let n = SECONDS_PER_DAY as usize;
    let mut slots: Vec<Option<f64>> = vec![None; n];
    for (&t, &v) in raw.timestamps.iter().zip(&raw.f) {
        let s = t.round();
        if s < 0.0 || s >= n as f64 || !v.is_finite() {
            continue;
        }
        let slot = &mut slots[s as usize];
        if slot.is_none() {
            *slot = Some(v);
        }
    }

    let reject = |start: usize, len: usize| IngestError::Rejected {
        label: raw.label.clone(),
        gap_start_s: start as u64,
        gap_len_s: len as u64,
    };

    let mut out = vec![0.0; n];
    let mut i = 0;
    let mut last: Option<(usize, f64)> = None;
    while i < n {
        if let Some(v) = slots[i] {
            out[i] = v;
            last = Some((i, v));
            i += 1;
            continue;
        }
        let start = i;
        while i < n && slots[i].is_none() {
            i += 1;
        }
        let len = i - start;
        if len as u64 > max_gap_s {
            return Err(reject(start, len));
        }
        let next = (i < n).then(|| (i, slots[i].unwrap()));
        match (last, next) {
            (Some((i0, v0)), Some((i1, v1))) => {
                for (s, slot) in out.iter_mut().enumerate().take(i1).skip(start) {
                    let w = (s - i0) as f64 / (i1 - i0) as f64;
                    *slot = v0 + w * (v1 - v0);
                }
            }
            (Some((_, v)), None) | (None, Some((_, v))) => out[start..i].fill(v),
            (None, None) => return Err(reject(start, len)),
        }
    }

    Ok(RawFrequencyDay {
        label: raw.label.clone(),
        timestamps: (0..n).map(|s| s as f64).collect(),
        f: out,
        f_nom: raw.f_nom,
        df_max: raw.df_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretizeOptions {
    pub fold: bool,
    /// Saturate the normalized deviation at +-1 before averaging.
    pub clamp: bool,
}

impl Default for DiscretizeOptions {
    fn default() -> Self {
        Self { fold: true, clamp: true }
    }
}

/// Averages normalized deviations over each grid step, folding charge and
/// discharge efficiencies sample by sample when `fold` is set.
pub fn discretize(
    raw: &RawFrequencyDay,
    grid: &TimeGrid,
    cfg: &BatteryConfig,
    fold: bool,
) -> Result<FrequencyScenario, IngestError> {
    discretize_with(raw, grid, cfg, DiscretizeOptions { fold, clamp: true })
}

pub fn discretize_with(
    raw: &RawFrequencyDay,
    grid: &TimeGrid,
    cfg: &BatteryConfig,
    opts: DiscretizeOptions,
) -> Result<FrequencyScenario, IngestError> {
    let step_s = grid
        .step_seconds()
        .filter(|s| SECONDS_PER_DAY.is_multiple_of(*s) && SECONDS_PER_DAY / s == grid.n_t as u64)
        .ok_or(IngestError::GridMismatch { dt: grid.dt })? as f64;

    let mut sums = vec![0.0; grid.n_t];
    let mut counts = vec![0usize; grid.n_t];
    for (&t, &f) in raw.timestamps.iter().zip(&raw.f) {
        let k = (t / step_s).floor();
        if k < 0.0 || k >= grid.n_t as f64 {
            continue;
        }
        let mut x = (f - raw.f_nom) / raw.df_max;
        if opts.clamp {
            x = x.clamp(-1.0, 1.0);
        }
        if opts.fold {
            x = cfg.eta_c * x.max(0.0) - (-x).max(0.0) / cfg.eta_d;
        }
        sums[k as usize] += x;
        counts[k as usize] += 1;
    }
    let df = sums
        .iter()
        .zip(&counts)
        .enumerate()
        .map(|(k, (&s, &c))| if c == 0 { Err(IngestError::EmptyStep { step: k + 1 }) } else { Ok(s / c as f64) })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FrequencyScenario { df, folded: opts.fold })
}

/// Index partition of a day list into training and validation days.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Random train/validation split; the training share is `round(frac * n)`,
/// kept within `[1, n - 1]`. Both index lists are sorted.
pub fn split_train_validation(n_days: usize, frac: f64, seed: u64) -> Result<Split, IngestError> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(IngestError::InvalidFraction(frac));
    }
    if n_days < 2 {
        return Err(IngestError::EmptySet(n_days));
    }
    let n_train = ((frac * n_days as f64).round() as usize).clamp(1, n_days - 1);
    let mut idx: Vec<usize> = (0..n_days).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let mut train = idx[..n_train].to_vec();
    let mut validation = idx[n_train..].to_vec();
    train.sort_unstable();
    validation.sort_unstable();
    Ok(Split { train, validation })
}
