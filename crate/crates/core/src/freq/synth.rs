use super::{RawFrequencyDay, NOMINAL_FREQUENCY_HZ};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Synthetic 1 Hz grid frequency: a fast and a slow Ornstein-Uhlenbeck
/// component plus decaying transients at every hour change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthFrequencyParams {
    pub fast_sigma_hz: f64,
    pub fast_tau_s: f64,
    pub slow_sigma_hz: f64,
    pub slow_tau_s: f64,
    pub hour_step_hz: f64,
    pub hour_step_decay_s: f64,
}

impl Default for SynthFrequencyParams {
    fn default() -> Self {
        Self {
            fast_sigma_hz: 0.020,
            fast_tau_s: 180.0,
            slow_sigma_hz: 0.020,
            slow_tau_s: 3600.0,
            hour_step_hz: 0.010,
            hour_step_decay_s: 300.0,
        }
    }
}

/// One complete synthetic day. Day `index` uses its own stream of `seed`, so
/// days can be generated in any order.
pub fn synth_day(params: &SynthFrequencyParams, seed: u64, index: u64) -> RawFrequencyDay {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let a_fast = (-1.0 / params.fast_tau_s).exp();
    let a_slow = (-1.0 / params.slow_tau_s).exp();
    let s_fast = params.fast_sigma_hz * (1.0 - a_fast * a_fast).sqrt();
    let s_slow = params.slow_sigma_hz * (1.0 - a_slow * a_slow).sqrt();
    let mut fast = params.fast_sigma_hz * rng.sample::<f64, _>(StandardNormal);
    let mut slow = params.slow_sigma_hz * rng.sample::<f64, _>(StandardNormal);

    let hour_sign: Vec<f64> = (0..24)
        .map(|h| (2.0 * std::f64::consts::PI * h as f64 / 12.0).sin().signum())
        .collect();

    let label = format!("synth-{index}");
    RawFrequencyDay::from_fn(label, |s| {
        if s > 0 {
            fast = a_fast * fast + s_fast * rng.sample::<f64, _>(StandardNormal);
            slow = a_slow * slow + s_slow * rng.sample::<f64, _>(StandardNormal);
        }
        let h = (s / 3600) as usize;
        let since = (s % 3600) as f64;
        let transient = params.hour_step_hz * hour_sign[h % 24] * (-since / params.hour_step_decay_s).exp();
        NOMINAL_FREQUENCY_HZ + fast + slow + transient
    })
}
