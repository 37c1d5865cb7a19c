//! Small statistics helpers shared by the gap estimator and the simulator.

use statrs::distribution::{Beta, ContinuousCDF, Normal, StudentsT};

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").inverse_cdf(p)
}

/// Student-t quantile with `df` degrees of freedom.
pub fn t_quantile(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").inverse_cdf(p)
}

/// Exact one-sided Clopper-Pearson upper bound on a binomial proportion at
/// confidence `1 − alpha`.
pub fn clopper_pearson_upper(count: u64, n: u64, alpha: f64) -> f64 {
    if n == 0 || count >= n {
        return 1.0;
    }
    if count == 0 {
        // closed form of the Beta(1, n) quantile
        return 1.0 - alpha.powf(1.0 / n as f64);
    }
    Beta::new(count as f64 + 1.0, (n - count) as f64)
        .expect("positive shapes")
        .inverse_cdf(1.0 - alpha)
}

/// Mean and sample standard deviation (`n − 1` denominator; 0 for `n < 2`).
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Linear-interpolation empirical quantile of already sorted data.
pub fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Mixes a base seed with a purpose tag and an index into an independent
/// 64-bit seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
