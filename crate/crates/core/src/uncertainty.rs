//! Data-driven uncertainty model for the frequency deviation vector.
//!
//! Training scenarios are whitened with the inverse Cholesky factor of their
//! (lightly regularized) covariance. Each whitened coordinate gets a forward
//! and a backward deviation, estimated from its empirical moment generating
//! function. Together they define an asymmetric norm-bounded uncertainty set
//! whose worst case over a linear form has a closed expression.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum UncertaintyError {
    #[error("need at least {required} training rows, got {actual}")]
    InsufficientData { required: usize, actual: usize },
    #[error("training rows have inconsistent lengths")]
    Ragged,
    #[error("regularized covariance is not positive definite")]
    SingularCovariance,
    #[error("whitened coordinate {0} is constant")]
    DegenerateCoordinate(usize),
    #[error("epsilon must lie in (0, 1), got {0}")]
    InvalidEpsilon(f64),
    #[error("empty sample")]
    EmptySample,
    #[error("vector length {actual} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Relative ridge added to the sample covariance before factorization.
pub const COVARIANCE_RIDGE: f64 = 1e-8;

const THETA_MIN: f64 = 1e-3;
const THETA_MAX: f64 = 1e2;
const THETA_GRID: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyModel {
    pub mean: Vec<f64>,
    /// Whitening matrix, row-major. `wᵀw` equals the inverse covariance.
    pub w: Vec<Vec<f64>>,
    /// Inverse of `w`, row-major.
    pub w_inv: Vec<Vec<f64>>,
    pub sigma_f: Vec<f64>,
    pub sigma_b: Vec<f64>,
    pub epsilon: f64,
    pub n_train: usize,
    /// Hash of the data the model was fitted on.
    #[serde(default)]
    pub training_hash: String,
}

impl UncertaintyModel {
    pub fn n_t(&self) -> usize {
        self.mean.len()
    }

    /// Radius `sqrt(-2 ln eps)` of the uncertainty set.
    pub fn omega(&self) -> f64 {
        omega(self.epsilon)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self, UncertaintyError> {
        check_epsilon(epsilon)?;
        Ok(Self {
            epsilon,
            ..self.clone()
        })
    }

    pub fn w_matrix(&self) -> DMatrix<f64> {
        to_matrix(&self.w)
    }

    pub fn w_inv_matrix(&self) -> DMatrix<f64> {
        to_matrix(&self.w_inv)
    }

    /// Whitened coordinates `w (x - mean)`.
    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let centered = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(a, m)| a - m));
        (self.w_matrix() * centered).iter().copied().collect()
    }

    /// Inverse of [`whiten`](Self::whiten).
    pub fn unwhiten(&self, z: &[f64]) -> Vec<f64> {
        let v = self.w_inv_matrix() * DVector::from_column_slice(z);
        v.iter().zip(&self.mean).map(|(a, m)| a + m).collect()
    }

    /// Whitened-space coefficients `c = w_invᵀ a`, so that
    /// `aᵀx = aᵀmean + cᵀ whiten(x)`.
    pub fn whitened_direction(&self, a: &[f64]) -> Vec<f64> {
        let n = self.n_t();
        (0..n)
            .map(|m| (0..n).map(|l| self.w_inv[l][m] * a[l]).sum())
            .collect()
    }

    /// Worst case of `aᵀx` over the uncertainty set.
    pub fn worst_case(&self, a: &[f64]) -> Result<f64, UncertaintyError> {
        if a.len() != self.n_t() {
            return Err(UncertaintyError::DimensionMismatch {
                expected: self.n_t(),
                actual: a.len(),
            });
        }
        let c = self.whitened_direction(a);
        let norm = c
            .iter()
            .zip(self.sigma_f.iter().zip(&self.sigma_b))
            .map(|(&ci, (&sf, &sb))| (sf * ci).max(-sb * ci).powi(2))
            .sum::<f64>()
            .sqrt();
        let mean_part: f64 = a.iter().zip(&self.mean).map(|(x, y)| x * y).sum();
        Ok(mean_part + self.omega() * norm)
    }
}

pub fn omega(epsilon: f64) -> f64 {
    (-2.0 * epsilon.ln()).sqrt()
}

fn check_epsilon(epsilon: f64) -> Result<(), UncertaintyError> {
    if epsilon > 0.0 && epsilon < 1.0 {
        Ok(())
    } else {
        Err(UncertaintyError::InvalidEpsilon(epsilon))
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(n, m, |i, j| rows[i][j])
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Fits mean, whitening and deviations to training rows (one row per day).
pub fn fit(train: &[Vec<f64>], epsilon: f64) -> Result<UncertaintyModel, UncertaintyError> {
    check_epsilon(epsilon)?;
    let n_t = train.first().map_or(0, Vec::len);
    if train.len() < n_t + 1 || n_t == 0 {
        return Err(UncertaintyError::InsufficientData {
            required: n_t + 1,
            actual: train.len(),
        });
    }
    if train.iter().any(|r| r.len() != n_t) {
        return Err(UncertaintyError::Ragged);
    }
    let n = train.len() as f64;
    let data = DMatrix::from_fn(train.len(), n_t, |i, j| train[i][j]);
    let mean = DVector::from_iterator(n_t, data.column_iter().map(|c| c.sum() / n));
    let mut centered = data.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.transpose() * &centered / n;
    let ridge = COVARIANCE_RIDGE * cov.trace() / n_t as f64;
    if !(ridge > 0.0 && ridge.is_finite()) {
        return Err(UncertaintyError::SingularCovariance);
    }
    for i in 0..n_t {
        cov[(i, i)] += ridge;
    }
    let chol = cov.cholesky().ok_or(UncertaintyError::SingularCovariance)?;
    let l = chol.l();
    let w = l
        .clone()
        .solve_lower_triangular(&DMatrix::identity(n_t, n_t))
        .ok_or(UncertaintyError::SingularCovariance)?;

    // rows of `centered` whitened: (w * xᵀ)ᵀ = x wᵀ
    let whitened = centered * w.transpose();
    let mut sigma_f = Vec::with_capacity(n_t);
    let mut sigma_b = Vec::with_capacity(n_t);
    for (i, col) in whitened.column_iter().enumerate() {
        let z: Vec<f64> = col.iter().copied().collect();
        let second = z.iter().map(|v| v * v).sum::<f64>() / n;
        if second < 1e-12 {
            return Err(UncertaintyError::DegenerateCoordinate(i));
        }
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        sigma_f.push(empirical_deviation(&z));
        sigma_b.push(empirical_deviation(&neg));
    }

    Ok(UncertaintyModel {
        mean: mean.iter().copied().collect(),
        w: to_rows(&w),
        w_inv: to_rows(&l),
        sigma_f,
        sigma_b,
        epsilon,
        n_train: train.len(),
        training_hash: String::new(),
    })
}

/// Natural log of the empirical moment generating function at `theta`.
pub fn empirical_log_mgf(samples: &[f64], theta: f64) -> f64 {
    let m = samples.iter().map(|x| theta * x).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = samples.iter().map(|x| (theta * x - m).exp()).sum();
    m + s.ln() - (samples.len() as f64).ln()
}

/// Forward deviation of a centered sample; pass the negated sample for the
/// backward deviation.
pub fn empirical_deviation(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let second = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    deviation_from_log_mgf(|t| empirical_log_mgf(samples, t), second)
}

/// `sup_{θ>0} sqrt(2 ln M(θ) / θ²)` by a log-spaced grid followed by golden
/// section refinement around the best grid point. `limit_at_zero` is the
/// value of `2 ln M(θ)/θ²` as θ → 0 (the variance) and is always a candidate.
pub fn deviation_from_log_mgf(log_mgf: impl Fn(f64) -> f64, limit_at_zero: f64) -> f64 {
    let objective = |t: f64| {
        let v = 2.0 * log_mgf(t) / (t * t);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };
    let step = (THETA_MAX / THETA_MIN).ln() / (THETA_GRID - 1) as f64;
    let grid: Vec<f64> = (0..THETA_GRID).map(|i| THETA_MIN * (step * i as f64).exp()).collect();
    let values: Vec<f64> = grid.iter().map(|&t| objective(t)).collect();
    let (best_i, &best_v) = values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty grid");

    let lo = grid[best_i.saturating_sub(1)];
    let hi = grid[(best_i + 1).min(THETA_GRID - 1)];
    let refined = golden_section_max(&objective, lo, hi, 60);
    let best = best_v.max(refined).max(limit_at_zero);
    best.max(0.0).sqrt()
}

fn golden_section_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, iters: usize) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd)
}

/// Sample-average conditional value-at-risk at level `1 - epsilon`:
/// `min_β β + mean((x - β)⁺) / ε`, evaluated exactly from order statistics.
pub fn empirical_cvar(samples: &[f64], epsilon: f64) -> Result<f64, UncertaintyError> {
    check_epsilon(epsilon)?;
    if samples.is_empty() {
        return Err(UncertaintyError::EmptySample);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mass = epsilon * sorted.len() as f64;
    let whole = (mass.floor() as usize).min(sorted.len() - 1);
    let frac = mass - whole as f64;
    let top: f64 = sorted[..whole].iter().sum();
    Ok((top + frac * sorted[whole]) / mass)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Brute force over candidate β values (the optimum sits on a sample).
    fn cvar_oracle(x: &[f64], eps: f64) -> f64 {
        let n = x.len() as f64;
        x.iter()
            .map(|&beta| beta + x.iter().map(|v| (v - beta).max(0.0)).sum::<f64>() / (eps * n))
            .fold(f64::INFINITY, f64::min)
    }

    fn correlated_rows(n: usize, n_t: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut prev = 0.0;
                (0..n_t)
                    .map(|k| {
                        let e: f64 = rng.random::<f64>() - 0.3;
                        prev = 0.6 * prev + e + 0.05 * k as f64;
                        prev
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn cvar_examples() {
        let x: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_abs_diff_eq!(empirical_cvar(&x, 0.05).unwrap(), 98.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cvar_oracle(&x, 0.05), 98.0, epsilon = 1e-12);
        assert_abs_diff_eq!(empirical_cvar(&[3.5; 17], 0.1).unwrap(), 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(empirical_cvar(&[0.0, 10.0], 0.5).unwrap(), 10.0, epsilon = 1e-12);
        assert_eq!(empirical_cvar(&[], 0.1), Err(UncertaintyError::EmptySample));
        assert!(empirical_cvar(&[1.0], 1.0).is_err());
    }

    #[test]
    fn identity_case_whitening() {
        let rows = vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]];
        let m = fit(&rows, 0.1).unwrap();
        for i in 0..2 {
            assert_abs_diff_eq!(m.mean[i], 0.0, epsilon = 1e-12);
            for j in 0..2 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(m.w[i][j].abs(), expect, epsilon = 1e-6);
            }
        }
        // two-point symmetric coordinates have unit deviations
        for i in 0..2 {
            assert_abs_diff_eq!(m.sigma_f[i], 1.0, epsilon = 1e-6);
            assert_abs_diff_eq!(m.sigma_b[i], 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn two_point_deviation_is_one() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert_abs_diff_eq!(empirical_deviation(&x), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_mgf_gives_unit_deviation() {
        assert_abs_diff_eq!(deviation_from_log_mgf(|t| t * t / 2.0, 1.0), 1.0, epsilon = 1e-12);
        // a scaled gaussian recovers its scale
        assert_abs_diff_eq!(deviation_from_log_mgf(|t| 2.25 * t * t / 2.0, 2.25), 1.5, epsilon = 1e-12);
    }

    #[test]
    fn skewed_sample_has_asymmetric_deviations() {
        // exponential-like right tail
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let raw: Vec<f64> = (0..5000).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let z: Vec<f64> = raw.iter().map(|v| v - mean).collect();
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let (sf, sb) = (empirical_deviation(&z), empirical_deviation(&neg));
        assert!(sf > sb, "forward {sf} backward {sb}");
        assert!(sb >= 0.95);
    }

    #[test]
    fn worst_case_examples() {
        let m = UncertaintyModel {
            mean: vec![0.0; 3],
            w: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            w_inv: vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
            sigma_f: vec![1.0; 3],
            sigma_b: vec![1.0; 3],
            epsilon: (-2.0f64).exp(),
            n_train: 0,
            training_hash: String::new(),
        };
        assert_abs_diff_eq!(m.omega(), 2.0, epsilon = 1e-12);
        assert_eq!(m.worst_case(&[0.0; 3]).unwrap(), 0.0);
        assert_abs_diff_eq!(m.worst_case(&[1.0, 0.0, 0.0]).unwrap(), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.worst_case(&[-1.0, 0.0, 0.0]).unwrap(), 2.0, epsilon = 1e-12);
        assert!(m.worst_case(&[1.0]).is_err());
    }

    #[test]
    fn whitening_properties() {
        let rows = correlated_rows(300, 8, 11);
        let m = fit(&rows, 0.01).unwrap();
        let n_t = 8;
        // w Σ wᵀ ≈ I, checked through the whitened sample covariance
        let z: Vec<Vec<f64>> = rows.iter().map(|r| m.whiten(r)).collect();
        let mut frob = 0.0;
        for i in 0..n_t {
            for j in 0..n_t {
                let c = z.iter().map(|v| v[i] * v[j]).sum::<f64>() / z.len() as f64;
                let target = if i == j { 1.0 } else { 0.0 };
                frob += (c - target).powi(2);
            }
        }
        assert!(frob.sqrt() <= 1e-6 * n_t as f64, "frobenius error {}", frob.sqrt());
        // wᵀw = Σ⁻¹ regardless of factor orientation: check w_inv w = I
        let prod = m.w_inv_matrix() * m.w_matrix();
        assert!((prod - DMatrix::identity(n_t, n_t)).norm() < 1e-9);
        for i in 0..n_t {
            assert!(m.sigma_f[i] >= 1.0 - 1e-6 && m.sigma_b[i] >= 1.0 - 1e-6);
        }
        // unwhiten inverts whiten
        let back = m.unwhiten(&m.whiten(&rows[5]));
        for (a, b) in back.iter().zip(&rows[5]) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(fit(&[vec![1.0, 2.0]], 0.1), Err(UncertaintyError::InsufficientData { .. })));
        assert_eq!(fit(&vec![vec![0.0, 0.0]; 5], 0.1), Err(UncertaintyError::SingularCovariance));
        assert!(matches!(fit(&correlated_rows(10, 2, 1), 0.0), Err(UncertaintyError::InvalidEpsilon(_))));
        let mut rows = correlated_rows(10, 3, 1);
        rows[2].pop();
        assert_eq!(fit(&rows, 0.1), Err(UncertaintyError::Ragged));
    }

    proptest! {
        #[test]
        fn cvar_matches_brute_force(x in prop::collection::vec(-50.0f64..50.0, 1..60), eps in 0.01f64..0.99) {
            let fast = empirical_cvar(&x, eps).unwrap();
            prop_assert!((fast - cvar_oracle(&x, eps)).abs() < 1e-9 * (1.0 + fast.abs()));
        }

        #[test]
        fn worst_case_bounds_and_homogeneity(
            a in prop::collection::vec(-3.0f64..3.0, 6),
            lambda in 0.0f64..5.0,
            seed in 0u64..20,
        ) {
            // the sample CVaR only settles below the bound for large samples
            let rows = correlated_rows(1000, 6, seed);
            let m = fit(&rows, 0.05).unwrap();
            let wc = m.worst_case(&a).unwrap();
            let mean_part: f64 = a.iter().zip(&m.mean).map(|(x, y)| x * y).sum();
            prop_assert!(wc >= mean_part - 1e-12);
            let scaled: Vec<f64> = a.iter().map(|v| v * lambda).collect();
            prop_assert!((m.worst_case(&scaled).unwrap() - lambda * wc).abs() < 1e-9 * (1.0 + wc.abs()));
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            let proj: Vec<f64> = rows.iter().map(|r| r.iter().zip(&a).map(|(x, y)| x * y).sum()).collect();
            prop_assert!(empirical_cvar(&proj, m.epsilon).unwrap() <= wc + 1e-6 * norm);
        }
    }
}
