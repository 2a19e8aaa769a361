//! Autocorrelation-based thinning and the Jensen lower bound on ensemble LPPD.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::LogLikTable;
use crate::numeric::log_mean_exp;

pub const MIN_SERIES_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThinningDiagnostics {
    pub iac_time: f64,
    pub recommended_interval: usize,
    pub window_used: usize,
}

/// Integrated autocorrelation time `τ = 1 + 2 Σ_{t=1}^{T} ρ̂(t)`.
///
/// `ρ̂` is the length-normalized sample autocorrelation. The window `T` follows
/// Geyer's initial positive sequence: pair sums `Γ_k = ρ̂(2k) + ρ̂(2k+1)` are
/// accumulated until the first non-positive one. The estimate is clamped
/// below at 1.
pub fn integrated_autocorrelation_time(series: &[f64]) -> Result<ThinningDiagnostics> {
    let n = series.len();
    if n < MIN_SERIES_LEN {
        return Err(Error::TooShort {
            needed: MIN_SERIES_LEN,
            got: n,
        });
    }
    if let Some((i, &v)) = series.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "autocorrelation series",
            index: i,
            value: v,
        });
    }
    let first = series[0];
    if series.iter().all(|&v| v == first) {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = series.iter().map(|v| v - mean).collect();
    let c0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return Err(Error::Degenerate("series has zero variance".into()));
    }
    let acov = autocovariance(&centered);
    let rho = |lag: usize| acov[lag] / c0;

    // Σ_k Γ_k over the positive prefix, with Γ_0 = 1 + ρ̂(1).
    let mut pair_sum = 0.0;
    let mut last_lag = 1;
    let mut k = 0;
    while 2 * k + 1 < n {
        let gamma = if k == 0 { 1.0 + rho(1) } else { rho(2 * k) + rho(2 * k + 1) };
        if gamma <= 0.0 {
            break;
        }
        pair_sum += gamma;
        last_lag = 2 * k + 1;
        k += 1;
    }
    let iac_time = (2.0 * pair_sum - 1.0).max(1.0);
    Ok(ThinningDiagnostics {
        iac_time,
        recommended_interval: iac_time.ceil() as usize,
        window_used: last_lag,
    })
}

/// Length-normalized autocovariances `(1/n) Σ_t x_t x_{t+lag}` for every lag,
/// via a zero-padded FFT.
fn autocovariance(centered: &[f64]) -> Vec<f64> {
    let n = centered.len();
    let size = (2 * n).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(size);
    let inverse = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<f64>> = centered
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(size)
        .collect();
    forward.process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    inverse.process(&mut buf);
    buf[..n].iter().map(|c| c.re / size as f64 / n as f64).collect()
}

/// Keeps sample rows `1, 1 + interval, 1 + 2·interval, ...` and renumbers them
/// contiguously; `original_indices` tracks where each kept row came from.
///
/// Starting at sample 1 keeps the first tested sample in warmstart-reference
/// mode and the reference sample in first-sample mode.
pub fn apply_thinning(table: &LogLikTable, interval: usize) -> LogLikTable {
    let interval = interval.max(1);
    let keep: Vec<usize> = (0..table.sample_rows.len()).step_by(interval).collect();
    LogLikTable {
        chain_id: table.chain_id.clone(),
        warmstart_row: table.warmstart_row.clone(),
        sample_rows: keep.iter().map(|&i| table.sample_rows[i].clone()).collect(),
        m: table.m,
        original_indices: keep.iter().map(|&i| table.original_indices[i]).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JensenGapReport {
    /// Per-point LPPD of the equally weighted ensemble.
    pub ensemble_lppd: f64,
    /// Mean over members of the per-point average log-likelihood.
    pub mean_member_loglik: f64,
    pub gap: f64,
    pub m: usize,
}

impl JensenGapReport {
    pub fn ensemble_lppd_total(&self) -> f64 {
        self.ensemble_lppd * self.m as f64
    }

    pub fn mean_member_total(&self) -> f64 {
        self.mean_member_loglik * self.m as f64
    }
}

pub(crate) fn check_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<usize> {
    let m = rows
        .first()
        .map(|r| r.as_ref().len())
        .ok_or_else(|| Error::Degenerate("no ensemble members".into()))?;
    if m == 0 {
        return Err(Error::Degenerate("members have no validation points".into()));
    }
    for r in rows {
        if r.as_ref().len() != m {
            return Err(Error::MixedLength {
                expected: m,
                found: r.as_ref().len(),
                context: "ensemble member rows".into(),
            });
        }
    }
    Ok(m)
}

pub(crate) fn per_point_lppd<R: AsRef<[f64]>>(rows: &[R], m: usize) -> f64 {
    let mut column = vec![0.0; rows.len()];
    let mut total = 0.0;
    for i in 0..m {
        for (slot, r) in column.iter_mut().zip(rows) {
            *slot = r.as_ref()[i];
        }
        total += log_mean_exp(&column).expect("non-empty membership");
    }
    total / m as f64
}

/// Both sides of `Σ_i ln((1/K) Σ_k p_ik) ≥ (1/K) Σ_k Σ_i ln p_ik`, per point.
pub fn jensen_gap<R: AsRef<[f64]>>(member_rows: &[R]) -> Result<JensenGapReport> {
    let m = check_rows(member_rows)?;
    let ensemble_lppd = per_point_lppd(member_rows, m);
    let mean_member_loglik = member_rows
        .iter()
        .map(|r| r.as_ref().iter().sum::<f64>() / m as f64)
        .sum::<f64>()
        / member_rows.len() as f64;
    Ok(JensenGapReport {
        ensemble_lppd,
        mean_member_loglik,
        gap: ensemble_lppd - mean_member_loglik,
        m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn ar1(rho: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = (1.0 - rho * rho).sqrt();
        let mut x: f64 = rng.sample(StandardNormal);
        (0..n)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                x = rho * x + scale * z;
                x
            })
            .collect()
    }

    #[test]
    fn white_noise_near_one() {
        let d = integrated_autocorrelation_time(&ar1(0.0, 10_000, 11)).unwrap();
        assert!((0.9..=1.1).contains(&d.iac_time), "{d:?}");
        assert_eq!(d.recommended_interval, d.iac_time.ceil() as usize);
        assert!(d.window_used >= 1);
    }

    #[test]
    fn ar1_matches_closed_form() {
        let d = integrated_autocorrelation_time(&ar1(0.5, 100_000, 5)).unwrap();
        assert!((d.iac_time - 3.0).abs() <= 0.15 * 3.0, "{d:?}");
    }

    #[test]
    fn consistency_across_lengths() {
        for (n, tol) in [(1_000, 0.5), (10_000, 0.25), (100_000, 0.15)] {
            let d = integrated_autocorrelation_time(&ar1(0.5, n, 99)).unwrap();
            assert!((d.iac_time - 3.0).abs() <= tol * 3.0, "n={n}: {d:?}");
        }
    }

    #[test]
    fn shuffling_destroys_correlation() {
        use rand::seq::SliceRandom;
        let mut x = ar1(0.9, 20_000, 3);
        let strong = integrated_autocorrelation_time(&x).unwrap();
        assert!(strong.iac_time > 10.0);
        x.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
        let shuffled = integrated_autocorrelation_time(&x).unwrap();
        assert!(shuffled.iac_time < 1.5, "{shuffled:?}");
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            integrated_autocorrelation_time(&[0.3; 50]),
            Err(Error::Degenerate(_))
        ));
        assert!(matches!(
            integrated_autocorrelation_time(&[1.0, 2.0, 3.0]),
            Err(Error::TooShort { .. })
        ));
    }

    fn table(n: usize) -> LogLikTable {
        LogLikTable::new("t", Some(vec![0.0]), (1..=n).map(|k| vec![k as f64]).collect()).unwrap()
    }

    #[test]
    fn thinning_identity() {
        let t = table(17);
        assert_eq!(apply_thinning(&t, 1), t);
    }

    #[test]
    fn thinning_every_tenth() {
        let thinned = apply_thinning(&table(100), 10);
        assert_eq!(thinned.num_samples(), 10);
        let expected: Vec<usize> = (0..10).map(|j| 1 + 10 * j).collect();
        assert_eq!(thinned.original_indices, expected);
        assert_eq!(thinned.sample(2), Some(&[11.0][..]));
        assert_eq!(thinned.original_index(10), Some(91));
    }

    #[test]
    fn thinning_saturates() {
        let thinned = apply_thinning(&table(5), 10);
        assert_eq!(thinned.num_samples(), 1);
        assert_eq!(thinned.original_indices, vec![1]);
    }

    #[test]
    fn thinning_idempotent_under_unit_interval() {
        let t = apply_thinning(&table(37), 4);
        assert_eq!(apply_thinning(&t, 1), t);
        let twice = apply_thinning(&t, 3);
        assert_eq!(twice.original_indices, vec![1, 13, 25, 37]);
    }

    #[test]
    fn jensen_single_member_is_exact() {
        let r = jensen_gap(&[vec![-0.2, -1.3, -0.7]]).unwrap();
        assert_eq!(r.gap, 0.0);
    }

    #[test]
    fn jensen_two_point_example() {
        let r = jensen_gap(&[vec![0.5f64.ln()], vec![0.25f64.ln()]]).unwrap();
        assert!((r.ensemble_lppd - 0.375f64.ln()).abs() < 1e-14);
        assert!((r.ensemble_lppd - (-0.98083)).abs() < 1e-5);
        assert!((r.mean_member_loglik - (-1.03972)).abs() < 1e-5);
        assert!((r.gap - 0.05889).abs() < 1e-5);
    }

    #[test]
    fn jensen_identical_members() {
        let row = vec![-0.4, -2.1, -0.05, -3.3];
        let r = jensen_gap(&vec![row; 5]).unwrap();
        assert!(r.gap.abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn jensen_errors() {
        assert!(jensen_gap::<Vec<f64>>(&[]).is_err());
        assert!(jensen_gap(&[vec![0.0], vec![0.0, 1.0]]).is_err());
    }
}
