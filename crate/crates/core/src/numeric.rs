//! Small numeric helpers shared by the evaluation and simulation code.

/// `ln((1/n) Σ exp(x_i))` with the max-shift so no exponential overflows.
///
/// Returns `None` for an empty slice.
pub fn log_mean_exp(values: &[f64]) -> Option<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() {
        return None;
    }
    if max == f64::NEG_INFINITY {
        return Some(f64::NEG_INFINITY);
    }
    let sum: f64 = values.iter().map(|&v| (v - max).exp()).sum();
    Some(max + (sum / values.len() as f64).ln())
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mu = mean(values);
    let ss: f64 = values.iter().map(|v| (v - mu).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_mean_exp_matches_direct_sum() {
        let xs = [-0.5, -1.25, -3.0];
        let direct = (xs.iter().map(|x: &f64| x.exp()).sum::<f64>() / 3.0).ln();
        assert!((log_mean_exp(&xs).unwrap() - direct).abs() < 1e-14);
    }

    #[test]
    fn log_mean_exp_survives_huge_magnitudes() {
        let v = log_mean_exp(&[1000.0, 1000.0]).unwrap();
        assert_eq!(v, 1000.0);
        let v = log_mean_exp(&[-1000.0, -1000.0 + 2f64.ln()]).unwrap();
        assert!((v - (-1000.0 + 1.5f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn empty_and_quantiles() {
        assert!(log_mean_exp(&[]).is_none());
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.5), Some(2.5));
        assert_eq!(quantile_sorted(&s, 0.0), Some(1.0));
        assert_eq!(quantile_sorted(&s, 1.0), Some(4.0));
        assert_eq!(sample_std(&[2.0]), 0.0);
    }
}
