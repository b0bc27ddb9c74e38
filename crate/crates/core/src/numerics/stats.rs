use alloc::vec::Vec;

use super::NumericsError;

/// Nearest-rank percentile: sort ascending, take the element at 1-based
/// rank `ceil(p/100 · n)` clamped to `[1, n]`.
pub fn percentile(values: &[f64], p: f64) -> Result<f64, NumericsError> {
    if values.is_empty() {
        return Err(NumericsError::EmptyList);
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

pub(crate) fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = libm::ceil(p / 100.0 * n as f64);
    let rank = if rank.is_nan() { 1 } else { (rank as usize).clamp(1, n) };
    sorted[rank - 1]
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean and population standard deviation (divide by `n`).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let m = mean(values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64;
    (m, libm::sqrt(var))
}
