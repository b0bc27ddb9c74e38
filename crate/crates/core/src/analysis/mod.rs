//! Downstream analyses over embeddings: mean-removal debiasing, the
//! frequency-window alignment trend, and the model-specification regression.

mod specs;

pub use specs::{build_spec_features, ridge_fit, Modality, ModelSpec, SpecFeatureMatrix, SPEC_FEATURE_NAMES};

use alloc::string::String;
use alloc::vec::Vec;

use crate::metrics::{evaluate, MetricId, MetricsError};
use crate::numerics::{column_mean, unit_normalize_rows, Matrix, NumericsError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("window {window} exceeds {rows} rows")]
    WindowTooLarge { window: usize, rows: usize },
    #[error("x values are constant, slope undefined")]
    ConstantX,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("need at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("normal equations are singular")]
    Singular,
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = core::result::Result<T, AnalysisError>;

/// Removes the population mean embedding and re-normalizes every row.
pub fn debias(f: &Matrix) -> Result<Matrix> {
    if f.rows() < 2 {
        return Err(AnalysisError::TooFewRows { needed: 2, got: f.rows() });
    }
    let mean = column_mean(f)?;
    let centered = Matrix::from_fn(f.rows(), f.cols(), |i, j| f.get(i, j) - mean[j])?;
    Ok(unit_normalize_rows(&centered)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// `y` had no variance; `r_squared` is reported as 0.
    pub zero_variance: bool,
}

/// Simple linear regression of `y` on `x`.
pub fn ols_fit(x: &[f64], y: &[f64]) -> Result<OlsFit> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooFewRows { needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let x_scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    if sxx <= (1e-14 * x_scale) * (1e-14 * x_scale) * n {
        return Err(AnalysisError::ConstantX);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let y_scale = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let zero_variance = syy <= (1e-14 * y_scale) * (1e-14 * y_scale) * n;
    let r_squared = if zero_variance {
        0.0
    } else {
        let ss_res: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let e = b - intercept - slope * a;
                e * e
            })
            .sum();
        (1.0 - ss_res / syy).clamp(0.0f64, 1.0)
    };
    Ok(OlsFit {
        slope: if zero_variance { 0.0 } else { slope },
        intercept: if zero_variance { my } else { intercept },
        r_squared,
        zero_variance,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    pub window_starts: Vec<usize>,
    /// Mean `f^(-1/2)` over each window.
    pub window_centers: Vec<f64>,
    pub alignments: Vec<f64>,
    /// `None` when there is only one window.
    pub fit: Option<OlsFit>,
}

impl TrendReport {
    pub fn single_window(&self) -> bool {
        self.window_centers.len() == 1
    }
}

/// Number of full windows; a trailing partial window is dropped.
pub fn window_count(n: usize, window: usize, step: usize) -> usize {
    if window == 0 || step == 0 || window > n {
        0
    } else {
        (n - window) / step + 1
    }
}

/// Alignment between `f` and `g` on frequency-ordered windows, regressed on
/// the mean inverse square-root frequency of each window.
pub fn sliding_window_trend(
    f: &Matrix,
    g: &Matrix,
    frequencies: &[f64],
    window: usize,
    step: usize,
    metric: MetricId,
) -> Result<TrendReport> {
    let n = f.rows();
    if g.rows() != n || frequencies.len() != n {
        return Err(AnalysisError::LengthMismatch {
            left: n,
            right: if g.rows() != n { g.rows() } else { frequencies.len() },
        });
    }
    if window == 0 || step == 0 {
        return Err(AnalysisError::Invalid("window and step must be positive".into()));
    }
    if window > n {
        return Err(AnalysisError::WindowTooLarge { window, rows: n });
    }
    if let Some(bad) = frequencies.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(AnalysisError::Invalid(alloc::format!("frequency {bad} is not positive")));
    }
    metric.validate()?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| frequencies[b].total_cmp(&frequencies[a]).then(a.cmp(&b)));

    let count = window_count(n, window, step);
    let mut report = TrendReport {
        window_starts: Vec::with_capacity(count),
        window_centers: Vec::with_capacity(count),
        alignments: Vec::with_capacity(count),
        fit: None,
    };
    for w in 0..count {
        let start = w * step;
        let idx = &order[start..start + window];
        let center = idx.iter().map(|&i| 1.0 / libm::sqrt(frequencies[i])).sum::<f64>() / window as f64;
        let value = evaluate(metric, &f.select_rows(idx), &g.select_rows(idx))?;
        report.window_starts.push(start);
        report.window_centers.push(center);
        report.alignments.push(value);
    }
    if count >= 2 {
        report.fit = Some(ols_fit(&report.window_centers, &report.alignments)?);
    }
    Ok(report)
}
