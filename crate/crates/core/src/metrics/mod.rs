//! Representation-similarity metrics.
//!
//! Every metric takes two embedding matrices with the same number of rows
//! (row `i` of both describes the same object) and compares their geometry.
//! Overlap, CKA and SVCCA report 1 for identical inputs; the KNN edit
//! distance reports 0, and larger values mean less similar.

mod cka;
mod knn;
mod svcca;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

pub use cka::{linear_cka, unbiased_cka};
pub use knn::{knn_edit_distance, knn_from_embeddings, knn_indices, levenshtein, mutual_knn_overlap};
pub use svcca::{canonical_correlations, svcca};

use crate::numerics::{mean_std, Matrix, NumericsError, Rng};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("row counts differ: {left} vs {right}")]
    RowCountMismatch { left: usize, right: usize },
    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("fewer than {needed} non-zero singular values ({got})")]
    RankDeficient { needed: usize, got: usize },
    #[error("k = {k} too large for {n} points (need k <= n - 1)")]
    KTooLarge { k: usize, n: usize },
    #[error("gramian is not square: {0:?}")]
    NotSquare((usize, usize)),
    #[error("sample size {sample_size} exceeds {n} rows")]
    SampleTooLarge { sample_size: usize, n: usize },
    #[error("invalid metric parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// A metric together with its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricId {
    Cka,
    CkaUnbiased,
    Svcca(usize),
    KnnOverlap(usize),
    KnnEdit(usize),
}

impl MetricId {
    pub fn validate(self) -> Result<Self, MetricsError> {
        match self {
            MetricId::Svcca(0) => Err(MetricsError::InvalidParameter("svcca needs c >= 1".into())),
            MetricId::KnnOverlap(0) | MetricId::KnnEdit(0) => {
                Err(MetricsError::InvalidParameter("knn metrics need k >= 1".into()))
            }
            m => Ok(m),
        }
    }

    /// The value a metric reports when comparing a representation with itself.
    pub fn perfect_value(self) -> f64 {
        match self {
            MetricId::KnnEdit(_) => 0.0,
            _ => 1.0,
        }
    }

    pub fn higher_is_more_similar(self) -> bool {
        !matches!(self, MetricId::KnnEdit(_))
    }

    /// The metric set evaluated throughout the experiments.
    pub fn standard_set() -> [MetricId; 8] {
        [
            MetricId::Cka,
            MetricId::CkaUnbiased,
            MetricId::Svcca(10),
            MetricId::Svcca(100),
            MetricId::KnnOverlap(10),
            MetricId::KnnOverlap(100),
            MetricId::KnnEdit(10),
            MetricId::KnnEdit(100),
        ]
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricId::Cka => write!(f, "cka"),
            MetricId::CkaUnbiased => write!(f, "cka_unbiased"),
            MetricId::Svcca(c) => write!(f, "svcca_{c}"),
            MetricId::KnnOverlap(k) => write!(f, "knn_overlap_{k}"),
            MetricId::KnnEdit(k) => write!(f, "knn_edit_{k}"),
        }
    }
}

impl FromStr for MetricId {
    type Err = MetricsError;

    /// Accepts `cka`, `cka_unbiased`, and `svcca`/`knn_overlap`/`knn_edit`
    /// followed by `_N` or `:N`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        match s {
            "cka" => return Ok(MetricId::Cka),
            "cka_unbiased" | "unbiased_cka" => return Ok(MetricId::CkaUnbiased),
            _ => {}
        }
        let bad = || MetricsError::InvalidParameter(alloc::format!("unknown metric `{s}`"));
        let split = s.rfind([':', '_']).ok_or_else(bad)?;
        let (name, param) = (&s[..split], &s[split + 1..]);
        let n: usize = param.parse().map_err(|_| bad())?;
        let id = match name {
            "svcca" => MetricId::Svcca(n),
            "knn_overlap" | "knn" => MetricId::KnnOverlap(n),
            "knn_edit" => MetricId::KnnEdit(n),
            _ => return Err(bad()),
        };
        id.validate()
    }
}

pub(crate) fn check_rows(f: &Matrix, g: &Matrix) -> Result<usize, MetricsError> {
    if f.rows() != g.rows() {
        return Err(MetricsError::RowCountMismatch {
            left: f.rows(),
            right: g.rows(),
        });
    }
    Ok(f.rows())
}

/// Evaluates one metric on a pair of representations.
pub fn evaluate(metric: MetricId, f: &Matrix, g: &Matrix) -> Result<f64, MetricsError> {
    match metric.validate()? {
        MetricId::Cka => linear_cka(f, g),
        MetricId::CkaUnbiased => unbiased_cka(f, g),
        MetricId::Svcca(c) => svcca(f, g, c),
        MetricId::KnnOverlap(k) => mutual_knn_overlap(f, g, k),
        MetricId::KnnEdit(k) => knn_edit_distance(f, g, k),
    }
}

/// Metric values over repeated random subsamples of the objects.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentReport {
    pub metric: MetricId,
    pub values: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of `values`.
    pub std: f64,
    pub n_points: usize,
    pub seed: u64,
}

impl AlignmentReport {
    pub fn from_values(metric: MetricId, values: Vec<f64>, n_points: usize, seed: u64) -> Self {
        let (mean, std) = mean_std(&values);
        Self {
            metric,
            values,
            mean,
            std,
            n_points,
            seed,
        }
    }
}

/// Draws `n_samples` row subsets of size `sample_size` without replacement.
///
/// All subsets are drawn up front, so the draw sequence depends only on the
/// seed. Indices in each subset are sorted to keep ascending-index tie
/// breaking consistent with the full matrix.
pub fn draw_subsamples(n: usize, sample_size: usize, n_samples: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    (0..n_samples)
        .map(|_| {
            let mut idx = rng.sample_without_replacement(n, sample_size);
            idx.sort_unstable();
            idx
        })
        .collect()
}

/// Averages `metric` over `n_samples` uniformly random subsets of
/// `sample_size` objects, applying the same subset to both matrices.
pub fn subsampled_alignment(
    f: &Matrix,
    g: &Matrix,
    metric: MetricId,
    sample_size: usize,
    n_samples: usize,
    rng: &mut Rng,
) -> Result<AlignmentReport, MetricsError> {
    let n = check_rows(f, g)?;
    if sample_size > n {
        return Err(MetricsError::SampleTooLarge { sample_size, n });
    }
    if n_samples == 0 {
        return Err(MetricsError::InvalidParameter("n_samples must be >= 1".into()));
    }
    let seed = rng.seed();
    let subsets = draw_subsamples(n, sample_size, n_samples, rng);
    let values = subsets
        .iter()
        .map(|idx| evaluate(metric, &f.select_rows(idx), &g.select_rows(idx)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AlignmentReport::from_values(metric, values, sample_size, seed))
}
