//! Top-k sparse autoencoders with dead-neuron resampling.
//!
//! The encoder is `z = topk(relu(W_e (x - b_dec) + b_e))` and the decoder is
//! `x̂ = W_d z + b_dec`. Trained dictionaries live in the decoder columns.

mod codes;
mod train;

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

pub use codes::{filter_features, magnitude_stats, FeatureFilter, MagnitudeStats, SparseCodeMatrix, SparseRow};
pub use train::{resample_dead, sae_train, AdamW, LogEntry, MomentState, TrainingLog};

use crate::numerics::{column_mean, dot, norm, Matrix, NumericsError, Rng};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SaeError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("index {index} out of range for {len} features")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("batch size {batch} exceeds {rows} data rows")]
    BatchTooLarge { batch: usize, rows: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid sparse codes: {0}")]
    InvalidCodes(String),
    #[error("thresholds must satisfy 0 <= lower < upper <= 1 (got lower={lower}, upper={upper})")]
    BadThresholds { lower: f64, upper: f64 },
    #[error("no non-zero entries")]
    AllZero,
    #[error("need at least 2 dictionary columns, got {0}")]
    TooFewColumns(usize),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeConfig {
    pub d_model: usize,
    pub d_sparse: usize,
    pub k: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub resample_period: usize,
    /// Resampling happens only while `t < resample_cutoff_fraction · steps`.
    pub resample_cutoff_fraction: f64,
    /// Turns dead-neuron resampling off entirely (for ablations).
    pub resample_enabled: bool,
    pub decoder_renorm: bool,
    pub seed: u64,
}

impl SaeConfig {
    pub fn new(d_model: usize, d_sparse: usize, k: usize) -> Self {
        Self {
            d_model,
            d_sparse,
            k,
            batch_size: 1024,
            steps: 20_000,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            resample_period: 2500,
            resample_cutoff_fraction: 0.8,
            resample_enabled: true,
            decoder_renorm: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SaeError> {
        let bad = |msg: &str| Err(SaeError::InvalidConfig(msg.into()));
        if self.d_model == 0 || self.d_sparse == 0 || self.k == 0 {
            return bad("d_model, d_sparse and k must be >= 1");
        }
        if self.k > self.d_sparse {
            return bad("k must not exceed d_sparse");
        }
        if self.batch_size == 0 || self.resample_period == 0 {
            return bad("batch_size and resample_period must be >= 1");
        }
        if !(self.resample_cutoff_fraction > 0.0 && self.resample_cutoff_fraction <= 1.0) {
            return bad("resample_cutoff_fraction must lie in (0, 1]");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        Ok(())
    }
}

/// Autoencoder parameters.
///
/// Decoder columns are stored contiguously (one row of `decoder_columns` per
/// feature); [`SaeParams::decoder_weight`] materializes the `d_model x d_sparse`
/// matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeParams {
    encoder_weight: Matrix,
    encoder_bias: Vec<f64>,
    decoder_columns: Matrix,
    decoder_bias: Vec<f64>,
}

impl SaeParams {
    /// `encoder_weight` is `d_sparse x d_model`, `decoder_weight` is `d_model x d_sparse`.
    pub fn from_parts(
        encoder_weight: Matrix,
        encoder_bias: Vec<f64>,
        decoder_weight: Matrix,
        decoder_bias: Vec<f64>,
    ) -> Result<Self, SaeError> {
        let (d_sparse, d_model) = encoder_weight.shape();
        let check = |expected: usize, got: usize| {
            if expected == got {
                Ok(())
            } else {
                Err(SaeError::DimMismatch { expected, got })
            }
        };
        check(d_sparse, encoder_bias.len())?;
        check(d_model, decoder_weight.rows())?;
        check(d_sparse, decoder_weight.cols())?;
        check(d_model, decoder_bias.len())?;
        if encoder_bias.iter().chain(&decoder_bias).any(|v| !v.is_finite()) {
            return Err(SaeError::InvalidConfig("non-finite bias".into()));
        }
        Ok(Self {
            encoder_weight,
            encoder_bias,
            decoder_columns: decoder_weight.transpose(),
            decoder_bias,
        })
    }

    pub fn d_model(&self) -> usize {
        self.encoder_weight.cols()
    }

    pub fn d_sparse(&self) -> usize {
        self.encoder_weight.rows()
    }

    pub fn encoder_weight(&self) -> &Matrix {
        &self.encoder_weight
    }

    pub fn encoder_bias(&self) -> &[f64] {
        &self.encoder_bias
    }

    pub fn decoder_bias(&self) -> &[f64] {
        &self.decoder_bias
    }

    pub fn decoder_weight(&self) -> Matrix {
        self.decoder_columns.transpose()
    }

    pub fn decoder_column(&self, j: usize) -> &[f64] {
        self.decoder_columns.row(j)
    }

    fn decode_into(&self, z: &SparseRow, out: &mut [f64]) {
        out.copy_from_slice(&self.decoder_bias);
        for &(j, v) in &z.entries {
            for (o, w) in out.iter_mut().zip(self.decoder_column(j)) {
                *o += v * w;
            }
        }
    }
}

/// Encoder with its weight matrix stored transposed, so the pre-activation
/// loop is a sequence of contiguous axpy updates.
pub(crate) struct Encoder {
    weight_t: Vec<f64>,
    bias: Vec<f64>,
    offset: Vec<f64>,
    centered: Vec<f64>,
    pre: Vec<f64>,
}

impl Encoder {
    pub(crate) fn new(params: &SaeParams) -> Self {
        let (d_model, d_sparse) = (params.d_model(), params.d_sparse());
        let mut enc = Self {
            weight_t: vec![0.0; d_model * d_sparse],
            bias: vec![0.0; d_sparse],
            offset: vec![0.0; d_model],
            centered: vec![0.0; d_model],
            pre: vec![0.0; d_sparse],
        };
        enc.refresh(params);
        enc
    }

    /// Re-reads the parameters after they changed.
    pub(crate) fn refresh(&mut self, params: &SaeParams) {
        let d_sparse = params.d_sparse();
        for (j, row) in params.encoder_weight.row_iter().enumerate() {
            for (i, &w) in row.iter().enumerate() {
                self.weight_t[i * d_sparse + j] = w;
            }
        }
        self.bias.copy_from_slice(&params.encoder_bias);
        self.offset.copy_from_slice(&params.decoder_bias);
    }

    /// Top-`k` code of `x`; the centered input stays readable afterwards.
    pub(crate) fn encode(&mut self, x: &[f64], k: usize) -> SparseRow {
        let d_sparse = self.bias.len();
        for ((c, xi), b) in self.centered.iter_mut().zip(x).zip(&self.offset) {
            *c = xi - b;
        }
        self.pre.copy_from_slice(&self.bias);
        for (&c, col) in self.centered.iter().zip(self.weight_t.chunks_exact(d_sparse)) {
            for (p, w) in self.pre.iter_mut().zip(col) {
                *p += c * w;
            }
        }
        top_k_positive(&self.pre, k)
    }

    pub(crate) fn centered(&self) -> &[f64] {
        &self.centered
    }
}

/// Keeps the `k` largest positive entries (ties: ascending index).
pub(crate) fn top_k_positive(values: &[f64], k: usize) -> SparseRow {
    let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
    if k == 0 {
        return SparseRow::new(best);
    }
    for (j, &v) in values.iter().enumerate() {
        // NaN fails this test as well
        if !(v > 0.0) || (best.len() == k && v <= best[k - 1].1) {
            continue;
        }
        let at = best.iter().position(|e| e.1 < v).unwrap_or(best.len());
        best.insert(at, (j, v));
        best.truncate(k);
    }
    SparseRow::new(best)
}

/// Decoder Kaiming-uniform (`±√(6 / d_sparse)`), encoder tied to the decoder
/// transpose, zero encoder bias, decoder bias at the data mean.
pub fn sae_init(config: &SaeConfig, data: &Matrix) -> Result<SaeParams, SaeError> {
    let mut rng = Rng::new(config.seed);
    init_with_rng(config, data, &mut rng)
}

pub(crate) fn init_with_rng(config: &SaeConfig, data: &Matrix, rng: &mut Rng) -> Result<SaeParams, SaeError> {
    config.validate()?;
    if data.cols() != config.d_model {
        return Err(SaeError::DimMismatch {
            expected: config.d_model,
            got: data.cols(),
        });
    }
    let (d_model, d_sparse) = (config.d_model, config.d_sparse);
    let bound = libm::sqrt(6.0 / d_sparse as f64);
    let decoder_weight = Matrix::from_fn(d_model, d_sparse, |_, _| rng.uniform_range(-bound, bound))?;
    let decoder_columns = decoder_weight.transpose();
    Ok(SaeParams {
        encoder_weight: decoder_columns.clone(),
        encoder_bias: vec![0.0; d_sparse],
        decoder_columns,
        decoder_bias: column_mean(data)?,
    })
}

/// Top-k sparse code of one input.
pub fn encode_topk(params: &SaeParams, x: &[f64], k: usize) -> Result<SparseRow, SaeError> {
    if x.len() != params.d_model() {
        return Err(SaeError::DimMismatch {
            expected: params.d_model(),
            got: x.len(),
        });
    }
    Ok(Encoder::new(params).encode(x, k))
}

pub fn encode_matrix(params: &SaeParams, data: &Matrix, k: usize) -> Result<SparseCodeMatrix, SaeError> {
    if data.cols() != params.d_model() {
        return Err(SaeError::DimMismatch {
            expected: params.d_model(),
            got: data.cols(),
        });
    }
    let mut enc = Encoder::new(params);
    let rows: Vec<SparseRow> = data.row_iter().map(|x| enc.encode(x, k)).collect();
    SparseCodeMatrix::from_rows(params.d_sparse(), &rows)
}

pub fn decode(params: &SaeParams, z: &SparseRow) -> Result<Vec<f64>, SaeError> {
    if let Some(j) = z.indices().find(|&j| j >= params.d_sparse()) {
        return Err(SaeError::IndexOutOfRange {
            index: j,
            len: params.d_sparse(),
        });
    }
    let mut out = vec![0.0; params.d_model()];
    params.decode_into(z, &mut out);
    Ok(out)
}

/// Mean over rows of `‖x - x̂‖₂` under top-`k` encoding.
pub fn residual_stats(params: &SaeParams, data: &Matrix, k: usize) -> Result<f64, SaeError> {
    if data.cols() != params.d_model() {
        return Err(SaeError::DimMismatch {
            expected: params.d_model(),
            got: data.cols(),
        });
    }
    if data.rows() == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut xhat = vec![0.0; params.d_model()];
    let mut enc = Encoder::new(params);
    for x in data.row_iter() {
        let z = enc.encode(x, k);
        params.decode_into(&z, &mut xhat);
        let r: f64 = x.iter().zip(&xhat).map(|(a, b)| (a - b) * (a - b)).sum();
        total += libm::sqrt(r);
    }
    Ok(total / data.rows() as f64)
}

/// Number of features that never activate when encoding `data`.
pub fn dead_feature_count(params: &SaeParams, data: &Matrix, k: usize) -> Result<usize, SaeError> {
    let codes = encode_matrix(params, data, k)?;
    Ok(codes.column_counts().iter().filter(|&&c| c == 0).count())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Incoherence {
    pub mean_abs: f64,
    pub max_abs: f64,
}

/// Mean and max of `|⟨A_i, A_j⟩|` over column pairs `i < j` of a `d x m`
/// dictionary, after normalizing columns.
pub fn incoherence_stats(dictionary: &Matrix) -> Result<Incoherence, SaeError> {
    let m = dictionary.cols();
    if m < 2 {
        return Err(SaeError::TooFewColumns(m));
    }
    let atoms = crate::numerics::unit_normalize_rows(&dictionary.transpose())?;
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    for i in 0..m {
        let a = atoms.row(i);
        for j in i + 1..m {
            let v = dot(a, atoms.row(j)).abs();
            sum += v;
            max = max.max(v);
        }
    }
    let pairs = (m * (m - 1) / 2) as f64;
    Ok(Incoherence {
        mean_abs: sum / pairs,
        max_abs: max,
    })
}

/// Euclidean norms of the decoder columns.
pub fn decoder_column_norms(params: &SaeParams) -> Vec<f64> {
    params.decoder_columns.row_iter().map(norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params_with(encoder: Matrix, enc_bias: Vec<f64>, decoder: Matrix, dec_bias: Vec<f64>) -> SaeParams {
        SaeParams::from_parts(encoder, enc_bias, decoder, dec_bias).unwrap()
    }

    /// Identity encoder on 3 features with zero biases.
    fn identity_params() -> SaeParams {
        params_with(Matrix::identity(3), vec![0.0; 3], Matrix::identity(3), vec![0.0; 3])
    }

    #[test]
    fn init_examples() {
        let data = Matrix::from_rows(&[[0.5, -1.0, 2.0]; 4]).unwrap();
        let mut cfg = SaeConfig::new(3, 8, 2);
        cfg.seed = 9;
        let p = sae_init(&cfg, &data).unwrap();
        assert_eq!(p.decoder_bias(), &[0.5, -1.0, 2.0]);
        assert_eq!(p, sae_init(&cfg, &data).unwrap());
        let bound = libm::sqrt(6.0 / 8.0);
        assert!(p.decoder_weight().as_slice().iter().all(|v| v.abs() <= bound));
        assert_eq!(p.encoder_weight(), &p.decoder_weight().transpose());

        let wrong = Matrix::zeros(4, 5);
        assert_eq!(
            sae_init(&cfg, &wrong),
            Err(SaeError::DimMismatch { expected: 3, got: 5 })
        );
    }

    #[test]
    fn topk_examples() {
        let p = identity_params();
        let z = encode_topk(&p, &[3.0, 1.0, 2.0], 2).unwrap();
        assert_eq!(z.indices().collect::<Vec<_>>(), vec![0, 2]);
        let z = encode_topk(&p, &[-3.0, 0.0, -2.0], 2).unwrap();
        assert!(z.is_empty());
        let z = encode_topk(&p, &[2.0, 2.0, 1.0], 1).unwrap();
        assert_eq!(z.entries, vec![(0, 2.0)]);
        // fewer positives than k
        let z = encode_topk(&p, &[-1.0, 4.0, -2.0], 2).unwrap();
        assert_eq!(z.entries, vec![(1, 4.0)]);
        assert!(matches!(encode_topk(&p, &[1.0], 1), Err(SaeError::DimMismatch { .. })));
    }

    #[test]
    fn topk_is_idempotent() {
        let mut rng = Rng::new(12);
        for _ in 0..50 {
            let v: Vec<f64> = rng.normal_vec(20);
            let z = top_k_positive(&v, 5);
            let again = top_k_positive(&z.to_dense(20), 5);
            assert_eq!(z, again);
        }
    }

    #[test]
    fn decode_examples() {
        let mut rng = Rng::new(3);
        let dec = Matrix::from_fn(4, 6, |_, _| rng.normal()).unwrap();
        let bias = vec![0.1, 0.2, 0.3, 0.4];
        let p = params_with(dec.transpose(), vec![0.0; 6], dec.clone(), bias.clone());

        assert_eq!(decode(&p, &SparseRow::default()).unwrap(), bias);

        let unit = decode(&p, &SparseRow::new(vec![(2, 1.0)])).unwrap();
        for i in 0..4 {
            assert!((unit[i] - (dec.get(i, 2) + bias[i])).abs() < 1e-15);
        }

        let z = SparseRow::new(vec![(0, 0.7), (3, 1.3), (5, 0.2)]);
        let dense = dec.mat_vec(&z.to_dense(6)).unwrap();
        let got = decode(&p, &z).unwrap();
        for i in 0..4 {
            assert!((got[i] - (dense[i] + bias[i])).abs() < 1e-9);
        }

        assert!(matches!(
            decode(&p, &SparseRow::new(vec![(6, 1.0)])),
            Err(SaeError::IndexOutOfRange { index: 6, len: 6 })
        ));
    }

    #[test]
    fn residual_examples() {
        // Perfect reconstruction of one-hot rows by the identity SAE.
        let p = identity_params();
        let data = Matrix::from_rows(&[[1.0, 0.0, 0.0], [0.0, 0.5, 0.0]]).unwrap();
        assert_eq!(residual_stats(&p, &data, 1).unwrap(), 0.0);

        // Encoder never fires, so x̂ = b_dec = x + e_0 for every row.
        let v = [0.3, -0.2, 0.9];
        let data = Matrix::from_rows(&[v, v, v]).unwrap();
        let p = params_with(
            Matrix::zeros(3, 3),
            vec![-1.0; 3],
            Matrix::identity(3),
            vec![v[0] + 1.0, v[1], v[2]],
        );
        assert!((residual_stats(&p, &data, 2).unwrap() - 1.0).abs() < 1e-12);
        assert!(matches!(
            residual_stats(&p, &Matrix::zeros(1, 2), 1),
            Err(SaeError::DimMismatch { .. })
        ));
    }

    #[test]
    fn incoherence_examples() {
        let inc = incoherence_stats(&Matrix::identity(4)).unwrap();
        assert_eq!((inc.mean_abs, inc.max_abs), (0.0, 0.0));

        let dup = Matrix::from_rows(&[[1.0, 1.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
        assert!((incoherence_stats(&dup).unwrap().max_abs - 1.0).abs() < 1e-15);

        assert_eq!(
            incoherence_stats(&Matrix::zeros(3, 1)),
            Err(SaeError::TooFewColumns(1))
        );
    }
}
