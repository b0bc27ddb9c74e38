use alloc::vec;
use alloc::vec::Vec;

use super::{init_with_rng, Encoder, SaeConfig, SaeError, SaeParams, SparseRow};
use crate::numerics::{dot, norm, Matrix, Rng};

/// AdamW with decoupled weight decay (the PyTorch formulation):
///
/// ```text
/// θ ← θ (1 - lr·λ)
/// m ← β₁ m + (1 - β₁) g
/// v ← β₂ v + (1 - β₂) g²
/// θ ← θ - lr · m̂ / (√v̂ + ε)
/// ```
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
        }
    }

    /// Advances the shared step counter; call once per optimization step
    /// before updating the parameter groups.
    pub fn begin_step(&mut self) {
        self.t += 1;
    }

    pub fn update(&self, params: &mut [f64], grads: &[f64], state: &mut MomentState) {
        debug_assert!(self.t > 0, "begin_step not called");
        let t = self.t as f64;
        let bc1 = 1.0 - libm::pow(self.beta1, t);
        let bc2 = 1.0 - libm::pow(self.beta2, t);
        let decay = 1.0 - self.learning_rate * self.weight_decay;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(state.m.iter_mut())
            .zip(state.v.iter_mut())
        {
            *p *= decay;
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.learning_rate * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
    }
}

#[derive(Debug, Clone)]
pub struct MomentState {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl MomentState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One logging interval of [`sae_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    /// Mean of `‖x - x̂‖₂` over all batch rows seen in the interval.
    pub mean_residual: f64,
    /// Features with zero activations since the last counter reset.
    pub dead: usize,
    pub resampled: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
    /// Features that never fire when the final model encodes the full dataset.
    pub final_dead: usize,
    /// Mean residual norm of the final model over the full dataset.
    pub final_mean_residual: f64,
}

/// Gradient buffers laid out like [`SaeParams`].
struct Grads {
    encoder: Vec<f64>,
    encoder_bias: Vec<f64>,
    decoder: Vec<f64>,
    decoder_bias: Vec<f64>,
}

impl Grads {
    fn zeros(d_model: usize, d_sparse: usize) -> Self {
        Self {
            encoder: vec![0.0; d_model * d_sparse],
            encoder_bias: vec![0.0; d_sparse],
            decoder: vec![0.0; d_model * d_sparse],
            decoder_bias: vec![0.0; d_model],
        }
    }

    fn clear(&mut self) {
        for buf in [
            &mut self.encoder,
            &mut self.encoder_bias,
            &mut self.decoder,
            &mut self.decoder_bias,
        ] {
            buf.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

/// Trains a top-k SAE with AdamW on reconstruction MSE.
///
/// Each step draws `batch_size` rows uniformly with replacement. When
/// enabled, decoder columns are renormalized after every step, and features
/// with no activations since the last reset are resampled every
/// `resample_period` steps while `t < resample_cutoff_fraction · steps`.
pub fn sae_train(config: &SaeConfig, data: &Matrix) -> Result<(SaeParams, TrainingLog), SaeError> {
    config.validate()?;
    if data.rows() < config.batch_size {
        return Err(SaeError::BatchTooLarge {
            batch: config.batch_size,
            rows: data.rows(),
        });
    }
    let mut rng = Rng::new(config.seed);
    let mut params = init_with_rng(config, data, &mut rng)?;
    let (d_model, d_sparse, k) = (config.d_model, config.d_sparse, config.k);
    let batch = config.batch_size;

    let mut opt = AdamW::new(config.learning_rate, config.weight_decay);
    let mut st_enc = MomentState::new(d_model * d_sparse);
    let mut st_enc_b = MomentState::new(d_sparse);
    let mut st_dec = MomentState::new(d_model * d_sparse);
    let mut st_dec_b = MomentState::new(d_model);
    let mut grads = Grads::zeros(d_model, d_sparse);

    let mut activity = vec![0u64; d_sparse];
    let mut log = TrainingLog::default();
    let mut interval_residual = 0.0;
    let mut interval_rows = 0usize;

    let mut encoder = Encoder::new(&params);
    let mut centered = vec![vec![0.0; d_model]; batch];
    let mut errors = vec![vec![0.0; d_model]; batch];
    let mut codes: Vec<SparseRow> = vec![SparseRow::default(); batch];
    let scale = 2.0 / (batch * d_model) as f64;

    for t in 1..=config.steps {
        // forward
        for r in 0..batch {
            let x = data.row(rng.below(data.rows()));
            codes[r] = encoder.encode(x, k);
            centered[r].copy_from_slice(encoder.centered());
            let e = &mut errors[r];
            params.decode_into(&codes[r], e);
            let mut sq = 0.0;
            for (ei, xi) in e.iter_mut().zip(x) {
                *ei -= xi;
                sq += *ei * *ei;
            }
            interval_residual += libm::sqrt(sq);
        }
        interval_rows += batch;

        // backward, rows accumulated in batch order
        grads.clear();
        for r in 0..batch {
            let e = &errors[r];
            for (g, ei) in grads.decoder_bias.iter_mut().zip(e) {
                *g += scale * ei;
            }
            for &(j, zj) in &codes[r].entries {
                let col = params.decoder_column(j);
                let dz = scale * dot(col, e);
                let gd = &mut grads.decoder[j * d_model..(j + 1) * d_model];
                for (g, ei) in gd.iter_mut().zip(e) {
                    *g += scale * zj * ei;
                }
                grads.encoder_bias[j] += dz;
                let ge = &mut grads.encoder[j * d_model..(j + 1) * d_model];
                for (g, c) in ge.iter_mut().zip(&centered[r]) {
                    *g += dz * c;
                }
                for (g, w) in grads.decoder_bias.iter_mut().zip(params.encoder_weight.row(j)) {
                    *g -= dz * w;
                }
            }
        }

        opt.begin_step();
        opt.update(params.encoder_weight.data_mut(), &grads.encoder, &mut st_enc);
        opt.update(&mut params.encoder_bias, &grads.encoder_bias, &mut st_enc_b);
        opt.update(params.decoder_columns.data_mut(), &grads.decoder, &mut st_dec);
        opt.update(&mut params.decoder_bias, &grads.decoder_bias, &mut st_dec_b);

        if config.decoder_renorm {
            renormalize_decoder(&mut params);
        }

        for z in &codes {
            for j in z.indices() {
                activity[j] += 1;
            }
        }

        let resample_now = config.resample_enabled
            && t % config.resample_period == 0
            && (t as f64) < config.resample_cutoff_fraction * config.steps as f64;
        let log_now = t % config.resample_period == 0 || t == config.steps;
        let dead = activity.iter().filter(|&&c| c == 0).count();
        let mut resampled = 0;
        if resample_now {
            resampled = resample_dead(&mut params, data, &activity, k, &mut rng)?;
            activity.iter_mut().for_each(|c| *c = 0);
        }
        encoder.refresh(&params);
        if log_now {
            log.entries.push(LogEntry {
                step: t,
                mean_residual: interval_residual / interval_rows as f64,
                dead,
                resampled,
            });
            interval_residual = 0.0;
            interval_rows = 0;
        }
    }

    log.final_dead = super::dead_feature_count(&params, data, k)?;
    log.final_mean_residual = super::residual_stats(&params, data, k)?;
    Ok((params, log))
}

const RENORM_EPS: f64 = 1e-8;

fn renormalize_decoder(params: &mut SaeParams) {
    for j in 0..params.d_sparse() {
        let col = params.decoder_columns.row_mut(j);
        let n = norm(col).max(RENORM_EPS);
        col.iter_mut().for_each(|v| *v /= n);
    }
}

/// Reinitializes every feature with zero `activity`.
///
/// Draws one data row (uniformly, with replacement) per dead feature, in
/// ascending feature order. The normalized residual `u = r / (‖r‖ + 1e-8)`
/// of that row becomes the feature's decoder column; its encoder row becomes
/// `0.1 · u` and its encoder bias 0. Live features are left untouched.
/// Returns the number of features resampled.
pub fn resample_dead(
    params: &mut SaeParams,
    data: &Matrix,
    activity: &[u64],
    k: usize,
    rng: &mut Rng,
) -> Result<usize, SaeError> {
    if activity.len() != params.d_sparse() {
        return Err(SaeError::DimMismatch {
            expected: params.d_sparse(),
            got: activity.len(),
        });
    }
    if data.cols() != params.d_model() {
        return Err(SaeError::DimMismatch {
            expected: params.d_model(),
            got: data.cols(),
        });
    }
    let dead: Vec<usize> = (0..activity.len()).filter(|&j| activity[j] == 0).collect();
    if dead.is_empty() {
        return Ok(0);
    }
    if data.rows() == 0 {
        return Err(SaeError::BatchTooLarge { batch: dead.len(), rows: 0 });
    }
    let picks = rng.sample_with_replacement(data.rows(), dead.len());

    // residuals under the current model, before any feature is reset
    let d_model = params.d_model();
    let mut encoder = Encoder::new(params);
    let mut xhat = vec![0.0; d_model];
    let mut directions = Vec::with_capacity(dead.len());
    for &i in &picks {
        let x = data.row(i);
        let z = encoder.encode(x, k);
        params.decode_into(&z, &mut xhat);
        let mut r: Vec<f64> = x.iter().zip(&xhat).map(|(a, b)| a - b).collect();
        let n = norm(&r) + 1e-8;
        r.iter_mut().for_each(|v| *v /= n);
        directions.push(r);
    }

    for (&j, u) in dead.iter().zip(&directions) {
        params.decoder_columns.row_mut(j).copy_from_slice(u);
        for (w, ui) in params.encoder_weight.row_mut(j).iter_mut().zip(u) {
            *w = 0.1 * ui;
        }
        params.encoder_bias[j] = 0.0;
    }
    Ok(dead.len())
}
