//! Synthetic sparse-signal-plus-noise generator and the bound and
//! proposition checks that run on it.
//!
//! A representation is `f = A (Z ⊙ M) + η` with unit-norm atoms `A`, a
//! `k`-sparse support `Z`, magnitudes `M ∈ [φ/√k, Φ/√k]` on the support and
//! bounded noise `η`. Every generated row has unit norm exactly, so the
//! noise that enters all bounds is the *effective* term that closes the
//! identity after normalization.

mod dictionary;

pub use dictionary::{generate_dictionary, Dictionary, DictionaryKind};

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::numerics::{dot, norm, Matrix, NumericsError, Rng};
use crate::sae::{SparseCodeMatrix, SparseRow};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatModelError {
    #[error("infeasible request: {0}")]
    Infeasible(String),
    #[error("signal plus noise has norm below 1e-9")]
    DegenerateSignal,
    #[error("row index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = core::result::Result<T, StatModelError>;

/// How the normalization of `s + η_raw` is reconciled with the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseFolding {
    /// Divide the magnitudes by the normalizer as well, so the effective
    /// noise is `η_raw / ‖s + η_raw‖`. Magnitudes are pulled toward a point
    /// whose rescaled values stay in the bracket; rows where that fails
    /// repeatedly fall back to [`NoiseFolding::Residual`].
    Rescale,
    /// Keep the drawn magnitudes and record `η_eff = f − s`.
    Residual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub d: usize,
    pub m: usize,
    pub k: usize,
    pub phi: f64,
    pub phi_upper: f64,
    pub eps_noise_raw: f64,
    /// Pairs drawn for every entry of `overlap_schedule`.
    pub n_pairs: usize,
    pub overlap_schedule: Vec<usize>,
    pub seed: u64,
    pub dictionary: DictionaryKind,
    pub folding: NoiseFolding,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            d: 64,
            m: 256,
            k: 4,
            phi: 0.8,
            phi_upper: 1.2,
            eps_noise_raw: 0.02,
            n_pairs: 1000,
            overlap_schedule: vec![0, 1, 2, 3, 4],
            seed: 0,
            dictionary: DictionaryKind::MutuallyUnbiased,
            folding: NoiseFolding::Rescale,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(StatModelError::InvalidConfig(msg.into()));
        if !(self.phi > 0.0 && self.phi <= self.phi_upper && self.phi_upper.is_finite()) {
            return bad("need 0 < phi <= Phi");
        }
        if self.k == 0 || self.k > self.m {
            return bad("need 1 <= k <= m");
        }
        if self.d == 0 {
            return bad("need d >= 1");
        }
        if !(self.eps_noise_raw >= 0.0 && self.eps_noise_raw.is_finite()) {
            return bad("eps_noise_raw must be a finite non-negative number");
        }
        if self.overlap_schedule.iter().any(|&t| t > self.k) {
            return bad("every overlap must be at most k");
        }
        Ok(())
    }

    /// Lower and upper magnitude per active coordinate.
    pub fn magnitude_bracket(&self) -> (f64, f64) {
        let r = libm::sqrt(self.k as f64);
        (self.phi / r, self.phi_upper / r)
    }
}

/// Two `k`-sparse supports sharing exactly `t` indices, each sorted.
pub fn sample_support_pair(m: usize, k: usize, t: usize, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if t > k || 2 * k - t > m {
        return Err(StatModelError::Infeasible(alloc::format!(
            "cannot place two supports of size {k} sharing {t} indices among {m}"
        )));
    }
    let idx = rng.sample_without_replacement(m, 2 * k - t);
    let (shared, rest) = idx.split_at(t);
    let (only1, only2) = rest.split_at(k - t);
    let mut z1: Vec<usize> = shared.iter().chain(only1).copied().collect();
    let mut z2: Vec<usize> = shared.iter().chain(only2).copied().collect();
    z1.sort_unstable();
    z2.sort_unstable();
    Ok((z1, z2))
}

/// One generated representation with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticRow {
    /// Sorted active atom indices.
    pub support: Vec<usize>,
    /// Magnitudes aligned with `support`.
    pub magnitudes: Vec<f64>,
    pub representation: Vec<f64>,
    pub noise: Vec<f64>,
    /// Whether the row needed the residual fallback under `Rescale`.
    pub residual_folded: bool,
}

const RESCALE_ATTEMPTS: usize = 16;
const BRACKET_TOL: f64 = 1e-12;

fn noise_in_ball(d: usize, radius: f64, rng: &mut Rng) -> Vec<f64> {
    let mut dir = rng.normal_vec(d);
    let mut n = norm(&dir);
    while n < 1e-12 {
        dir = rng.normal_vec(d);
        n = norm(&dir);
    }
    let r = radius * libm::pow(rng.uniform(), 1.0 / d as f64);
    dir.iter().map(|v| v * r / n).collect()
}

fn combine(dict: &Dictionary, support: &[usize], magnitudes: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0; dict.dim()];
    for (&a, &w) in support.iter().zip(magnitudes) {
        for (o, v) in s.iter_mut().zip(dict.atom(a)) {
            *o += w * v;
        }
    }
    s
}

/// Draws magnitudes and noise for one support and returns a unit-norm row.
pub fn synthesize_row(
    config: &SyntheticConfig,
    dict: &Dictionary,
    support: &[usize],
    rng: &mut Rng,
) -> Result<SyntheticRow> {
    if dict.dim() != config.d || dict.size() != config.m {
        return Err(StatModelError::InvalidConfig(alloc::format!(
            "dictionary is {}x{}, config expects {}x{}",
            dict.dim(),
            dict.size(),
            config.d,
            config.m
        )));
    }
    if let Some(&bad) = support.iter().find(|&&a| a >= config.m) {
        return Err(StatModelError::IndexOutOfRange { index: bad, len: config.m });
    }
    let (lo, hi) = config.magnitude_bracket();
    let attempts = match config.folding {
        NoiseFolding::Rescale => RESCALE_ATTEMPTS,
        NoiseFolding::Residual => 1,
    };
    let mut best: Option<SyntheticRow> = None;
    for _ in 0..attempts {
        let magnitudes: Vec<f64> = support.iter().map(|_| rng.uniform_range(lo, hi)).collect();
        let raw = noise_in_ball(config.d, config.eps_noise_raw, rng);
        let row = match config.folding {
            NoiseFolding::Rescale => match rescale_into_bracket(dict, support, magnitudes, &raw, lo, hi)? {
                Ok(row) => return Ok(row),
                Err(row) => row,
            },
            NoiseFolding::Residual => residual_row(dict, support, magnitudes, &raw, false)?,
        };
        if best.as_ref().is_none_or(|b| norm(&row.noise) < norm(&b.noise)) {
            best = Some(row);
        }
    }
    Ok(best.expect("at least one attempt"))
}

/// Keeps `magnitudes` as drawn and records `η_eff = f − s`.
fn residual_row(
    dict: &Dictionary,
    support: &[usize],
    magnitudes: Vec<f64>,
    raw: &[f64],
    folded: bool,
) -> Result<SyntheticRow> {
    let s = combine(dict, support, &magnitudes);
    let v: Vec<f64> = s.iter().zip(raw).map(|(a, b)| a + b).collect();
    let c = norm(&v);
    if c < 1e-9 {
        return Err(StatModelError::DegenerateSignal);
    }
    let f: Vec<f64> = v.iter().map(|x| x / c).collect();
    let noise = f.iter().zip(&s).map(|(a, b)| a - b).collect();
    Ok(SyntheticRow {
        support: support.to_vec(),
        magnitudes,
        representation: f,
        noise,
        residual_folded: folded,
    })
}

const PROJECTION_STEPS: usize = 64;

/// Looks for magnitudes `M` in the bracket whose row `(A M + η)/c` keeps
/// `M/c` in the bracket too, by iterating `M ← clamp(M / c)`. When no such
/// point is reached the last iterate is returned as a residual-folded row.
fn rescale_into_bracket(
    dict: &Dictionary,
    support: &[usize],
    mut magnitudes: Vec<f64>,
    raw: &[f64],
    lo: f64,
    hi: f64,
) -> Result<core::result::Result<SyntheticRow, SyntheticRow>> {
    for _ in 0..PROJECTION_STEPS {
        let s = combine(dict, support, &magnitudes);
        let v: Vec<f64> = s.iter().zip(raw).map(|(a, b)| a + b).collect();
        let c = norm(&v);
        if c < 1e-9 {
            return Err(StatModelError::DegenerateSignal);
        }
        let scaled: Vec<f64> = magnitudes.iter().map(|w| w / c).collect();
        let inside = scaled
            .iter()
            .all(|&w| w >= lo * (1.0 - BRACKET_TOL) && w <= hi * (1.0 + BRACKET_TOL));
        if inside {
            let scaled: Vec<f64> = scaled.iter().map(|w| w.clamp(lo, hi)).collect();
            let f: Vec<f64> = v.iter().map(|x| x / c).collect();
            let s = combine(dict, support, &scaled);
            let noise = f.iter().zip(&s).map(|(a, b)| a - b).collect();
            return Ok(Ok(SyntheticRow {
                support: support.to_vec(),
                magnitudes: scaled,
                representation: f,
                noise,
                residual_folded: false,
            }));
        }
        magnitudes = scaled.iter().map(|w| w.clamp(lo, hi)).collect();
    }
    residual_row(dict, support, magnitudes, raw, true).map(Err)
}

pub fn synthesize_pair(
    config: &SyntheticConfig,
    dict: &Dictionary,
    z1: &[usize],
    z2: &[usize],
    rng: &mut Rng,
) -> Result<[SyntheticRow; 2]> {
    Ok([synthesize_row(config, dict, z1, rng)?, synthesize_row(config, dict, z2, rng)?])
}

/// A batch of generated pairs. Rows `2p` and `2p + 1` form pair `p`.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub config: SyntheticConfig,
    pub dictionary: Dictionary,
    pub rows: Vec<SyntheticRow>,
    /// Designed support overlap of each pair.
    pub pair_overlaps: Vec<usize>,
    pub eps_noise_effective: f64,
}

impl SyntheticInstance {
    pub fn from_rows(
        config: SyntheticConfig,
        dictionary: Dictionary,
        rows: Vec<SyntheticRow>,
        pair_overlaps: Vec<usize>,
    ) -> Self {
        let eps_noise_effective = rows.iter().map(|r| norm(&r.noise)).fold(0.0, f64::max);
        Self {
            config,
            dictionary,
            rows,
            pair_overlaps,
            eps_noise_effective,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_pairs(&self) -> usize {
        self.rows.len() / 2
    }

    pub fn eps_dict_max(&self) -> f64 {
        self.dictionary.eps_dict_max
    }

    pub fn eps_dict_mean(&self) -> f64 {
        self.dictionary.eps_dict_mean
    }

    pub fn representations(&self) -> Matrix {
        let d = self.dictionary.dim();
        let data = self.rows.iter().flat_map(|r| r.representation.iter().copied()).collect();
        Matrix::from_vec(self.rows.len(), d, data).expect("finite by construction")
    }

    pub fn noise_effective(&self) -> Matrix {
        let d = self.dictionary.dim();
        let data = self.rows.iter().flat_map(|r| r.noise.iter().copied()).collect();
        Matrix::from_vec(self.rows.len(), d, data).expect("finite by construction")
    }

    /// `Z ⊙ M` as sparse codes over the `m` atoms.
    pub fn codes(&self) -> SparseCodeMatrix {
        let rows: Vec<SparseRow> = self
            .rows
            .iter()
            .map(|r| SparseRow::new(r.support.iter().copied().zip(r.magnitudes.iter().copied()).collect()))
            .collect();
        SparseCodeMatrix::from_rows(self.dictionary.size(), &rows).expect("supports are in range")
    }

    pub fn residual_folded_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.residual_folded).count()
    }
}

/// Draws the dictionary and then `n_pairs` pairs for every scheduled overlap.
pub fn generate_instance(config: &SyntheticConfig) -> Result<SyntheticInstance> {
    config.validate()?;
    let mut rng = Rng::new(config.seed);
    let dictionary = generate_dictionary(config.d, config.m, config.dictionary, &mut rng)?;
    let total = config.n_pairs * config.overlap_schedule.len();
    let mut rows = Vec::with_capacity(2 * total);
    let mut overlaps = Vec::with_capacity(total);
    for &t in &config.overlap_schedule {
        for _ in 0..config.n_pairs {
            let (z1, z2) = sample_support_pair(config.m, config.k, t, &mut rng)?;
            let [a, b] = synthesize_pair(config, &dictionary, &z1, &z2, &mut rng)?;
            rows.push(a);
            rows.push(b);
            overlaps.push(t);
        }
    }
    Ok(SyntheticInstance::from_rows(config.clone(), dictionary, rows, overlaps))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition {
    pub signal: f64,
    pub bias: f64,
    pub noise: f64,
    pub inner_product: f64,
    pub support_overlap: usize,
}

impl Decomposition {
    pub fn additivity_error(&self) -> f64 {
        (self.signal + self.bias + self.noise - self.inner_product).abs()
    }
}

pub fn decompose_inner_product(instance: &SyntheticInstance, i: usize, j: usize) -> Result<Decomposition> {
    let len = instance.len();
    for index in [i, j] {
        if index >= len {
            return Err(StatModelError::IndexOutOfRange { index, len });
        }
    }
    if i == j {
        return Err(StatModelError::InvalidConfig("decomposition needs two distinct rows".into()));
    }
    let (ri, rj) = (&instance.rows[i], &instance.rows[j]);
    let dict = &instance.dictionary;
    let mut signal = 0.0;
    let mut bias = 0.0;
    let mut shared = 0;
    for (&a, &ma) in ri.support.iter().zip(&ri.magnitudes) {
        for (&b, &mb) in rj.support.iter().zip(&rj.magnitudes) {
            if a == b {
                signal += ma * mb;
                shared += 1;
            } else {
                bias += ma * mb * dot(dict.atom(a), dict.atom(b));
            }
        }
    }
    let noise = dot(&ri.representation, &rj.noise) + dot(&rj.representation, &ri.noise) - dot(&ri.noise, &rj.noise);
    Ok(Decomposition {
        signal,
        bias,
        noise,
        inner_product: dot(&ri.representation, &rj.representation),
        support_overlap: shared,
    })
}

/// The constants that the three component bounds are stated in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConstants {
    pub k: usize,
    pub phi: f64,
    pub phi_upper: f64,
    pub eps_dict: f64,
    pub eps_noise: f64,
}

impl ModelConstants {
    pub fn of(instance: &SyntheticInstance) -> Self {
        Self {
            k: instance.config.k,
            phi: instance.config.phi,
            phi_upper: instance.config.phi_upper,
            eps_dict: instance.eps_dict_max(),
            eps_noise: instance.eps_noise_effective,
        }
    }

    /// `k ε_dict Φ² + 3 ε_noise`, the combined worst-case nuisance.
    pub fn nuisance(&self) -> f64 {
        self.k as f64 * self.eps_dict * self.phi_upper * self.phi_upper + 3.0 * self.eps_noise
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    SignalLower,
    SignalUpper,
    Bias,
    Noise,
}

impl BoundKind {
    pub fn name(self) -> &'static str {
        match self {
            BoundKind::SignalLower => "signal_lower",
            BoundKind::SignalUpper => "signal_upper",
            BoundKind::Bias => "bias",
            BoundKind::Noise => "noise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundViolation {
    pub kind: BoundKind,
    pub value: f64,
    pub bound: f64,
    /// How far past the bound the value is (positive).
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub signal_lower: f64,
    pub signal_upper: f64,
    pub bias_bound: f64,
    pub noise_bound: f64,
    /// `bound − |value|` for bias and noise; negative means violated.
    pub bias_slack: f64,
    pub noise_slack: f64,
    pub violations: Vec<BoundViolation>,
}

impl BoundReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Absolute tolerance used when comparing against each bound.
pub const BOUND_TOL: f64 = 1e-12;

pub fn check_bounds(dec: &Decomposition, c: &ModelConstants) -> BoundReport {
    let k = c.k as f64;
    let t = dec.support_overlap as f64;
    let signal_lower = c.phi * c.phi * t / k;
    let signal_upper = c.phi_upper * c.phi_upper * t / k;
    let bias_bound = k * c.eps_dict * c.phi_upper * c.phi_upper;
    let noise_bound = 3.0 * c.eps_noise;
    let mut violations = Vec::new();
    let mut flag = |kind, value: f64, bound: f64, excess: f64| {
        if excess > BOUND_TOL {
            violations.push(BoundViolation { kind, value, bound, excess });
        }
    };
    flag(BoundKind::SignalLower, dec.signal, signal_lower, signal_lower - dec.signal);
    flag(BoundKind::SignalUpper, dec.signal, signal_upper, dec.signal - signal_upper);
    flag(BoundKind::Bias, dec.bias, bias_bound, dec.bias.abs() - bias_bound);
    flag(BoundKind::Noise, dec.noise, noise_bound, dec.noise.abs() - noise_bound);
    BoundReport {
        signal_lower,
        signal_upper,
        bias_bound,
        noise_bound,
        bias_slack: bias_bound - dec.bias.abs(),
        noise_slack: noise_bound - dec.noise.abs(),
        violations,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Report {
    pub gamma: f64,
    /// `k ε_dict Φ² + 3 ε_noise`.
    pub nuisance: f64,
    pub precondition_met: bool,
    pub pairs: usize,
    /// Overlap needed to trigger the signal-to-alignment direction.
    pub part1_overlap_threshold: f64,
    /// Inner product needed to trigger the alignment-to-signal direction.
    pub part2_inner_threshold: f64,
    pub part1_triggered: usize,
    pub part1_failures: usize,
    pub part2_triggered: usize,
    pub part2_failures: usize,
}

impl Prop1Report {
    pub fn passed(&self) -> bool {
        self.precondition_met && self.part1_failures == 0 && self.part2_failures == 0
    }
}

/// Checks both implications on every pair `(2p, 2p + 1)` with explicit constants.
pub fn verify_prop1_with(instance: &SyntheticInstance, c: &ModelConstants, gamma: f64) -> Result<Prop1Report> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(StatModelError::InvalidConfig("gamma must be positive".into()));
    }
    let k = c.k as f64;
    let nuisance = c.nuisance();
    let part1_overlap_threshold = 2.0 * k / (c.phi * c.phi) * (nuisance + gamma / 2.0);
    let part2_inner_threshold = nuisance + gamma;
    let part2_overlap_needed = k * gamma / (c.phi_upper * c.phi_upper);
    let mut report = Prop1Report {
        gamma,
        nuisance,
        precondition_met: nuisance <= 1.0,
        pairs: instance.n_pairs(),
        part1_overlap_threshold,
        part2_inner_threshold,
        part1_triggered: 0,
        part1_failures: 0,
        part2_triggered: 0,
        part2_failures: 0,
    };
    for p in 0..instance.n_pairs() {
        let dec = decompose_inner_product(instance, 2 * p, 2 * p + 1)?;
        let overlap = dec.support_overlap as f64;
        if overlap >= part1_overlap_threshold {
            report.part1_triggered += 1;
            if dec.inner_product < part2_inner_threshold - BOUND_TOL {
                report.part1_failures += 1;
            }
        }
        if dec.inner_product >= part2_inner_threshold {
            report.part2_triggered += 1;
            if overlap < part2_overlap_needed - BOUND_TOL {
                report.part2_failures += 1;
            }
        }
    }
    Ok(report)
}

pub fn verify_prop1(instance: &SyntheticInstance, gamma: f64) -> Result<Prop1Report> {
    verify_prop1_with(instance, &ModelConstants::of(instance), gamma)
}

/// Summary of a full bound and proposition run over one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificationReport {
    pub constants: ModelConstants,
    pub eps_dict_mean: f64,
    pub pairs: usize,
    pub residual_folded_rows: usize,
    pub max_additivity_error: f64,
    pub max_row_norm_error: f64,
    pub bound_violations: Vec<(usize, BoundViolation)>,
    pub prop1: Vec<Prop1Report>,
}

/// Additivity tolerance on `signal + bias + noise = ⟨f_i, f_j⟩`.
pub const ADDITIVITY_TOL: f64 = 1e-9;

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.bound_violations.is_empty()
            && self.max_additivity_error <= ADDITIVITY_TOL
            && self.max_row_norm_error <= ADDITIVITY_TOL
            && self.prop1.iter().all(Prop1Report::passed)
    }
}

pub fn certify_instance(instance: &SyntheticInstance, gammas: &[f64]) -> Result<CertificationReport> {
    let constants = ModelConstants::of(instance);
    let mut max_additivity_error: f64 = 0.0;
    let mut bound_violations = Vec::new();
    for p in 0..instance.n_pairs() {
        let dec = decompose_inner_product(instance, 2 * p, 2 * p + 1)?;
        max_additivity_error = max_additivity_error.max(dec.additivity_error());
        bound_violations.extend(check_bounds(&dec, &constants).violations.into_iter().map(|v| (p, v)));
    }
    let max_row_norm_error = instance
        .rows
        .iter()
        .map(|r| (norm(&r.representation) - 1.0).abs())
        .fold(0.0, f64::max);
    let prop1 = gammas
        .iter()
        .map(|&g| verify_prop1_with(instance, &constants, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(CertificationReport {
        constants,
        eps_dict_mean: instance.eps_dict_mean(),
        pairs: instance.n_pairs(),
        residual_folded_rows: instance.residual_folded_rows(),
        max_additivity_error,
        max_row_norm_error,
        bound_violations,
        prop1,
    })
}

pub fn certify(config: &SyntheticConfig, gammas: &[f64]) -> Result<CertificationReport> {
    certify_instance(&generate_instance(config)?, gammas)
}
