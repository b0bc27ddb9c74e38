//! One function per subcommand. Each takes a serializable options struct
//! (which is also what the report's config hash covers) and writes its
//! reports through a [`ReportWriter`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use repalign_core::analysis::{build_spec_features, debias, ridge_fit, sliding_window_trend};
use repalign_core::matching::{permutation_correlation, permutation_null};
use repalign_core::metrics::{draw_subsamples, evaluate, MetricId};
use repalign_core::numerics::{mean_std, Matrix, Rng};
use repalign_core::sae::{
    dead_feature_count, encode_matrix, filter_features, incoherence_stats, magnitude_stats, residual_stats, sae_train,
    SaeConfig, SparseCodeMatrix,
};
use repalign_core::statmodel::{certify, generate_dictionary, DictionaryKind, NoiseFolding, SyntheticConfig};

use crate::error::{Context, LabError, Result};
use crate::formats::{load_embeddings, read_frequency_table, read_row_subset, read_sae, write_sae, SaeArtifact};
use crate::manifest::{Manifest, ModelEntry};
use crate::report::{num, Reproducibility, ReportWriter, Table};

/// What a finished subcommand reports back to the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// `Some(false)` when a certification ran and failed.
    pub certified: Option<bool>,
}

impl Outcome {
    fn done(out: &ReportWriter) -> Self {
        Self { files: out.written().to_vec(), certified: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Raw,
    Debiased,
    Sparse,
}

/// Activation-frequency window applied to SAE codes before comparing them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeatureWindow {
    pub upper: f64,
    pub lower: f64,
}

impl Default for FeatureWindow {
    fn default() -> Self {
        Self { upper: 0.1, lower: 0.00001 }
    }
}

fn pairs(n: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
}

fn parse_metrics(names: &[String], fallback: MetricId) -> Result<Vec<MetricId>> {
    if names.is_empty() {
        return Ok(vec![fallback]);
    }
    names
        .iter()
        .map(|s| s.parse::<MetricId>().ctx(|| format!("--metric {s}")))
        .collect()
}

/// Manifest plus the row subset shared by every model.
struct Inputs {
    manifest: Manifest,
    subset: Option<Vec<usize>>,
}

impl Inputs {
    fn load(path: &Path) -> Result<Self> {
        let manifest = Manifest::load(path)?;
        let subset = manifest.row_subset_path.as_deref().map(read_row_subset).transpose()?;
        Ok(Self { manifest, subset })
    }

    fn models(&self, only: &[String]) -> Result<Vec<&ModelEntry>> {
        if only.is_empty() {
            return Ok(self.manifest.models.iter().collect());
        }
        only.iter()
            .map(|name| {
                self.manifest
                    .models
                    .iter()
                    .find(|m| &m.name == name)
                    .ok_or_else(|| LabError::Invalid(format!("--model {name}: not in the manifest")))
            })
            .collect()
    }

    fn embeddings(&self, model: &ModelEntry) -> Result<Matrix> {
        let loaded = load_embeddings(&model.embedding_path)?;
        if loaded.renormalized_rows > 0 {
            eprintln!(
                "warning: {}: {} rows were not unit norm on disk and were renormalized",
                model.embedding_path.display(),
                loaded.renormalized_rows
            );
        }
        match &self.subset {
            None => Ok(loaded.matrix),
            Some(rows) => {
                if let Some(&bad) = rows.iter().find(|&&r| r >= loaded.matrix.rows()) {
                    return Err(LabError::Invalid(format!(
                        "row subset index {bad} out of range for {} ({} rows)",
                        model.embedding_path.display(),
                        loaded.matrix.rows()
                    )));
                }
                Ok(loaded.matrix.select_rows(rows))
            }
        }
    }
}

fn sae_path(model: &ModelEntry, sae_dir: Option<&Path>) -> PathBuf {
    match (&model.sae_path, sae_dir) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join(format!("{}.sae", model.name)),
        (None, None) => PathBuf::from(format!("{}.sae", model.name)),
    }
}

fn load_sae(model: &ModelEntry, sae_dir: Option<&Path>) -> Result<SaeArtifact> {
    let path = sae_path(model, sae_dir);
    if !path.is_file() {
        return Err(LabError::MissingSae { model: model.name.clone(), tried: path });
    }
    let artifact = read_sae(&path)?;
    Ok(artifact)
}

/// Encodes with the model's SAE and keeps the features inside `window`.
fn filtered_codes(
    inputs: &Inputs,
    model: &ModelEntry,
    sae_dir: Option<&Path>,
    window: FeatureWindow,
) -> Result<SparseCodeMatrix> {
    let x = inputs.embeddings(model)?;
    let sae = load_sae(model, sae_dir)?;
    let codes = encode_matrix(&sae.params, &x, sae.k).ctx(|| format!("encoding {}", model.name))?;
    let filter = filter_features(&codes, window.upper, window.lower).ctx(|| "feature filter".into())?;
    Ok(codes.select_columns(&filter.kept))
}

fn representation(
    inputs: &Inputs,
    model: &ModelEntry,
    variant: Variant,
    sae_dir: Option<&Path>,
    window: FeatureWindow,
) -> Result<Matrix> {
    match variant {
        Variant::Raw => inputs.embeddings(model),
        Variant::Debiased => debias(&inputs.embeddings(model)?).ctx(|| format!("debiasing {}", model.name)),
        Variant::Sparse => Ok(filtered_codes(inputs, model, sae_dir, window)?.to_dense()),
    }
}

fn representations(
    inputs: &Inputs,
    variant: Variant,
    sae_dir: Option<&Path>,
    window: FeatureWindow,
) -> Result<Vec<Matrix>> {
    let reps: Vec<Matrix> = inputs
        .manifest
        .models
        .iter()
        .map(|m| representation(inputs, m, variant, sae_dir, window))
        .collect::<Result<_>>()?;
    if let Some(bad) = reps.iter().position(|r| r.rows() != reps[0].rows()) {
        return Err(LabError::Invalid(format!(
            "model '{}' has {} rows but '{}' has {}",
            inputs.manifest.models[bad].name,
            reps[bad].rows(),
            inputs.manifest.models[0].name,
            reps[0].rows()
        )));
    }
    Ok(reps)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignOptions {
    pub manifest: PathBuf,
    pub metrics: Vec<String>,
    pub variant: Variant,
    /// Rows per subsample; `None` evaluates once on all rows.
    pub sample_size: Option<usize>,
    pub n_samples: usize,
    pub seed: u64,
    pub sae_dir: Option<PathBuf>,
    pub feature_window: FeatureWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairAlignment {
    pub model_a: String,
    pub model_b: String,
    pub metric: String,
    pub n_points: usize,
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

/// Metric values for every unordered model pair. Each pair draws its own
/// subsamples from a stream forked off the seed, and all metrics of a pair
/// share those subsamples.
fn pair_alignments(
    names: &[String],
    reps: &[Matrix],
    metrics: &[MetricId],
    sample_size: Option<usize>,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<PairAlignment>> {
    let n = reps.first().map_or(0, Matrix::rows);
    let (size, draws) = match sample_size {
        None => (n, 1),
        Some(s) if s > n => {
            return Err(LabError::Invalid(format!("--sample-size {s} exceeds the {n} available rows")));
        }
        Some(s) => (s, n_samples.max(1)),
    };
    let mut master = Rng::new(seed);
    let mut out = Vec::new();
    for (i, j) in pairs(reps.len()) {
        let mut rng = master.fork();
        let subsets = if sample_size.is_none() {
            vec![(0..n).collect::<Vec<_>>()]
        } else {
            draw_subsamples(n, size, draws, &mut rng)
        };
        for &metric in metrics {
            let values = subsets
                .iter()
                .map(|idx| evaluate(metric, &reps[i].select_rows(idx), &reps[j].select_rows(idx)))
                .collect::<std::result::Result<Vec<_>, _>>()
                .ctx(|| format!("{metric} on {} vs {}", names[i], names[j]))?;
            let (mean, std) = mean_std(&values);
            out.push(PairAlignment {
                model_a: names[i].clone(),
                model_b: names[j].clone(),
                metric: metric.to_string(),
                n_points: size,
                mean,
                std,
                values,
            });
        }
    }
    Ok(out)
}

pub fn run_align(opts: &AlignOptions, out: &mut ReportWriter) -> Result<Outcome> {
    let inputs = Inputs::load(&opts.manifest)?;
    let metrics = parse_metrics(&opts.metrics, MetricId::KnnOverlap(10))?;
    let reps = representations(&inputs, opts.variant, opts.sae_dir.as_deref(), opts.feature_window)?;
    let names: Vec<String> = inputs.manifest.models.iter().map(|m| m.name.clone()).collect();
    let results = pair_alignments(&names, &reps, &metrics, opts.sample_size, opts.n_samples, opts.seed)?;

    let variant = serde_json::to_value(opts.variant).expect("enum").as_str().unwrap_or_default().to_string();
    let mut table = Table::new(&["model_a", "model_b", "variant", "metric", "statistic", "value"]);
    for r in &results {
        let row = |stat: String, v: f64| {
            vec![r.model_a.clone(), r.model_b.clone(), variant.clone(), r.metric.clone(), stat, num(v)]
        };
        table.push(row("mean".into(), r.mean));
        table.push(row("std".into(), r.std));
        for (s, &v) in r.values.iter().enumerate() {
            table.push(row(format!("sample_{s}"), v));
        }
    }
    let repro = Reproducibility::new(opts.seed, opts);
    out.csv("align.csv", &table)?;
    out.json("align.json", "align", &repro, opts, &results)?;
    Ok(Outcome::done(out))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaeTrainOptions {
    pub manifest: PathBuf,
    pub models: Vec<String>,
    pub d_sparse: usize,
    /// Overrides the manifest's per-model `sae_k`.
    pub k: Option<usize>,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub resample_period: usize,
    pub resample_cutoff_fraction: f64,
    pub resample: bool,
    pub decoder_renorm: bool,
    pub seed: u64,
}

impl SaeTrainOptions {
    pub fn config(&self, d_model: usize, k: usize) -> SaeConfig {
        let mut c = SaeConfig::new(d_model, self.d_sparse, self.k.unwrap_or(k));
        c.steps = self.steps;
        c.batch_size = self.batch_size;
        c.learning_rate = self.learning_rate;
        c.weight_decay = self.weight_decay;
        c.resample_period = self.resample_period;
        c.resample_cutoff_fraction = self.resample_cutoff_fraction;
        c.resample_enabled = self.resample;
        c.decoder_renorm = self.decoder_renorm;
        c.seed = self.seed;
        c
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TrainedModel {
    model: String,
    artifact: String,
    k: usize,
    final_mean_residual: f64,
    final_dead: usize,
    log: Vec<TrainLogRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TrainLogRow {
    step: usize,
    mean_residual: f64,
    dead: usize,
    resampled: usize,
}

pub fn run_sae_train(opts: &SaeTrainOptions, out: &mut ReportWriter) -> Result<Outcome> {
    let inputs = Inputs::load(&opts.manifest)?;
    let mut results = Vec::new();
    let mut table = Table::new(&["model", "step", "statistic", "value"]);
    for model in inputs.models(&opts.models)? {
        let x = inputs.embeddings(model)?;
        let config = opts.config(x.cols(), model.sae_k);
        let (params, log) = sae_train(&config, &x).ctx(|| format!("training SAE for {}", model.name))?;
        let file = format!("{}.sae", model.name);
        let path = out.path(&file);
        write_sae(&path, &SaeArtifact { params, k: config.k })?;
        out.note(path);
        let rows: Vec<TrainLogRow> = log
            .entries
            .iter()
            .map(|e| TrainLogRow { step: e.step, mean_residual: e.mean_residual, dead: e.dead, resampled: e.resampled })
            .collect();
        for r in &rows {
            let step = r.step.to_string();
            table.push(vec![model.name.clone(), step.clone(), "mean_residual".into(), num(r.mean_residual)]);
            table.push(vec![model.name.clone(), step.clone(), "dead".into(), r.dead.to_string()]);
            table.push(vec![model.name.clone(), step, "resampled".into(), r.resampled.to_string()]);
        }
        table.push(vec![model.name.clone(), "final".into(), "mean_residual".into(), num(log.final_mean_residual)]);
        table.push(vec![model.name.clone(), "final".into(), "dead".into(), log.final_dead.to_string()]);
        results.push(TrainedModel {
            model: model.name.clone(),
            artifact: file,
            k: config.k,
            final_mean_residual: log.final_mean_residual,
            final_dead: log.final_dead,
            log: rows,
        });
    }
    let repro = Reproducibility::new(opts.seed, opts);
    out.csv("sae_train.csv", &table)?;
    out.json("sae_train.json", "sae train", &repro, opts, &results)?;
    Ok(Outcome::done(out))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaeEncodeOptions {
    pub manifest: PathBuf,
    pub models: Vec<String>,
    pub sae_dir: Option<PathBuf>,
    pub feature_window: FeatureWindow,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct EncodedModel {
    model: String,
    codes_file: String,
    rows: usize,
    features: usize,
    k: usize,
    nnz: usize,
    mean_residual: f64,
    dead_features: usize,
    kept_features: usize,
    magnitude_p5: Option<f64>,
    magnitude_p95: Option<f64>,
    magnitude_ratio: Option<f64>,
    decoder_incoherence_mean: f64,
    decoder_incoherence_max: f64,
}

pub fn run_sae_encode(opts: &SaeEncodeOptions, out: &mut ReportWriter) -> Result<Outcome> {
    let inputs = Inputs::load(&opts.manifest)?;
    let mut results = Vec::new();
    let mut summary = Table::new(&["model", "statistic", "value"]);
    for model in inputs.models(&opts.models)? {
        let x = inputs.embeddings(model)?;
        let sae = load_sae(model, opts.sae_dir.as_deref())?;
        let ctx = || format!("encoding {}", model.name);
        let codes = encode_matrix(&sae.params, &x, sae.k).ctx(ctx)?;
        let filter = filter_features(&codes, opts.feature_window.upper, opts.feature_window.lower).ctx(ctx)?;
        let mags = magnitude_stats(&codes, sae.k).ok();
        let inc = incoherence_stats(&sae.params.decoder_weight()).ctx(ctx)?;
        let mut code_table = Table::new(&["row", "feature", "value"]);
        for r in 0..codes.rows() {
            for (j, v) in codes.row_entries(r) {
                code_table.push(vec![r.to_string(), j.to_string(), num(v)]);
            }
        }
        let codes_file = format!("{}.codes.csv", model.name);
        out.csv(&codes_file, &code_table)?;
        let rec = EncodedModel {
            model: model.name.clone(),
            codes_file,
            rows: codes.rows(),
            features: codes.cols(),
            k: sae.k,
            nnz: codes.nnz(),
            mean_residual: residual_stats(&sae.params, &x, sae.k).ctx(ctx)?,
            dead_features: dead_feature_count(&sae.params, &x, sae.k).ctx(ctx)?,
            kept_features: filter.kept.len(),
            magnitude_p5: mags.map(|m| m.p5),
            magnitude_p95: mags.map(|m| m.p95),
            magnitude_ratio: mags.map(|m| m.ratio),
            decoder_incoherence_mean: inc.mean_abs,
            decoder_incoherence_max: inc.max_abs,
        };
        let mut stat = |name: &str, v: String| summary.push(vec![rec.model.clone(), name.into(), v]);
        stat("nnz", rec.nnz.to_string());
        stat("mean_residual", num(rec.mean_residual));
        stat("dead_features", rec.dead_features.to_string());
        stat("kept_features", rec.kept_features.to_string());
        if let Some(m) = mags {
            stat("magnitude_p5", num(m.p5));
            stat("magnitude_p95", num(m.p95));
            stat("magnitude_ratio", num(m.ratio));
        }
        stat("decoder_incoherence_mean", num(rec.decoder_incoherence_mean));
        stat("decoder_incoherence_max", num(rec.decoder_incoherence_max));
        results.push(rec);
    }
    let repro = Reproducibility::new(opts.seed, opts);
    out.csv("sae_encode.csv", &summary)?;
    out.json("sae_encode.json", "sae encode", &repro, opts, &results)?;
    Ok(Outcome::done(out))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchOptions {
    pub manifest: PathBuf,
    pub sae_dir: Option<PathBuf>,
    pub feature_window: FeatureWindow,
    pub n_draws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct MatchRecord {
    model_a: String,
    model_b: String,
    features_a: usize,
    features_b: usize,
    correlation: f64,
    total_weight: f64,
    null_mean: f64,
    null_std: f64,
    null_min: f64,
    null_max: f64,
    zscore: f64,
}

pub fn run_match(opts: &MatchOptions, out: &mut ReportWriter) -> Result<Outcome> {
    let inputs = Inputs::load(&opts.manifest)?;
    let codes: Vec<SparseCodeMatrix> = inputs
        .manifest
        .models
        .iter()
        .map(|m| filtered_codes(&inputs, m, opts.sae_dir.as_deref(), opts.feature_window))
        .collect::<Result<_>>()?;
    let names: Vec<&str> = inputs.manifest.models.iter().map(|m| m.name.as_str()).collect();
    let mut master = Rng::new(opts.seed);
    let mut results = Vec::new();
    let mut table = Table::new(&["model_a", "model_b", "statistic", "value"]);
    for (i, j) in pairs(codes.len()) {
        let mut rng = master.fork();
        let ctx = || format!("matching {} vs {}", names[i], names[j]);
        let matched = permutation_correlation(&codes[i], &codes[j]).ctx(ctx)?;
        let null = permutation_null(&codes[i], &codes[j], opts.n_draws, &mut rng).ctx(ctx)?;
        let rec = MatchRecord {
            model_a: names[i].into(),
            model_b: names[j].into(),
            features_a: codes[i].cols(),
            features_b: codes[j].cols(),
            correlation: matched.correlation,
            total_weight: matched.total_weight,
            null_mean: null.mean,
            null_std: null.std,
            null_min: null.min,
            null_max: null.max,
            zscore: null.zscore,
        };
        for (stat, v) in [
            ("correlation", rec.correlation),
            ("total_weight", rec.total_weight),
            ("null_mean", rec.null_mean),
            ("null_std", rec.null_std),
            ("null_min", rec.null_min),
            ("null_max", rec.null_max),
            ("zscore", rec.zscore),
        ] {
            table.push(vec![rec.model_a.clone(), rec.model_b.clone(), stat.into(), num(v)]);
        }
        results.push(rec);
    }
    let repro = Reproducibility::new(opts.seed, opts);
    out.csv("match.csv", &table)?;
    out.json("match.json", "match", &repro, opts, &results)?;
    Ok(Outcome::done(out))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreqTrendOptions {
    pub manifest: PathBuf,
    pub metric: Vec<String>,
    pub window: usize,
    pub step: usize,
    pub variant: Variant,
    pub sae_dir: Option<PathBuf>,
    pub feature_window: FeatureWindow,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct TrendRecord {
    model_a: String,
    model_b: String,
    metric: String,
    window_starts: Vec<usize>,
    window_centers: Vec<f64>,
    alignments: Vec<f64>,
    single_window: bool,
    slope: Option<f64>,
    intercept: Option<f64>,
    r_squared: Option<f64>,
    zero_variance: Option<bool>,
}

pub fn run_freq_trend(opts: &FreqTrendOptions, out: &mut ReportWriter) -> Result<Outcome> {
    let inputs = Inputs::load(&opts.manifest)?;
    let table_path = inputs
        .manifest
        .frequency_table_path
        .clone()
        .ok_or_else(|| LabError::Invalid("freq-trend needs frequency_table_path in the manifest".into()))?;
    let freqs = read_frequency_table(&table_path)?;
    let reps = representations(&inputs, opts.variant, opts.sae_dir.as_deref(), opts.feature_window)?;
    if reps[0].rows() != freqs.frequencies.len() {
        return Err(LabError::Invalid(format!(
            "{}: {} frequencies for {} embedding rows",
            table_path.display(),
            freqs.frequencies.len(),
            reps[0].rows()
        )));
    }
    let metrics = parse_metrics(&opts.metric, MetricId::KnnOverlap(10))?;
    let names: Vec<&str> = inputs.manifest.models.iter().map(|m| m.name.as_str()).collect();
    let mut results = Vec::new();
    let mut windows = Table::new(&["model_a", "model_b", "metric", "window", "start", "center", "alignment"]);
    let mut fits = Table::new(&["model_a", "model_b", "metric", "statistic", "value"]);
    for (i, j) in pairs(reps.len()) {
        for &metric in &metrics {
            let rep = sliding_window_trend(&reps[i], &reps[j], &freqs.frequencies, opts.window, opts.step, metric)
                .ctx(|| format!("trend {metric} on {} vs {}", names[i], names[j]))?;
            let (a, b, m) = (names[i].to_string(), names[j].to_string(), metric.to_string());
            for (w, ((s, c), v)) in rep.window_starts.iter().zip(&rep.window_centers).zip(&rep.alignments).enumerate() {
                windows.push(vec![a.clone(), b.clone(), m.clone(), w.to_string(), s.to_string(), num(*c), num(*v)]);
            }
            let mut fit_row = |stat: &str, v: String| fits.push(vec![a.clone(), b.clone(), m.clone(), stat.into(), v]);
            fit_row("windows", rep.alignments.len().to_string());
            fit_row("single_window", rep.single_window().to_string());
            if let Some(f) = rep.fit {
                fit_row("slope", num(f.slope));
                fit_row("intercept", num(f.intercept));
                fit_row("r_squared", num(f.r_squared));
                fit_row("zero_variance", f.zero_variance.to_string());
            }
            results.push(TrendRecord {
                model_a: a,
                model_b: b,
                metric: m,
                single_window: rep.single_window(),
                slope: rep.fit.map(|f| f.slope),
                intercept: rep.fit.map(|f| f.intercept),
                r_squared: rep.fit.map(|f| f.r_squared),
                zero_variance: rep.fit.map(|f| f.zero_variance),
                window_starts: rep.window_starts,
                window_centers: rep.window_centers,
                alignments: rep.alignments,
            });
        }
    }
    let repro = Reproducibility::new(opts.seed, opts);
    out.csv("freq_trend_windows.csv", &windows)?;
    out.csv("freq_trend_fit.csv", &fits)?;
    out.json("freq_trend.json", "freq-trend", &repro, opts, &results)?;
    Ok(Outcome::done(out))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecRegressOptions {
    pub manifest: PathBuf,
    pub lambda: f64,
    pub metric: Vec<String>,
    /// An `align.csv` to take per-pair alignments from instead of computing them.
    pub alignment: Option<PathBuf>,
    pub variant: Variant,
    pub sample_size: Option<usize>,
    pub n_samples: usize,
    pub sae_dir: Option<PathBuf>,
    pub feature_window: FeatureWindow,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct SpecRegressResult {
    metric: String,
    pairs: usize,
    alignment_mean: f64,
    constant_columns: Vec<String>,
    coefficients: BTreeMap<String, f64>,
    feature_order: Vec<String>,
}

/// Reads `mean` rows of `metric` from an `align.csv`.
fn read_alignment_csv(path: &Path, metric: &str) -> Result<BTreeMap<(String, String), f64>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| LabError::Invalid(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| LabError::Invalid(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| LabError::Invalid(format!("{}: missing column '{name}'", path.display())))
    };
    let (ca, cb, cm, cs, cv) = (col("model_a")?, col("model_b")?, col("metric")?, col("statistic")?, col("value")?);
    let mut out = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| LabError::Invalid(format!("{}: {e}", path.display())))?;
        if &record[cm] != metric || &record[cs] != "mean" {
            continue;
        }
        let v: f64 = record[cv].parse().map_err(|_| {
            LabError::Invalid(format!("{}:{}: value {:?} is not a number", path.display(), line + 2, &record[cv]))
        })?;
        out.insert((record[ca].to_string(), record[cb].to_string()), v);
    }
    Ok(out)
}

pub fn run_spec_regress(opts: &SpecRegressOptions, out: &mut ReportWriter) -> Result<Outcome> {
    let inputs = Inputs::load(&opts.manifest)?;
    let specs = inputs.manifest.model_specs();
    let features = build_spec_features(&specs).ctx(|| "building spec features".into())?;
    let metric = parse_metrics(&opts.metric, MetricId::KnnOverlap(10))?[0];
    let y: Vec<f64> = match &opts.alignment {
        Some(path) => {
            let table = read_alignment_csv(path, &metric.to_string())?;
            features
                .pair_names
                .iter()
                .map(|(a, b)| {
                    table
                        .get(&(a.clone(), b.clone()))
                        .or_else(|| table.get(&(b.clone(), a.clone())))
                        .copied()
                        .ok_or_else(|| {
                            LabError::Invalid(format!("{}: no {metric} mean for pair {a} / {b}", path.display()))
                        })
                })
                .collect::<Result<_>>()?
        }
        None => {
            let reps = representations(&inputs, opts.variant, opts.sae_dir.as_deref(), opts.feature_window)?;
            let names: Vec<String> = specs.iter().map(|s| s.name.clone()).collect();
            pair_alignments(&names, &reps, &[metric], opts.sample_size, opts.n_samples, opts.seed)?
                .into_iter()
                .map(|p| p.mean)
                .collect()
        }
    };
    // features are centered, so the intercept is the mean alignment
    let (y_mean, _) = mean_std(&y);
    let centered: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let beta = ridge_fit(&features.features, &centered, opts.lambda).ctx(|| "ridge regression".into())?;

    let mut feature_table = Table::new(&["model_a", "model_b", "feature", "raw", "centered"]);
    for (p, (a, b)) in features.pair_names.iter().enumerate() {
        for (c, name) in features.feature_names.iter().enumerate() {
            feature_table.push(vec![
                a.clone(),
                b.clone(),
                name.clone(),
                num(features.raw_features.get(p, c)),
                num(features.features.get(p, c)),
            ]);
        }
        feature_table.push(vec![a.clone(), b.clone(), "alignment".into(), num(y[p]), num(centered[p])]);
    }
    let mut coef_table = Table::new(&["feature", "coefficient"]);
    coef_table.push(vec!["intercept".into(), num(y_mean)]);
    for (name, b) in features.feature_names.iter().zip(&beta) {
        coef_table.push(vec![name.clone(), num(*b)]);
    }
    let result = SpecRegressResult {
        metric: metric.to_string(),
        pairs: y.len(),
        alignment_mean: y_mean,
        constant_columns: features.constant_columns.iter().map(|&c| features.feature_names[c].clone()).collect(),
        coefficients: features.feature_names.iter().cloned().zip(beta.iter().copied()).collect(),
        feature_order: features.feature_names.clone(),
    };
    let repro = Reproducibility::new(opts.seed, opts);
    out.csv("spec_features.csv", &feature_table)?;
    out.csv("spec_coefficients.csv", &coef_table)?;
    out.json("spec_regress.json", "spec-regress", &repro, opts, &result)?;
    Ok(Outcome::done(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DictionaryChoice {
    Gaussian,
    Orthonormal,
    Mub,
}

impl From<DictionaryChoice> for DictionaryKind {
    fn from(c: DictionaryChoice) -> Self {
        match c {
            DictionaryChoice::Gaussian => DictionaryKind::Gaussian,
            DictionaryChoice::Orthonormal => DictionaryKind::Orthonormal,
            DictionaryChoice::Mub => DictionaryKind::MutuallyUnbiased,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncoherenceOptions {
    pub dims: Vec<usize>,
    pub atoms: usize,
    pub dictionary: DictionaryChoice,
    /// When set, decoder dictionaries of the manifest's SAEs are measured too.
    pub manifest: Option<PathBuf>,
    pub sae_dir: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct IncoherenceRecord {
    source: String,
    d: usize,
    m: usize,
    mean_abs: f64,
    max_abs: f64,
    gaussian_reference: f64,
}

pub fn run_incoherence(opts: &IncoherenceOptions, out: &mut ReportWriter) -> Result<Outcome> {
    let mut rng = Rng::new(opts.seed);
    let mut results = Vec::new();
    let reference = |d: usize| (2.0 / (std::f64::consts::PI * d as f64)).sqrt();
    for &d in &opts.dims {
        let dict = generate_dictionary(d, opts.atoms, opts.dictionary.into(), &mut rng)
            .ctx(|| format!("dictionary d={d}, m={}", opts.atoms))?;
        let inc = incoherence_stats(&dict.matrix()).ctx(|| format!("incoherence d={d}"))?;
        results.push(IncoherenceRecord {
            source: "random".into(),
            d,
            m: opts.atoms,
            mean_abs: inc.mean_abs,
            max_abs: inc.max_abs,
            gaussian_reference: reference(d),
        });
    }
    if let Some(manifest) = &opts.manifest {
        let inputs = Inputs::load(manifest)?;
        for model in &inputs.manifest.models {
            let sae = load_sae(model, opts.sae_dir.as_deref())?;
            let decoder = sae.params.decoder_weight();
            let inc = incoherence_stats(&decoder).ctx(|| format!("decoder of {}", model.name))?;
            results.push(IncoherenceRecord {
                source: model.name.clone(),
                d: decoder.rows(),
                m: decoder.cols(),
                mean_abs: inc.mean_abs,
                max_abs: inc.max_abs,
                gaussian_reference: reference(decoder.rows()),
            });
        }
    }
    let mut table = Table::new(&["source", "d", "m", "statistic", "value"]);
    for r in &results {
        for (stat, v) in [("mean_abs", r.mean_abs), ("max_abs", r.max_abs), ("gaussian_reference", r.gaussian_reference)] {
            table.push(vec![r.source.clone(), r.d.to_string(), r.m.to_string(), stat.into(), num(v)]);
        }
    }
    let repro = Reproducibility::new(opts.seed, opts);
    out.csv("incoherence.csv", &table)?;
    out.json("incoherence.json", "incoherence", &repro, opts, &results)?;
    Ok(Outcome::done(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum FoldingChoice {
    Rescale,
    Residual,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthCertifyOptions {
    pub d: usize,
    pub m: usize,
    pub k: usize,
    pub phi: f64,
    pub phi_upper: f64,
    pub eps_noise: f64,
    pub n_pairs: usize,
    pub overlaps: Vec<usize>,
    pub gammas: Vec<f64>,
    pub dictionary: DictionaryChoice,
    pub folding: FoldingChoice,
    pub seed: u64,
}

impl SynthCertifyOptions {
    pub fn config(&self) -> SyntheticConfig {
        SyntheticConfig {
            d: self.d,
            m: self.m,
            k: self.k,
            phi: self.phi,
            phi_upper: self.phi_upper,
            eps_noise_raw: self.eps_noise,
            n_pairs: self.n_pairs,
            overlap_schedule: self.overlaps.clone(),
            seed: self.seed,
            dictionary: self.dictionary.into(),
            folding: match self.folding {
                FoldingChoice::Rescale => NoiseFolding::Rescale,
                FoldingChoice::Residual => NoiseFolding::Residual,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct Prop1Record {
    gamma: f64,
    nuisance: f64,
    precondition_met: bool,
    part1_overlap_threshold: f64,
    part2_inner_threshold: f64,
    part1_triggered: usize,
    part1_failures: usize,
    part2_triggered: usize,
    part2_failures: usize,
    passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct ViolationRecord {
    pair: usize,
    bound: &'static str,
    value: f64,
    limit: f64,
    excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct CertifyResult {
    passed: bool,
    pairs: usize,
    eps_dict: f64,
    eps_dict_mean: f64,
    eps_noise: f64,
    residual_folded_rows: usize,
    max_additivity_error: f64,
    max_row_norm_error: f64,
    bound_violations: Vec<ViolationRecord>,
    prop1: Vec<Prop1Record>,
}

pub fn run_synth_certify(opts: &SynthCertifyOptions, out: &mut ReportWriter) -> Result<Outcome> {
    if opts.gammas.is_empty() {
        return Err(LabError::Invalid("synth certify needs at least one --gamma".into()));
    }
    let report = certify(&opts.config(), &opts.gammas).ctx(|| "synthetic certification".into())?;
    let result = CertifyResult {
        passed: report.passed(),
        pairs: report.pairs,
        eps_dict: report.constants.eps_dict,
        eps_dict_mean: report.eps_dict_mean,
        eps_noise: report.constants.eps_noise,
        residual_folded_rows: report.residual_folded_rows,
        max_additivity_error: report.max_additivity_error,
        max_row_norm_error: report.max_row_norm_error,
        bound_violations: report
            .bound_violations
            .iter()
            .map(|(p, v)| ViolationRecord { pair: *p, bound: v.kind.name(), value: v.value, limit: v.bound, excess: v.excess })
            .collect(),
        prop1: report
            .prop1
            .iter()
            .map(|p| Prop1Record {
                gamma: p.gamma,
                nuisance: p.nuisance,
                precondition_met: p.precondition_met,
                part1_overlap_threshold: p.part1_overlap_threshold,
                part2_inner_threshold: p.part2_inner_threshold,
                part1_triggered: p.part1_triggered,
                part1_failures: p.part1_failures,
                part2_triggered: p.part2_triggered,
                part2_failures: p.part2_failures,
                passed: p.passed(),
            })
            .collect(),
    };
    let mut table = Table::new(&["scope", "statistic", "value"]);
    let mut put = |scope: &str, stat: &str, v: String| table.push(vec![scope.into(), stat.into(), v]);
    put("instance", "passed", result.passed.to_string());
    put("instance", "pairs", result.pairs.to_string());
    put("instance", "eps_dict", num(result.eps_dict));
    put("instance", "eps_dict_mean", num(result.eps_dict_mean));
    put("instance", "eps_noise", num(result.eps_noise));
    put("instance", "residual_folded_rows", result.residual_folded_rows.to_string());
    put("instance", "max_additivity_error", num(result.max_additivity_error));
    put("instance", "max_row_norm_error", num(result.max_row_norm_error));
    put("instance", "bound_violations", result.bound_violations.len().to_string());
    for p in &result.prop1 {
        let scope = format!("gamma={}", num(p.gamma));
        put(&scope, "nuisance", num(p.nuisance));
        put(&scope, "precondition_met", p.precondition_met.to_string());
        put(&scope, "part1_overlap_threshold", num(p.part1_overlap_threshold));
        put(&scope, "part2_inner_threshold", num(p.part2_inner_threshold));
        put(&scope, "part1_triggered", p.part1_triggered.to_string());
        put(&scope, "part1_failures", p.part1_failures.to_string());
        put(&scope, "part2_triggered", p.part2_triggered.to_string());
        put(&scope, "part2_failures", p.part2_failures.to_string());
    }
    let repro = Reproducibility::new(opts.seed, opts);
    out.csv("synth_certify.csv", &table)?;
    out.json("synth_certify.json", "synth certify", &repro, opts, &result)?;
    let mut outcome = Outcome::done(out);
    outcome.certified = Some(result.passed);
    Ok(outcome)
}
