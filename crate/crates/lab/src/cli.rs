use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::commands::{
    self, AlignOptions, DictionaryChoice, FeatureWindow, FoldingChoice, FreqTrendOptions, IncoherenceOptions,
    MatchOptions, Outcome, SaeEncodeOptions, SaeTrainOptions, SpecRegressOptions, SynthCertifyOptions, Variant,
};
use crate::error::{LabError, Result};
use crate::report::ReportWriter;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_CERTIFICATION_FAILED: i32 = 2;

/// Representation-alignment experiments over embedding files.
#[derive(Debug, Parser)]
#[command(name = "repalign", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Dataset manifest (JSON).
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory that receives the CSV and JSON reports.
    #[arg(long, global = true, default_value = "reports")]
    pub out_dir: PathBuf,
    /// Metric id such as knn_overlap_10, cka or svcca_10. Repeatable.
    #[arg(long, global = true, value_delimiter = ',')]
    pub metric: Vec<String>,
    /// Rows per random subsample; all rows when omitted.
    #[arg(long, global = true)]
    pub sample_size: Option<usize>,
    #[arg(long, global = true, default_value_t = 10)]
    pub n_samples: usize,
    /// Ridge penalty for spec-regress.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, global = true, default_value_t = 500)]
    pub window: usize,
    #[arg(long, global = true, default_value_t = 250)]
    pub step: usize,
    #[arg(long, global = true, value_enum, default_value_t = Variant::Raw)]
    pub variant: Variant,
    /// Directory holding `<model>.sae` artifacts for models without `sae_path`.
    #[arg(long, global = true)]
    pub sae_dir: Option<PathBuf>,
    /// Features firing on more than this fraction of rows are dropped.
    #[arg(long, global = true, default_value_t = 0.1)]
    pub feature_upper: f64,
    /// Features firing on fewer than this fraction of rows are dropped.
    #[arg(long, global = true, default_value_t = 0.00001)]
    pub feature_lower: f64,
    /// TOML file of `key = value` defaults; flags given on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pairwise alignment between every two models of the manifest.
    Align,
    /// Train or apply top-k sparse autoencoders.
    #[command(subcommand)]
    Sae(SaeCommand),
    /// Maximum-weight feature matching between SAE codes, with a permutation null.
    Match(MatchArgs),
    /// Alignment in sliding windows over a frequency-sorted vocabulary.
    FreqTrend,
    /// Ridge regression of pairwise alignment on model specifications.
    SpecRegress(SpecRegressArgs),
    /// Mutual incoherence of random dictionaries across dimensions.
    Incoherence(IncoherenceArgs),
    /// Checks on synthetic data drawn from the sparse statistical model.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Subcommand)]
pub enum SaeCommand {
    /// Train one top-k SAE per model and write `<model>.sae`.
    Train(SaeTrainArgs),
    /// Encode embeddings with trained SAEs and summarize the codes.
    Encode(SaeEncodeArgs),
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Generate a synthetic instance and verify the model's bounds on it.
    Certify(CertifyArgs),
}

#[derive(Debug, Args)]
pub struct SaeTrainArgs {
    /// Restrict to these models. Repeatable.
    #[arg(long = "model", value_delimiter = ',')]
    pub models: Vec<String>,
    #[arg(long, default_value_t = 16384)]
    pub d_sparse: usize,
    /// Overrides the manifest's sae_k for every model.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 20_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 1024)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 2500)]
    pub resample_period: usize,
    #[arg(long, default_value_t = 0.8)]
    pub resample_cutoff_fraction: f64,
    #[arg(long)]
    pub no_resample: bool,
    #[arg(long)]
    pub no_decoder_renorm: bool,
}

#[derive(Debug, Args)]
pub struct SaeEncodeArgs {
    #[arg(long = "model", value_delimiter = ',')]
    pub models: Vec<String>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Size of the permutation null.
    #[arg(long, default_value_t = repalign_core::matching::DEFAULT_NULL_DRAWS)]
    pub n_draws: usize,
}

#[derive(Debug, Args)]
pub struct SpecRegressArgs {
    /// An align.csv to read pair alignments from instead of computing them.
    #[arg(long)]
    pub alignment: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IncoherenceArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [64, 128, 256, 512])]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 1024)]
    pub atoms: usize,
    #[arg(long, value_enum, default_value_t = DictionaryChoice::Gaussian)]
    pub dictionary: DictionaryChoice,
}

#[derive(Debug, Args)]
pub struct CertifyArgs {
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    #[arg(long, default_value_t = 256)]
    pub m: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 0.8)]
    pub phi: f64,
    #[arg(long, default_value_t = 1.2)]
    pub phi_upper: f64,
    #[arg(long, default_value_t = 0.02)]
    pub eps_noise: f64,
    /// Pairs generated per entry of the overlap schedule.
    #[arg(long, default_value_t = 1000)]
    pub n_pairs: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2, 3, 4])]
    pub overlaps: Vec<usize>,
    #[arg(long = "gamma", value_delimiter = ',', default_values_t = [0.05, 0.1, 0.2])]
    pub gammas: Vec<f64>,
    #[arg(long, value_enum, default_value_t = DictionaryChoice::Mub)]
    pub dictionary: DictionaryChoice,
    #[arg(long, value_enum, default_value_t = FoldingChoice::Rescale)]
    pub folding: FoldingChoice,
}

impl Common {
    fn manifest(&self) -> Result<PathBuf> {
        self.manifest.clone().ok_or_else(|| LabError::Invalid("this subcommand needs --manifest".into()))
    }

    fn feature_window(&self) -> FeatureWindow {
        FeatureWindow { upper: self.feature_upper, lower: self.feature_lower }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(args) {
        Ok(cli) => cli,
        Err(Failure::Clap(e)) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
        Err(Failure::Lab(e)) => {
            eprintln!("error: {e}");
            return EXIT_ERROR;
        }
    };
    match execute(&cli) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            match outcome.certified {
                Some(false) => {
                    eprintln!("certification failed: see the violations in the report");
                    EXIT_CERTIFICATION_FAILED
                }
                _ => EXIT_OK,
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

enum Failure {
    Clap(clap::Error),
    Lab(LabError),
}

/// Parses the command line, then folds in a `--config` file for every
/// option the command line left at its default.
fn parse(args: Vec<OsString>) -> std::result::Result<Cli, Failure> {
    let mut command = Cli::command();
    command.build();
    let matches = command.clone().try_get_matches_from(&args).map_err(Failure::Clap)?;
    let cli = Cli::from_arg_matches(&matches).map_err(Failure::Clap)?;
    let Some(config) = cli.common.config.clone() else {
        return Ok(cli);
    };
    let extra = config_args(&command, &matches, &config).map_err(Failure::Lab)?;
    if extra.is_empty() {
        return Ok(cli);
    }
    let mut merged = args;
    merged.extend(extra);
    let matches = command.try_get_matches_from(&merged).map_err(Failure::Clap)?;
    Cli::from_arg_matches(&matches).map_err(Failure::Clap)
}

fn config_args(command: &clap::Command, matches: &clap::ArgMatches, path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).map_err(|e| LabError::Invalid(format!("{}: {e}", path.display())))?;
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let place = e
            .span()
            .map(|s| format!(":{}", text[..s.start].lines().count().max(1)))
            .unwrap_or_default();
        LabError::Invalid(format!("{}{place}: {}", path.display(), e.message()))
    })?;

    let (mut leaf_cmd, mut leaf) = (command, matches);
    while let Some((name, sub)) = leaf.subcommand() {
        leaf_cmd = leaf_cmd.find_subcommand(name).expect("matched subcommand exists");
        leaf = sub;
    }

    let mut out = Vec::new();
    for (key, value) in &table {
        let long = key.replace('_', "-");
        let arg = leaf_cmd
            .get_arguments()
            .find(|a| a.get_long() == Some(long.as_str()))
            .ok_or_else(|| {
                LabError::Invalid(format!("{}: '{key}' is not an option of this subcommand", path.display()))
            })?;
        if long == "config" {
            return Err(LabError::Invalid(format!("{}: a config file cannot name another", path.display())));
        }
        if leaf.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            continue;
        }
        let flag = format!("--{long}");
        let items: Vec<&toml::Value> = match value {
            toml::Value::Array(items) => items.iter().collect(),
            v => vec![v],
        };
        for item in items {
            match item {
                toml::Value::Boolean(true) => out.push(flag.clone().into()),
                toml::Value::Boolean(false) => {}
                toml::Value::String(s) => out.extend([flag.clone().into(), s.into()]),
                toml::Value::Integer(i) => out.extend([flag.clone().into(), i.to_string().into()]),
                toml::Value::Float(f) => out.extend([flag.clone().into(), format!("{f:?}").into()]),
                other => {
                    return Err(LabError::Invalid(format!(
                        "{}: '{key}' has unsupported value {other}",
                        path.display()
                    )))
                }
            }
        }
    }
    Ok(out)
}

pub fn execute(cli: &Cli) -> Result<Outcome> {
    let c = &cli.common;
    let mut out = ReportWriter::create(&c.out_dir)?;
    match &cli.command {
        Command::Align => commands::run_align(
            &AlignOptions {
                manifest: c.manifest()?,
                metrics: c.metric.clone(),
                variant: c.variant,
                sample_size: c.sample_size,
                n_samples: c.n_samples,
                seed: c.seed,
                sae_dir: c.sae_dir.clone(),
                feature_window: c.feature_window(),
            },
            &mut out,
        ),
        Command::Sae(SaeCommand::Train(a)) => commands::run_sae_train(
            &SaeTrainOptions {
                manifest: c.manifest()?,
                models: a.models.clone(),
                d_sparse: a.d_sparse,
                k: a.k,
                steps: a.steps,
                batch_size: a.batch_size,
                learning_rate: a.learning_rate,
                weight_decay: a.weight_decay,
                resample_period: a.resample_period,
                resample_cutoff_fraction: a.resample_cutoff_fraction,
                resample: !a.no_resample,
                decoder_renorm: !a.no_decoder_renorm,
                seed: c.seed,
            },
            &mut out,
        ),
        Command::Sae(SaeCommand::Encode(a)) => commands::run_sae_encode(
            &SaeEncodeOptions {
                manifest: c.manifest()?,
                models: a.models.clone(),
                sae_dir: c.sae_dir.clone(),
                feature_window: c.feature_window(),
                seed: c.seed,
            },
            &mut out,
        ),
        Command::Match(a) => commands::run_match(
            &MatchOptions {
                manifest: c.manifest()?,
                sae_dir: c.sae_dir.clone(),
                feature_window: c.feature_window(),
                n_draws: a.n_draws,
                seed: c.seed,
            },
            &mut out,
        ),
        Command::FreqTrend => commands::run_freq_trend(
            &FreqTrendOptions {
                manifest: c.manifest()?,
                metric: c.metric.clone(),
                window: c.window,
                step: c.step,
                variant: c.variant,
                sae_dir: c.sae_dir.clone(),
                feature_window: c.feature_window(),
                seed: c.seed,
            },
            &mut out,
        ),
        Command::SpecRegress(a) => commands::run_spec_regress(
            &SpecRegressOptions {
                manifest: c.manifest()?,
                lambda: c.lambda,
                metric: c.metric.clone(),
                alignment: a.alignment.clone(),
                variant: c.variant,
                sample_size: c.sample_size,
                n_samples: c.n_samples,
                sae_dir: c.sae_dir.clone(),
                feature_window: c.feature_window(),
                seed: c.seed,
            },
            &mut out,
        ),
        Command::Incoherence(a) => commands::run_incoherence(
            &IncoherenceOptions {
                dims: a.dims.clone(),
                atoms: a.atoms,
                dictionary: a.dictionary,
                manifest: c.manifest.clone(),
                sae_dir: c.sae_dir.clone(),
                seed: c.seed,
            },
            &mut out,
        ),
        Command::Synth(SynthCommand::Certify(a)) => commands::run_synth_certify(
            &SynthCertifyOptions {
                d: a.d,
                m: a.m,
                k: a.k,
                phi: a.phi,
                phi_upper: a.phi_upper,
                eps_noise: a.eps_noise,
                n_pairs: a.n_pairs,
                overlaps: a.overlaps.clone(),
                gammas: a.gammas.clone(),
                dictionary: a.dictionary,
                folding: a.folding,
                seed: c.seed,
            },
            &mut out,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_ok(args: &[&str]) -> Cli {
        match parse(args.iter().map(OsString::from).collect()) {
            Ok(cli) => cli,
            Err(Failure::Clap(e)) => panic!("{e}"),
            Err(Failure::Lab(e)) => panic!("{e}"),
        }
    }

    #[test]
    fn metrics_repeat_and_split_on_commas() {
        let cli = parse_ok(&["repalign", "align", "--metric", "cka,svcca_10", "--metric", "knn_overlap_10"]);
        assert_eq!(cli.common.metric, ["cka", "svcca_10", "knn_overlap_10"]);
    }

    #[test]
    fn config_file_fills_defaults_but_flags_win() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "seed = 9\nwindow = 100\nn_pairs = 20\ngamma = [0.1, 0.3]\n").unwrap();
        let cfg = cfg.to_str().unwrap();
        let cli = parse_ok(&["repalign", "synth", "certify", "--config", cfg, "--window", "50"]);
        assert_eq!(cli.common.seed, 9);
        assert_eq!(cli.common.window, 50);
        let Command::Synth(SynthCommand::Certify(a)) = cli.command else { panic!("wrong subcommand") };
        assert_eq!(a.n_pairs, 20);
        assert_eq!(a.gammas, [0.1, 0.3]);
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "n_pairs = 20\n").unwrap();
        let args = ["repalign", "align", "--config", cfg.to_str().unwrap()];
        assert!(matches!(parse(args.iter().map(OsString::from).collect()), Err(Failure::Lab(_))));
    }

    #[test]
    fn usage_errors_exit_one_and_help_exits_zero() {
        assert_eq!(run(["repalign", "no-such-command"]), EXIT_ERROR);
        assert_eq!(run(["repalign", "--help"]), EXIT_OK);
    }
}
