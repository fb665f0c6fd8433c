//! Command-line front end. Exit codes: 0 success, 2 invalid input or
//! configuration, 1 any other failure.

mod commands;
pub mod config;
mod sweep;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use config::ExperimentConfig;
pub use sweep::{run_sweep, SweepCell, SweepPlan};

use crate::model::{Family, Pooling};

/// Bad arguments, config or inputs; maps to exit code 2.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct ValidationError(pub String);

#[derive(Debug, Parser)]
#[command(name = "sapcovid", version, about = "COVID-19 detection from speech with attention pooling")]
pub struct Cli {
    /// TOML experiment config; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Frame-feature extraction.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Narrow-band screening.
    #[command(subcommand)]
    Bandwidth(BandwidthCmd),
    /// Manifest filtering and statistics.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Add one augmented twin per training recording.
    Augment(AugmentArgs),
    /// Train one classifier and keep the best-dev checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a labeled split.
    Evaluate(EvaluateArgs),
    /// Train every (feature, pooling, k) cell and tabulate dev UAR.
    Sweep(SweepArgs),
    /// Export averaged attention weights for one recording.
    Attention(AttentionArgs),
    /// Synthetic corpus generation.
    #[command(subcommand)]
    Fixture(FixtureCmd),
}

#[derive(Debug, Subcommand)]
pub enum FeaturesCmd {
    Extract(ExtractArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long, required_unless_present = "wav", conflicts_with = "wav")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub wav: Option<PathBuf>,
    /// spectrogram, mel, mfcc, fbank, or all; comma separated.
    #[arg(long, default_value = "all")]
    pub kind: String,
    /// Files go to `<out>/<tag>/<id>.feat`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum BandwidthCmd {
    Scan(ScanArgs),
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub cutoff_hz: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Report CSV: id,split,label,high_band_ratio,is_narrowband.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCmd {
    /// Drop narrow-band train/dev recordings.
    Filter(FilterArgs),
    /// Per-split label counts as JSON.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Report CSV from `bandwidth scan`; scanned on the fly when absent.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    #[arg(long)]
    pub cutoff_hz: Option<f64>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Before/after statistics JSON.
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for crate::dataset::Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Self::Train,
            SplitArg::Dev => Self::Dev,
            SplitArg::Test => Self::Test,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding `<id>.feat` for the chosen feature.
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub feature: Option<String>,
    #[arg(long)]
    pub pooling: Option<Pooling>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub balanced_sampling: bool,
    /// Drop train/dev items annotated as narrow-band.
    #[arg(long)]
    pub bandwidth_filter: bool,
    /// Keep augmented twins (ids ending in `_aug`); they are dropped otherwise.
    #[arg(long)]
    pub augmentation: bool,
    /// Best checkpoint path.
    #[arg(long)]
    pub out: PathBuf,
    /// History CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value = "dev")]
    pub split: SplitArg,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Holds one `<tag>/` directory of feature files per feature.
    #[arg(long)]
    pub features_root: PathBuf,
    #[arg(long, value_delimiter = ',')]
    pub features: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub poolings: Option<Vec<Pooling>>,
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// Table CSV; per-cell detail goes next to it as `<stem>_cells.csv`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub ckpts: Vec<PathBuf>,
    #[arg(long)]
    pub wav: PathBuf,
    #[arg(long)]
    pub feature: String,
    /// Precomputed feature file, required for non-spectral tags.
    #[arg(long)]
    pub feat: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum FixtureCmd {
    Generate(FixtureArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FixtureShape {
    /// Full challenge-corpus split sizes.
    Corpus,
    Small,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "corpus")]
    pub shape: FixtureShape,
    #[arg(long)]
    pub duration_s: Option<f64>,
}

/// Exit code for an error: 2 when any cause is a validation problem.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use crate::audio_io::AudioError;
    use crate::augment::AugmentError;
    use crate::dataset::DatasetError;
    use crate::interchange::FeatError;
    use crate::training::TrainError;
    for cause in err.chain() {
        if cause.is::<ValidationError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<DatasetError>() {
            if matches!(
                e,
                DatasetError::DuplicateId(_)
                    | DatasetError::BadLabel { .. }
                    | DatasetError::BadSplit { .. }
                    | DatasetError::MissingReport(_)
                    | DatasetError::EmptySplit(_)
                    | DatasetError::ZeroBatch
            ) {
                return 2;
            }
        }
        if let Some(e) = cause.downcast_ref::<FeatError>() {
            if matches!(e, FeatError::DimMismatch { .. }) {
                return 2;
            }
        }
        if let Some(e) = cause.downcast_ref::<TrainError>() {
            if matches!(
                e,
                TrainError::BadConfig(_) | TrainError::SingleClassTrainSet | TrainError::EmptyDataset
            ) {
                return 2;
            }
        }
        if let Some(AugmentError::BadSpec(_)) = cause.downcast_ref::<AugmentError>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<AudioError>() {
            if !matches!(e, AudioError::Io(_)) {
                return 2;
            }
        }
    }
    1
}

/// Parses `args` (program name first), runs the command, returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match commands::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
