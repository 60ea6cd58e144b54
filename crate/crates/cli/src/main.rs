//! `trec`: generate synthetic clips, import tracker output, train, run the
//! four experiments, filter tracks by motion density and draw trajectories.

mod commands;
mod config;
mod error;
mod visualize;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trec_core::data::ClassSet;
use trec_model::Mode;

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "trec", version, about = "Action recognition from frames and point tracks")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: <output root>/<command>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic clips, track files and one manifest per split.
    Synth(SynthArgs),
    /// Convert external tracker dumps into track files.
    ImportTracks(ImportArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Run one of the experiments.
    Experiment(ExperimentArgs),
    /// Drop the dense background motion cluster from track files.
    FilterKde(FilterArgs),
    /// Draw the trajectories of one clip over its first frame.
    Visualize(VisualizeArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    val_samples_per_class: Option<usize>,
    #[arg(long, value_enum)]
    class_set: Option<ClassSetArg>,
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Splits to write.
    #[arg(long, value_delimiter = ',', default_value = "train,val,test")]
    splits: Vec<String>,
}

#[derive(Args, Debug)]
pub struct ImportArgs {
    #[command(flatten)]
    common: Common,
    /// JSON layout descriptor of the dumps.
    #[arg(long)]
    layout: PathBuf,
    /// Coordinate dumps; each becomes `<out>/<stem>.trks`.
    #[arg(required = true)]
    sources: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Continue from the state saved in the output directory.
    #[arg(long)]
    resume: bool,
}

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[arg(value_enum)]
    name: ExperimentName,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Trained model for `point_ablation`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FilterArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    kde: KdeFlags,
    /// Track files to filter.
    #[arg(required = true)]
    tracks: Vec<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct KdeFlags {
    /// Density quantile below which points survive.
    #[arg(long)]
    quantile: Option<f64>,
    /// Fixed bandwidth instead of the rule of thumb.
    #[arg(long)]
    bandwidth: Option<f64>,
}

#[derive(Args, Debug)]
pub struct VisualizeArgs {
    #[command(flatten)]
    common: Common,
    /// Manifest listing the clip.
    #[arg(long)]
    manifest: PathBuf,
    /// Clip id.
    #[arg(long)]
    sample: String,
    /// Also filter with KDE and draw kept points highlighted next to the
    /// unfiltered overlay.
    #[arg(long)]
    kde: bool,
    #[command(flatten)]
    kde_flags: KdeFlags,
    /// Enlargement factor of the frame.
    #[arg(long, default_value_t = 4)]
    scale: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    #[value(name = "track_vs_notrack")]
    TrackVsNotrack,
    #[value(name = "point_ablation")]
    PointAblation,
    #[value(name = "kde")]
    Kde,
    #[value(name = "single_image")]
    SingleImage,
}

impl ExperimentName {
    fn as_str(self) -> &'static str {
        match self {
            ExperimentName::TrackVsNotrack => "track_vs_notrack",
            ExperimentName::PointAblation => "point_ablation",
            ExperimentName::Kde => "kde",
            ExperimentName::SingleImage => "single_image",
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ClassSetArg {
    Motion8,
    ContextPack,
}

impl From<ClassSetArg> for ClassSet {
    fn from(c: ClassSetArg) -> Self {
        match c {
            ClassSetArg::Motion8 => ClassSet::Motion8,
            ClassSetArg::ContextPack => ClassSet::ContextPack,
        }
    }
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    s.parse().map_err(|e: trec_model::ModelError| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::ImportTracks(a) => commands::import_tracks(a),
        Command::Train(a) => commands::train(a),
        Command::Experiment(a) => commands::experiment(a),
        Command::FilterKde(a) => commands::filter_kde(a),
        Command::Visualize(a) => commands::visualize(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {}", e.kind(), e.message());
            e.exit_code()
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
