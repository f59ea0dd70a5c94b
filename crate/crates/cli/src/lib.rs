//! Command-line front end for `maskhead`.
//!
//! Exit codes:
//!
//! | code | meaning                                                      |
//! |------|--------------------------------------------------------------|
//! | 0    | success                                                      |
//! | 2    | bad config file, flag or parameter                           |
//! | 3    | data error: missing or corrupt dataset, id-set mismatch, ... |
//! | 4    | weight dims do not match the dataset                         |
//! | 5    | I/O error                                                    |

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use config::RunConfig;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_DIMS: u8 = 4;
pub const EXIT_IO: u8 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset not found: {}", .0.display())]
    DatasetNotFound(PathBuf),
    #[error("image id sets differ: {0}")]
    IdSetMismatch(String),
    #[error("predictions come from different runs ({0}); pass --force to evaluate anyway")]
    MixedHash(String),
    #[error("{0} validation violation(s)")]
    Violations(usize),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] maskhead::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use maskhead::Error as E;
        match self {
            Self::Config(_) => EXIT_CONFIG,
            Self::DatasetNotFound(_) | Self::IdSetMismatch(_) | Self::MixedHash(_) | Self::Violations(_) => EXIT_DATA,
            Self::Io { .. } => EXIT_IO,
            Self::Core(e) => match e {
                E::BadParam(_) | E::BadSpec(_) => EXIT_CONFIG,
                E::DimsMismatch(_) | E::ShapeMismatch(_) | E::BadDims(_) => EXIT_DIMS,
                E::Io(_) => EXIT_IO,
                _ => EXIT_DATA,
            },
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}

#[derive(Debug, Parser)]
#[command(
    name = "maskhead",
    version,
    about = "Classify class-agnostic masks from image-level labels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print a dataset's manifest, label histogram and violations.
    Inspect {
        dataset: PathBuf,
        /// Allow records with no positive label.
        #[arg(long)]
        unlabeled: bool,
    },
    /// Write a synthetic Gaussian-bag task: train/test datasets and test ground truth.
    GenSynthetic(GenArgs),
    /// Train a head on the multiple-instance objective.
    TrainTeacher {
        dataset: Option<PathBuf>,
        #[command(flatten)]
        flags: Overrides,
    },
    /// Train a fresh head distilled from a frozen teacher.
    TrainStudent {
        dataset: Option<PathBuf>,
        #[arg(long)]
        teacher: PathBuf,
        #[command(flatten)]
        flags: Overrides,
    },
    /// Write one label map per image.
    Infer {
        dataset: Option<PathBuf>,
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        flags: Overrides,
    },
    /// Score label maps against ground truth.
    Eval {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        /// Evaluate predictions carrying different config hashes.
        #[arg(long)]
        force: bool,
        #[command(flatten)]
        flags: Overrides,
    },
}

/// Settings shared by the run commands. Flags override the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated class names.
    #[arg(long)]
    pub classes: Option<String>,
    #[arg(long = "a")]
    pub a: Option<f64>,
    /// Nats, or `auto`.
    #[arg(long)]
    pub entropy_threshold: Option<String>,
    #[arg(long)]
    pub conf_threshold: Option<f64>,
    #[arg(long)]
    pub nms_threshold: Option<f64>,
    /// `class-wise` or `class-agnostic`.
    #[arg(long)]
    pub nms_mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Comma-separated hidden widths.
    #[arg(long)]
    pub hidden: Option<String>,
    /// Epochs, or `none`.
    #[arg(long)]
    pub patience: Option<String>,
    /// Leave background out of mIoU.
    #[arg(long)]
    pub no_background: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub num_classes: usize,
    #[arg(long, default_value_t = 64)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 20)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub positives: usize,
    #[arg(long, default_value_t = 5.0)]
    pub mu: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 1000)]
    pub bags: usize,
    #[arg(long, default_value_t = 100)]
    pub test_bags: usize,
    /// Fraction of training labels to flip.
    #[arg(long, default_value_t = 0.0)]
    pub label_noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::Inspect { dataset, unlabeled } => commands::inspect(&dataset, unlabeled, out),
        Command::GenSynthetic(args) => commands::gen_synthetic(&args, out),
        Command::TrainTeacher { dataset, flags } => {
            let cfg = RunConfig::resolve(&flags)?;
            commands::train_teacher(&cfg, dataset, out)
        }
        Command::TrainStudent {
            dataset,
            teacher,
            flags,
        } => {
            let cfg = RunConfig::resolve(&flags)?;
            commands::train_student(&cfg, dataset, &teacher, out)
        }
        Command::Infer {
            dataset,
            weights,
            flags,
        } => {
            let cfg = RunConfig::resolve(&flags)?;
            commands::infer(&cfg, dataset, &weights, out)
        }
        Command::Eval {
            pred_dir,
            gt_dir,
            force,
            flags,
        } => {
            let cfg = RunConfig::resolve(&flags)?;
            commands::eval(&cfg, &pred_dir, &gt_dir, force, out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        use maskhead::Error as E;
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::DatasetNotFound("x".into()).exit_code(), 3);
        assert_eq!(CliError::IdSetMismatch("x".into()).exit_code(), 3);
        assert_eq!(CliError::Core(E::BadMagic).exit_code(), 3);
        assert_eq!(CliError::Core(E::ChecksumMismatch("index")).exit_code(), 3);
        assert_eq!(CliError::Core(E::DimsMismatch("x".into())).exit_code(), 4);
        assert_eq!(CliError::Core(E::BadParam("x".into())).exit_code(), 2);
        let io = std::io::Error::other("x");
        assert_eq!(
            CliError::Io {
                path: "p".into(),
                source: io
            }
            .exit_code(),
            5
        );
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "maskhead",
            "train-teacher",
            "d.usam",
            "--a",
            "4",
            "--seed",
            "3",
            "--entropy-threshold",
            "auto",
            "--lambda2",
            "0.2",
            "--out",
            "o",
        ])
        .unwrap();
        let Command::TrainTeacher { flags, .. } = cli.command else {
            panic!()
        };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!((cfg.train.a, cfg.train.seed, cfg.train.lambda2), (4.0, 3, 0.2));
    }
}
