use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use cwngd::data::SynthKind;
use cwngd::optim::AdamConfig;
use cwngd::train::{run_training_on, DatasetSpec, OptimizerKind, TrainConfig, DEFAULT_ARCH};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Optimizer {
    Cwngd,
    Adam,
    Sgd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DatasetKind {
    Mnist,
    Xor,
    Blobs,
}

/// Train a network with component-wise natural gradient descent or a
/// first-order baseline, writing per-epoch metrics.
#[derive(Debug, Parser)]
#[command(name = "cwngd", version)]
struct Args {
    #[arg(long, value_enum, default_value = "cwngd")]
    optimizer: Optimizer,

    /// Comma-separated layers, e.g. `conv:32@3x3,maxpool:2x2,flatten,dense:10`.
    #[arg(long, default_value = DEFAULT_ARCH)]
    arch: String,

    #[arg(long, value_enum, default_value = "mnist")]
    dataset: DatasetKind,

    /// Directory holding the four MNIST IDX files.
    #[arg(long, env = "MNIST_DIR", default_value = "data/mnist")]
    mnist_dir: PathBuf,

    /// Use only the first N training samples (MNIST), or the sample count of a
    /// synthetic dataset.
    #[arg(long)]
    train_size: Option<usize>,

    /// Use only the first N test samples (MNIST).
    #[arg(long)]
    test_size: Option<usize>,

    /// Standard deviation of the XOR input noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,

    /// Number of clusters for the blobs dataset.
    #[arg(long, default_value_t = 3)]
    classes: usize,

    /// Distance between neighbouring blob centres, in units of their deviation.
    #[arg(long, default_value_t = 6.0)]
    separation: f64,

    #[arg(long, default_value_t = 20)]
    epochs: usize,

    #[arg(long, default_value_t = 256)]
    batch_size: usize,

    /// Learning rate (default 1 for cwngd, 1e-3 for adam, 0.1 for sgd).
    #[arg(long)]
    lr: Option<f64>,

    /// Damping added to every Fisher block before solving.
    #[arg(long, default_value_t = 1e-4)]
    damping: f64,

    #[arg(long, default_value_t = 0.9)]
    beta1: f64,

    #[arg(long, default_value_t = 0.999)]
    beta2: f64,

    #[arg(long, default_value_t = 1e-8)]
    epsilon: f64,

    /// Per-step multiplicative learning-rate decay for Adam.
    #[arg(long, default_value_t = 1.0)]
    lr_decay: f64,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Worker threads for the Fisher block solves.
    #[arg(long, default_value_t = 1)]
    threads: usize,

    /// Where to write the metrics CSV.
    #[arg(long)]
    metrics_out: Option<PathBuf>,

    /// Write 0 for epoch_time_ms so repeated runs give identical files.
    #[arg(long)]
    no_timing: bool,

    /// Suppress per-epoch progress on stderr.
    #[arg(long, short)]
    quiet: bool,
}

impl Args {
    fn config(&self) -> TrainConfig {
        let optimizer = match self.optimizer {
            Optimizer::Cwngd => OptimizerKind::CwNgd,
            Optimizer::Adam => OptimizerKind::Adam,
            Optimizer::Sgd => OptimizerKind::Sgd,
        };
        let samples = self.train_size.unwrap_or(200);
        let dataset = match self.dataset {
            DatasetKind::Mnist => DatasetSpec::Mnist {
                dir: self.mnist_dir.clone(),
                train_limit: self.train_size,
                test_limit: self.test_size,
            },
            DatasetKind::Xor => DatasetSpec::Synthetic {
                kind: SynthKind::Xor { noise: self.noise },
                samples,
            },
            DatasetKind::Blobs => DatasetSpec::Synthetic {
                kind: SynthKind::Blobs {
                    classes: self.classes,
                    separation: self.separation,
                },
                samples,
            },
        };
        TrainConfig {
            arch: self.arch.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.lr,
            damping: self.damping,
            adam: AdamConfig {
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
                lr_decay: self.lr_decay,
                ..AdamConfig::default()
            },
            seed: self.seed,
            threads: self.threads,
            metrics_out: self.metrics_out.clone(),
            record_timing: !self.no_timing,
            ..TrainConfig::new(optimizer, dataset)
        }
    }
}

fn run(args: &Args) -> Result<()> {
    let cfg = args.config();
    cfg.validate().context("invalid configuration")?;
    let (train, test) = cfg.dataset.load(cfg.seed).context("cannot load dataset")?;
    if !args.quiet {
        eprintln!(
            "{} on {} training / {} test samples, {} epochs, batch {}",
            cfg.optimizer,
            train.len(),
            test.len(),
            cfg.epochs,
            cfg.batch_size
        );
    }
    let quiet = args.quiet;
    run_training_on(&cfg, &train, &test, |r| {
        if !quiet {
            eprintln!(
                "epoch {:>3}  train acc {:.4}  loss {:.4}  val acc {:.4}  loss {:.4}  {} ms",
                r.epoch, r.train_acc, r.train_loss, r.val_acc, r.val_loss, r.epoch_time_ms
            );
        }
    })?;
    if let (Some(path), false) = (&cfg.metrics_out, quiet) {
        eprintln!("metrics written to {}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
