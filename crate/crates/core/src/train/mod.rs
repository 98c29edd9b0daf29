//! The epoch loop: batches through an optimizer, then a full evaluation of
//! both splits, one [`MetricsRecord`] per epoch.

mod csv;

pub use csv::{format_sig6, write_metrics_csv, CSV_HEADER};

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use crate::data::{batches, load_mnist_dir, synth_dataset, Dataset, Split, SynthKind};
use crate::error::{Error, Result};
use crate::fim::Executor;
use crate::network::{accuracy, softmax_cross_entropy, Arch, Network};
use crate::optim::{adam_step, sgd_step, AdamConfig, AdamState, CwNgd, CwNgdConfig};

pub const DEFAULT_ARCH: &str = "conv:32@3x3,maxpool:2x2,flatten,dense:128:relu,dense:10:identity";

/// Samples evaluated per forward pass.
const EVAL_CHUNK: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    CwNgd,
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn default_learning_rate(self) -> f64 {
        match self {
            OptimizerKind::CwNgd => 1.0,
            OptimizerKind::Adam => 1e-3,
            OptimizerKind::Sgd => 0.1,
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cwngd" | "cw-ngd" => Ok(OptimizerKind::CwNgd),
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(Error::Validation(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::CwNgd => "cwngd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    /// IDX files in `dir`, optionally truncated to the first samples.
    Mnist {
        dir: PathBuf,
        train_limit: Option<usize>,
        test_limit: Option<usize>,
    },
    /// A synthetic problem; the test split is a second draw of the same size.
    Synthetic { kind: SynthKind, samples: usize },
}

impl DatasetSpec {
    pub fn load(&self, seed: u64) -> Result<(Dataset, Dataset)> {
        match self {
            DatasetSpec::Mnist {
                dir,
                train_limit,
                test_limit,
            } => {
                let (train, test) = load_mnist_dir(dir)?;
                let cut = |ds: Dataset, n: &Option<usize>| match n {
                    Some(n) => ds.take(*n),
                    None => Ok(ds),
                };
                Ok((cut(train, train_limit)?, cut(test, test_limit)?))
            }
            DatasetSpec::Synthetic { kind, samples } => {
                let train = synth_dataset(*kind, *samples, seed)?;
                let mut test = synth_dataset(*kind, *samples, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))?;
                test.split = Split::Test;
                Ok((train, test))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub arch: String,
    pub dataset: DatasetSpec,
    pub epochs: usize,
    pub batch_size: usize,
    /// `None` picks the optimizer's default.
    pub learning_rate: Option<f64>,
    pub damping: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub threads: usize,
    pub metrics_out: Option<PathBuf>,
    /// When false, `epoch_time_ms` is written as 0 so runs compare byte for byte.
    pub record_timing: bool,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerKind, dataset: DatasetSpec) -> Self {
        TrainConfig {
            optimizer,
            arch: DEFAULT_ARCH.to_string(),
            dataset,
            epochs: 20,
            batch_size: 256,
            learning_rate: None,
            damping: 1e-4,
            adam: AdamConfig::default(),
            seed: 0,
            threads: 1,
            metrics_out: None,
            record_timing: true,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or_else(|| self.optimizer.default_learning_rate())
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be at least 1".into()));
        }
        let lr = self.learning_rate();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Validation(format!("learning rate must be positive, got {lr}")));
        }
        if self.optimizer == OptimizerKind::CwNgd {
            CwNgdConfig {
                learning_rate: lr,
                damping: self.damping,
            }
            .validate()?;
        }
        if self.optimizer == OptimizerKind::Adam {
            self.adam_config().validate()?;
        }
        self.arch.parse::<Arch>()?;
        Ok(())
    }

    fn adam_config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate(),
            ..self.adam
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_acc: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_loss: f64,
    pub epoch_time_ms: u64,
}

/// A run that stopped early, with the epochs it completed.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub records: Vec<MetricsRecord>,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training stopped after {} complete epochs", self.records.len())
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for TrainFailure {
    fn from(error: Error) -> Self {
        TrainFailure {
            error,
            records: Vec::new(),
        }
    }
}

/// Mean loss and accuracy over a whole split. Weights are only read.
pub fn evaluate(net: &Network, ds: &Dataset) -> Result<(f64, f64)> {
    let (mut loss, mut hits) = (0.0, 0.0);
    let n = ds.len();
    let mut start = 0;
    while start < n {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(n)).collect();
        let chunk = ds.select(&idx)?;
        let logits = net.predict(&chunk.inputs)?;
        let m = idx.len() as f64;
        loss += softmax_cross_entropy(&logits, &chunk.labels)?.0 * m;
        hits += accuracy(&logits, &chunk.labels)? * m;
        start += idx.len();
    }
    Ok((loss / n as f64, hits / n as f64))
}

enum Stepper {
    CwNgd(CwNgd),
    Adam(AdamState),
    Sgd(f64),
}

impl Stepper {
    fn step(&mut self, net: &mut Network, x: &crate::Tensor, y: &crate::Tensor) -> Result<()> {
        match self {
            Stepper::CwNgd(opt) => opt.step(net, x, y).map(drop),
            Stepper::Adam(state) => adam_step(net, x, y, state).map(drop),
            Stepper::Sgd(lr) => sgd_step(net, x, y, *lr).map(drop),
        }
    }
}

/// Loads the configured dataset and trains on it.
pub fn run_training(cfg: &TrainConfig) -> std::result::Result<Vec<MetricsRecord>, TrainFailure> {
    cfg.validate()?;
    let (train, test) = cfg.dataset.load(cfg.seed)?;
    run_training_on(cfg, &train, &test, |_| {})
}

/// Trains on already loaded splits, calling `on_epoch` after every epoch.
///
/// If a step fails, the epochs finished so far are still written to
/// `metrics_out` and returned inside the [`TrainFailure`].
pub fn run_training_on(
    cfg: &TrainConfig,
    train: &Dataset,
    test: &Dataset,
    mut on_epoch: impl FnMut(&MetricsRecord),
) -> std::result::Result<Vec<MetricsRecord>, TrainFailure> {
    cfg.validate()?;
    let arch: Arch = cfg.arch.parse()?;
    let mut net = Network::from_arch(&arch, train.sample_shape(), cfg.seed)?;
    if net.output_shape() != [train.classes()] || test.sample_shape() != train.sample_shape() || test.classes() != train.classes() {
        return Err(Error::Validation(format!(
            "network output {:?} does not fit a dataset with {} classes",
            net.output_shape(),
            train.classes()
        ))
        .into());
    }
    let mut stepper = match cfg.optimizer {
        OptimizerKind::CwNgd => Stepper::CwNgd(
            CwNgd::new(CwNgdConfig {
                learning_rate: cfg.learning_rate(),
                damping: cfg.damping,
            })?
            .with_executor(Executor::with_threads(cfg.threads)?),
        ),
        OptimizerKind::Adam => Stepper::Adam(AdamState::new(&net, cfg.adam_config())?),
        OptimizerKind::Sgd => Stepper::Sgd(cfg.learning_rate()),
    };

    let mut records = Vec::with_capacity(cfg.epochs);
    let fail = |error: Error, records: Vec<MetricsRecord>| {
        if let (Some(path), false) = (&cfg.metrics_out, records.is_empty()) {
            // The original error matters more than a failed flush.
            let _ = write_metrics_csv(&records, path);
        }
        TrainFailure { error, records }
    };
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        for (x, y) in batches(train, cfg.batch_size, cfg.seed, epoch as u64).map_err(|e| fail(e, records.clone()))? {
            if let Err(e) = stepper.step(&mut net, &x, &y) {
                return Err(fail(e, records));
            }
        }
        let evaluated = evaluate(&net, train).and_then(|t| Ok((t, evaluate(&net, test)?)));
        let ((train_loss, train_acc), (val_loss, val_acc)) = match evaluated {
            Ok(v) => v,
            Err(e) => return Err(fail(e, records)),
        };
        let record = MetricsRecord {
            epoch,
            train_acc,
            train_loss,
            val_acc,
            val_loss,
            epoch_time_ms: if cfg.record_timing {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        on_epoch(&record);
        records.push(record);
    }
    if let Some(path) = &cfg.metrics_out {
        write_metrics_csv(&records, path).map_err(|e| fail(e, records.clone()))?;
    }
    Ok(records)
}
