//! Desk-scale embedding trainer: a small MLP with an AAM cosine head trained
//! by SGD with momentum and optional weight decay.

mod network;
mod optim;
mod serialize;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use network::{
    forward_cosines, forward_embed, init_params, Activation, DenseLayer, NetworkParams,
    NetworkSpec, Tensors, ZERO_EMBEDDING_GUARD,
};
pub use optim::{OptimizerConfig, OptimizerState};
pub use serialize::{params_from_bytes, params_to_bytes, read_params, write_params, PARAMS_VERSION};

use crate::error::{Error, Result};
use crate::loss::{AamConfig, EntropyPenalty, LossBreakdown, LossWeights, Objective};

/// Training objective, one per comparison row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy only.
    Ce,
    /// Cross-entropy plus label smoothing (`alpha`).
    CeLs,
    /// Cross-entropy plus both Jeffreys terms (`alpha`, `beta`).
    CeJeffreys,
    /// Cross-entropy plus label smoothing and a full-distribution confidence penalty.
    CePereyra,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::Ce,
        LossKind::CeLs,
        LossKind::CeJeffreys,
        LossKind::CePereyra,
    ];

    pub fn objective(self, weights: LossWeights) -> Objective {
        match self {
            LossKind::Ce => Objective {
                weights: LossWeights::NONE,
                penalty: EntropyPenalty::NonTarget,
            },
            LossKind::CeLs => Objective {
                weights: LossWeights {
                    alpha: weights.alpha,
                    beta: 0.0,
                },
                penalty: EntropyPenalty::NonTarget,
            },
            LossKind::CeJeffreys => Objective {
                weights,
                penalty: EntropyPenalty::NonTarget,
            },
            LossKind::CePereyra => Objective {
                weights,
                penalty: EntropyPenalty::FullDistribution,
            },
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::CeLs => "ce_ls",
            LossKind::CeJeffreys => "ce_jeffreys",
            LossKind::CePereyra => "ce_pereyra",
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown loss kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant,
    StepDecay { factor: f64, every_n_epochs: usize },
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::StepDecay {
            factor: 0.5,
            every_n_epochs: 10,
        }
    }
}

impl LrSchedule {
    /// Learning rate for zero-based `epoch`.
    pub fn rate(&self, base: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Constant => base,
            LrSchedule::StepDecay {
                factor,
                every_n_epochs,
            } => base * factor.powi((epoch / every_n_epochs) as i32),
        }
    }

    fn validate(&self) -> Result<()> {
        if let LrSchedule::StepDecay {
            factor,
            every_n_epochs,
        } = *self
        {
            if every_n_epochs == 0 || !(factor.is_finite() && factor > 0.0) {
                return Err(Error::InvalidConfig(
                    "step decay needs factor > 0 and every_n_epochs ≥ 1".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub weights: LossWeights,
    pub aam: AamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    pub optimizer: OptimizerConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::Ce,
            weights: LossWeights::default(),
            aam: AamConfig::default(),
            epochs: 30,
            batch_size: 32,
            seed: 0,
            lr_schedule: LrSchedule::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.aam.validate()?;
        self.optimizer.validate()?;
        self.lr_schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        Ok(())
    }

    pub fn objective(&self) -> Objective {
        self.loss_kind.objective(self.weights)
    }
}

/// Mean loss decomposition over one epoch (1-based `epoch`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub ce: f64,
    pub ls_term: f64,
    pub entropy_term: f64,
    pub total: f64,
}

/// One optimizer step on a batch. Returns the batch-mean loss.
pub fn train_step(
    params: &mut NetworkParams,
    opt: &mut OptimizerState,
    inputs: &[&[f64]],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<LossBreakdown> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= params.spec.num_classes) {
        return Err(Error::TargetOutOfRange {
            target: bad,
            classes: params.spec.num_classes,
        });
    }
    let diverged = Error::NonFiniteLoss { step: opt.steps };
    let (loss, grads) = match params.loss_and_grad(inputs, labels, &cfg.objective(), &cfg.aam) {
        Ok(v) => v,
        Err(Error::NonFinite { .. }) => return Err(diverged),
        Err(e) => return Err(e),
    };
    if !loss.is_finite() || !grads.all_finite() {
        return Err(diverged);
    }
    opt.apply(params, &grads);
    if !params.tensors.all_finite() {
        return Err(diverged);
    }
    Ok(loss)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

/// Trains from a fresh initialization keyed by `cfg.seed`.
///
/// Each epoch visits the data in an order shuffled by `(seed, epoch)`.
pub fn fit(
    spec: &NetworkSpec,
    inputs: &[&[f64]],
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(NetworkParams, Vec<EpochLog>)> {
    cfg.validate()?;
    spec.validate()?;
    if inputs.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: inputs.len(),
            got: labels.len(),
        });
    }
    let mut params = init_params(spec, cfg.seed)?;
    let mut opt = OptimizerState::new(&cfg.optimizer, &params)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    if cfg.epochs > 0 && inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }

    let mut order: Vec<usize> = (0..inputs.len()).collect();
    for epoch in 0..cfg.epochs {
        opt.learning_rate = cfg.lr_schedule.rate(cfg.optimizer.learning_rate, epoch);
        order.sort_unstable();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));

        let mut sum = LossBreakdown::default();
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| inputs[i]).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let loss = train_step(&mut params, &mut opt, &xs, &ys, cfg)?;
            let w = chunk.len() as f64;
            sum.ce += w * loss.ce;
            sum.ls_term += w * loss.ls_term;
            sum.entropy_term += w * loss.entropy_term;
            sum.total += w * loss.total;
        }
        let n = inputs.len() as f64;
        history.push(EpochLog {
            epoch: epoch + 1,
            ce: sum.ce / n,
            ls_term: sum.ls_term / n,
            entropy_term: sum.entropy_term / n,
            total: sum.total / n,
        });
    }
    Ok((params, history))
}

/// Writes the loss history as `epoch,ce,ls_term,entropy_term,total`.
pub fn write_loss_history(path: &Path, history: &[EpochLog]) -> Result<()> {
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(std::fs::File::create(path)?));
    for row in history {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_history(path: &Path) -> Result<Vec<EpochLog>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Fraction of inputs whose highest cosine is at their label.
pub fn accuracy(params: &NetworkParams, inputs: &[&[f64]], labels: &[usize]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    for (x, &y) in inputs.iter().zip(labels) {
        let cos = params.cosines(&params.embed(x)?)?;
        let best = cos
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &c)| if c > acc.1 { (i, c) } else { acc })
            .0;
        correct += usize::from(best == y);
    }
    Ok(correct as f64 / inputs.len() as f64)
}
