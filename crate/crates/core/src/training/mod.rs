//! Joint training of the flow, the Hurwitz factors and the reconstruction map.

mod adam;
mod objective;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::AdamState;
pub use objective::{LossBreakdown, LossWeights, Objective, ParamLayout, Sample, MIN_JACOBIAN_DET};

use crate::data::Dataset;
use crate::diff::DiffError;
use crate::flow::{FlowArchitecture, FlowConfig, FlowError};
use crate::hurwitz::DEFAULT_EPSILON;
use crate::metrics;
use crate::monomial::{MonomialError, MultiIndexBasis};
use crate::predictor::{LinearPredictor, PredictorError};

/// Largest sample count trained full-batch when no batch size is given.
pub const FULL_BATCH_LIMIT: usize = 6300;
/// Minibatch size used above [`FULL_BATCH_LIMIT`].
pub const DEFAULT_MINIBATCH: usize = 1024;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("dataset must be preprocessed (scaled) before training")]
    NotPreprocessed,
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite value during gradient evaluation ({source}); loss so far: {loss:?}")]
    NonFinite { source: DiffError, loss: LossBreakdown },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64, history: Box<History> },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Monomial(#[from] MonomialError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Maximum total order of the monomial lift.
    pub p_bar: usize,
    pub flow: FlowConfig,
    pub epochs: usize,
    /// `None` trains full-batch up to 6300 samples and with minibatches of
    /// 1024 above that.
    pub batch_size: Option<usize>,
    pub learning_rate: f64,
    pub weights: LossWeights,
    pub epsilon: f64,
    pub seed: u64,
    /// Standard deviation of the perturbation of `N = I`, `Q = I`, `R = 0`.
    pub init_noise: f64,
    /// Epochs between rollout evaluations for model selection.
    pub selection_interval: usize,
    /// Loss above which training is aborted.
    pub divergence_threshold: f64,
    /// Samples per gradient tape.
    pub chunk_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            p_bar: 8,
            flow: FlowConfig::default(),
            epochs: 3000,
            batch_size: None,
            learning_rate: 1e-3,
            weights: LossWeights::default(),
            epsilon: DEFAULT_EPSILON,
            seed: 0,
            init_noise: 1e-2,
            selection_interval: 50,
            divergence_threshold: 1e6,
            chunk_size: 32,
        }
    }
}

impl TrainConfig {
    /// Default budget for synthetic oracle datasets: a small flow and a
    /// fourth-order lift, 3000 full-batch epochs.
    pub fn synthetic() -> Self {
        Self { p_bar: 4, flow: FlowConfig { layers: 4, hidden: vec![16], final_tanh: false }, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: &str| Err(TrainError::Config(m.to_string()));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.p_bar == 0 {
            return err("p_bar must be at least 1");
        }
        if self.flow.layers == 0 || self.flow.hidden.contains(&0) {
            return err("flow needs at least one layer and nonzero hidden widths");
        }
        if self.epochs == 0 {
            return err("epochs must be at least 1");
        }
        if self.batch_size == Some(0) {
            return err("batch_size must be at least 1");
        }
        if !positive(self.learning_rate) || !positive(self.epsilon) || !positive(self.divergence_threshold) {
            return err("learning_rate, epsilon and divergence_threshold must be positive");
        }
        if ![self.weights.prediction, self.weights.invariance, self.weights.identity].into_iter().all(positive) {
            return err("loss weights must be positive");
        }
        if !(self.init_noise.is_finite() && self.init_noise >= 0.0) {
            return err("init_noise must be non-negative");
        }
        if self.selection_interval == 0 || self.chunk_size == 0 {
            return err("selection_interval and chunk_size must be at least 1");
        }
        Ok(())
    }

    pub fn effective_batch_size(&self, samples: usize) -> usize {
        self.batch_size.unwrap_or(if samples <= FULL_BATCH_LIMIT { samples } else { DEFAULT_MINIBATCH }).max(1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Training rollout RMSE, on selection epochs only.
    pub rmse: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn write_csv_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "epoch,total,prediction_reconstruction,invariance,near_identity,guard_events,rmse")?;
        for r in &self.records {
            let rmse = r.rmse.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.epoch,
                r.loss.total,
                r.loss.prediction_reconstruction,
                r.loss.invariance,
                r.loss.near_identity,
                r.loss.guard_events,
                rmse
            )?;
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let file = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv_to(file)
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Observed after every optimizer step.
pub struct StepReport<'a> {
    pub epoch: usize,
    pub loss: &'a LossBreakdown,
    pub params: &'a [f64],
    pub objective: &'a Objective,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the lowest training rollout RMSE.
    pub model: LinearPredictor,
    pub params: Vec<f64>,
    pub history: History,
    pub best_epoch: usize,
    pub best_rmse: f64,
}

/// All `(x, ẋ)` pairs of a dataset.
pub fn samples(dataset: &Dataset) -> Vec<Sample> {
    dataset
        .demos
        .iter()
        .flat_map(|d| d.pos.iter().zip(&d.vel).map(|(x, v)| Sample { x: x.clone(), v: v.clone() }))
        .collect()
}

/// Pooled RMSE of rollouts from each demo's first sample against the demo,
/// in the dataset's (scaled) units.
pub fn rollout_rmse(model: &LinearPredictor, dataset: &Dataset) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    let mut count = 0;
    for d in &dataset.demos {
        let pred = model.simulate_scaled(&d.pos[0], &d.relative_times())?;
        let r = metrics::rmse(&pred, &d.pos).map_err(|e| TrainError::Config(e.to_string()))?;
        sum += r * r * d.len() as f64;
        count += d.len();
    }
    Ok((sum / count as f64).sqrt())
}

/// Builds the objective described by `config` for state dimension `dim`.
pub fn objective(config: &TrainConfig, dim: usize) -> Result<Objective, TrainError> {
    config.validate()?;
    let arch = FlowArchitecture::alternating(dim, &config.flow)?;
    let basis = MultiIndexBasis::enumerate(dim, config.p_bar)?;
    Objective::new(arch, basis, config.weights, config.epsilon, config.chunk_size)
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with_observer(dataset, config, |_| {})
}

/// Adam on the summed loss. Every `selection_interval` epochs (and at the
/// last epoch) the training rollout RMSE is computed and the best
/// parameters so far are kept. Deterministic given the seed.
pub fn train_with_observer(
    dataset: &Dataset,
    config: &TrainConfig,
    mut observer: impl FnMut(&StepReport<'_>),
) -> Result<TrainOutcome, TrainError> {
    let scaling = dataset.scaling.clone().ok_or(TrainError::NotPreprocessed)?;
    let obj = objective(config, dataset.dim)?;
    let all = samples(dataset);
    let batch_size = config.effective_batch_size(all.len());
    let mut params = obj.initial_params(config.seed, config.init_noise);
    let mut adam = AdamState::new(params.len());
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..all.len()).collect();
    let mut history = History::default();
    let mut best: Option<(f64, usize, Vec<f64>)> = None;

    for epoch in 1..=config.epochs {
        let mut epoch_loss = LossBreakdown::default();
        if batch_size < all.len() {
            order.shuffle(&mut shuffle);
        }
        for idx in order.chunks(batch_size) {
            let owned;
            let batch: &[Sample] = if batch_size >= all.len() {
                &all
            } else {
                owned = idx.iter().map(|&k| all[k].clone()).collect::<Vec<_>>();
                &owned
            };
            let (loss, grad) = obj.gradient(&params, batch)?;
            if !loss.total.is_finite() || loss.total > config.divergence_threshold {
                history.records.push(EpochRecord { epoch, loss, rmse: None });
                return Err(TrainError::Diverged { epoch, loss: loss.total, history: Box::new(history) });
            }
            adam.step(&mut params, &grad, config.learning_rate);
            observer(&StepReport { epoch, loss: &loss, params: &params, objective: &obj });
            epoch_loss.accumulate(&loss);
        }
        let rmse = if epoch % config.selection_interval == 0 || epoch == config.epochs {
            let r = rollout_rmse(&obj.predictor(&params, scaling.clone())?, dataset)?;
            if r.is_finite() && best.as_ref().is_none_or(|(b, _, _)| r < *b) {
                best = Some((r, epoch, params.clone()));
            }
            Some(r)
        } else {
            None
        };
        history.records.push(EpochRecord { epoch, loss: epoch_loss, rmse });
    }

    let (best_rmse, best_epoch, best_params) = best.unwrap_or((f64::NAN, config.epochs, params));
    let model = obj.predictor(&best_params, scaling)?.with_demo_time(Some(dataset.demo_time()));
    Ok(TrainOutcome { model, params: best_params, history, best_epoch, best_rmse })
}
