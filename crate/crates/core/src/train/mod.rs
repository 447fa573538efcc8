//! Mini-batch training with early stopping, random hyperparameter search,
//! and selection of the number of segments.

mod search;

pub use search::{
    random_search, random_search_with, select_n_segments, select_n_segments_with, ModelFactory, NResult, NSelection,
    SearchOutcome, SearchSpace, SINGLE_SEGMENT_CAP,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{compute_metrics, EvalError, EvaluationReport};
use crate::model::{EncodedDocument, FakeFlowConfig, FakeFlowModel, ModelError};
use crate::tensor::{OptimizerState, Tape, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Validation quantity watched by early stopping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    ValMacroF1,
    ValLoss,
}

impl Monitor {
    pub fn as_str(self) -> &'static str {
        match self {
            Monitor::ValMacroF1 => "val_macro_f1",
            Monitor::ValLoss => "val_loss",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Monitor::ValMacroF1
    }

    /// True when `a` is strictly better than `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        if self.higher_is_better() {
            a > b
        } else {
            a < b
        }
    }
}

impl std::str::FromStr for Monitor {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "val_macro_f1" | "macro_f1" | "f1" => Ok(Monitor::ValMacroF1),
            "val_loss" | "loss" => Ok(Monitor::ValLoss),
            other => Err(format!("unknown monitored metric `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    /// `None` uses the optimizer's default rate.
    pub learning_rate: Option<f64>,
    pub seed: u64,
    pub monitor: Monitor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 50,
            patience: 4,
            batch_size: 32,
            learning_rate: None,
            seed: 0,
            monitor: Monitor::ValMacroF1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Usage("batch_size must be >= 1".into()));
        }
        if self.max_epochs == 0 || self.patience >= self.max_epochs {
            return Err(TrainError::Usage(format!(
                "need 0 < patience < max_epochs, got patience {} and max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(TrainError::Usage(format!("learning rate {lr} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Stops after `patience` consecutive epochs without strict improvement.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    monitor: Monitor,
    patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(monitor: Monitor, patience: usize) -> Self {
        Self {
            monitor,
            patience,
            best: None,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> StopDecision {
        let improved = match self.best {
            None => true,
            Some((_, b)) => self.monitor.better(value, b),
        };
        if improved {
            self.best = Some((epoch, value));
            self.stale = 0;
            StopDecision::Improved
        } else {
            self.stale += 1;
            if self.stale >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }

    /// `(epoch, value)` of the best observation so far.
    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config: FakeFlowConfig,
    pub train_config: TrainConfig,
    pub best_epoch: usize,
    pub best_val_metric: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub history: Vec<EpochRecord>,
}

/// Predictions, mean cross-entropy and metrics on labelled documents.
pub struct Evaluation {
    pub report: EvaluationReport,
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub probabilities: Vec<Vec<f64>>,
}

pub fn evaluate_model(model: &FakeFlowModel, docs: &[EncodedDocument]) -> Result<Evaluation, TrainError> {
    let mut gold = Vec::with_capacity(docs.len());
    let mut predictions = Vec::with_capacity(docs.len());
    let mut probabilities = Vec::with_capacity(docs.len());
    let mut loss = 0.0;
    for doc in docs {
        let label = doc
            .label
            .ok_or_else(|| TrainError::Usage(format!("document `{}` has no label", doc.id)))?;
        let p = model.predict_proba(doc)?;
        loss -= p[label.index()].max(f64::MIN_POSITIVE).ln();
        gold.push(label.index());
        predictions.push(crate::model::argmax_class(&p));
        probabilities.push(p);
    }
    let report = compute_metrics(&gold, &predictions, model.config.n_classes)?;
    Ok(Evaluation {
        report,
        loss: loss / docs.len().max(1) as f64,
        predictions,
        probabilities,
    })
}

/// Trains `model` in place and leaves it holding the best-epoch parameters.
pub fn train(
    model: &mut FakeFlowModel,
    train_set: &[EncodedDocument],
    val_set: &[EncodedDocument],
    cfg: &TrainConfig,
) -> Result<TrialResult, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::Usage(format!(
            "training needs non-empty splits, got {} train and {} validation documents",
            train_set.len(),
            val_set.len()
        )));
    }
    let algorithm = model.config.optimizer;
    let lr = cfg.learning_rate.unwrap_or(algorithm.default_learning_rate());
    let mut optimizer = OptimizerState::new(algorithm, lr, &model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopper = EarlyStopping::new(cfg.monitor, cfg.patience);
    let mut best_params = model.params.snapshot();
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&EncodedDocument> = chunk.iter().map(|&i| &train_set[i]).collect();
            let grads = {
                let mut tape = Tape::new(&model.params);
                let (loss, probs) = model.batch_loss(&mut tape, &batch, true, &mut rng)?;
                loss_sum += tape.value(loss).data()[0] * batch.len() as f64;
                for (doc, p) in batch.iter().zip(&probs) {
                    let predicted = crate::model::argmax_class(tape.value(*p).data());
                    correct += usize::from(doc.label.map(|l| l.index()) == Some(predicted));
                }
                tape.backward(loss)?
            };
            model.params.accumulate(&grads);
            optimizer.step(&mut model.params);
        }
        let val = evaluate_model(model, val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            val_loss: val.loss,
            val_accuracy: val.report.accuracy,
            val_macro_f1: val.report.macro_f1,
        };
        log::debug!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, val loss {:.4} acc {:.3} f1 {:.3}",
            record.train_loss,
            record.train_accuracy,
            record.val_loss,
            record.val_accuracy,
            record.val_macro_f1
        );
        let monitored = match cfg.monitor {
            Monitor::ValMacroF1 => record.val_macro_f1,
            Monitor::ValLoss => record.val_loss,
        };
        history.push(record);
        match stopper.observe(epoch, monitored) {
            StopDecision::Improved => best_params = model.params.snapshot(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }
    model.params.restore(&best_params)?;
    let (best_epoch, best_val_metric) = stopper.best().expect("at least one epoch ran");
    Ok(TrialResult {
        config: model.config.clone(),
        train_config: cfg.clone(),
        best_epoch,
        best_val_metric,
        epochs_run: history.len(),
        stopped_early,
        checkpoint: None,
        history,
    })
}
