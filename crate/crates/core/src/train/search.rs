use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{evaluate_model, train, TrainConfig, TrainError, TrialResult};
use crate::model::{EncodedDocument, FakeFlowConfig, FakeFlowModel};
use crate::tensor::{Activation, Algorithm};

/// Segment cap used when a document is a single segment.
pub const SINGLE_SEGMENT_CAP: usize = 1500;

/// Hyperparameter ranges sampled by [`random_search`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub dropout: (f64, f64),
    pub dense_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub filter_width_tuples: Vec<Vec<usize>>,
    pub filter_counts: Vec<usize>,
    pub pool_sizes: Vec<usize>,
    pub gru_units: Vec<usize>,
    pub optimizers: Vec<Algorithm>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            dropout: (0.1, 0.6),
            dense_dims: vec![8, 16, 32, 64, 128],
            activations: vec![Activation::Selu, Activation::Relu, Activation::Tanh, Activation::Elu],
            filter_width_tuples: vec![
                vec![2, 3, 4],
                vec![3, 4, 5],
                vec![4, 5, 6],
                vec![3, 5],
                vec![2, 4],
                vec![4],
                vec![5],
                vec![3, 5, 7],
                vec![3, 6],
            ],
            filter_counts: vec![4, 8, 16, 32, 64, 128],
            pool_sizes: vec![2, 3],
            gru_units: vec![8, 16, 32, 64, 128],
            optimizers: vec![Algorithm::Adam, Algorithm::Adadelta, Algorithm::Rmsprop, Algorithm::Sgd],
        }
    }
}

impl SearchSpace {
    /// One independent uniform draw per dimension, applied on top of `base`.
    /// Both dense layers draw from `dense_dims`; the fusion width follows the
    /// GRU size.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, base: &FakeFlowConfig) -> FakeFlowConfig {
        let pick = |rng: &mut R, xs: &[usize]| *xs.choose(rng).expect("non-empty dimension");
        let dropout_rate = rng.gen_range(self.dropout.0..=self.dropout.1);
        let topic_dense_dim = pick(rng, &self.dense_dims);
        let final_dense_dim = pick(rng, &self.dense_dims);
        let activation = *self.activations.choose(rng).expect("non-empty dimension");
        let cnn_filter_widths = self.filter_width_tuples.choose(rng).expect("non-empty dimension").clone();
        let cnn_filter_count = pick(rng, &self.filter_counts);
        let pool_size = pick(rng, &self.pool_sizes);
        let gru_units = pick(rng, &self.gru_units);
        let optimizer = *self.optimizers.choose(rng).expect("non-empty dimension");
        FakeFlowConfig {
            dropout_rate,
            topic_dense_dim,
            final_dense_dim,
            activation,
            cnn_filter_widths,
            cnn_filter_count,
            pool_size,
            gru_units,
            fused_dense_dim: 2 * gru_units,
            optimizer,
            ..base.clone()
        }
    }

    /// The first `n` draws of the stream seeded by `seed`.
    pub fn sample_many(&self, base: &FakeFlowConfig, n: usize, seed: u64) -> Vec<FakeFlowConfig> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample(&mut rng, base)).collect()
    }

    pub fn contains(&self, cfg: &FakeFlowConfig) -> bool {
        (self.dropout.0..=self.dropout.1).contains(&cfg.dropout_rate)
            && self.dense_dims.contains(&cfg.topic_dense_dim)
            && self.dense_dims.contains(&cfg.final_dense_dim)
            && self.activations.contains(&cfg.activation)
            && self.filter_width_tuples.contains(&cfg.cnn_filter_widths)
            && self.filter_counts.contains(&cfg.cnn_filter_count)
            && self.pool_sizes.contains(&cfg.pool_size)
            && self.gru_units.contains(&cfg.gru_units)
            && self.optimizers.contains(&cfg.optimizer)
            && cfg.fused_dense_dim == 2 * cfg.gru_units
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best_index: usize,
    pub trials: Vec<TrialResult>,
}

impl SearchOutcome {
    pub fn best(&self) -> &TrialResult {
        &self.trials[self.best_index]
    }
}

#[derive(Serialize)]
struct TrialLogRecord<'a> {
    trial: usize,
    seed: u64,
    #[serde(flatten)]
    result: &'a TrialResult,
}

/// Builds a freshly initialized model from a configuration and seed.
pub type ModelFactory<'a> = dyn FnMut(FakeFlowConfig, u64) -> Result<FakeFlowModel, TrainError> + 'a;

fn default_factory(config: FakeFlowConfig, seed: u64) -> Result<FakeFlowModel, TrainError> {
    Ok(FakeFlowModel::new(config, seed)?)
}

/// Samples `trials` configurations from `space` and trains each with early
/// stopping. Trial `i` initializes and shuffles with `seed + i`. Each trial is
/// appended to `log` as one JSON line. Ties keep the earliest trial.
#[allow(clippy::too_many_arguments)]
pub fn random_search(
    space: &SearchSpace,
    trials: usize,
    base: &FakeFlowConfig,
    train_cfg: &TrainConfig,
    train_set: &[EncodedDocument],
    val_set: &[EncodedDocument],
    seed: u64,
    log: Option<&mut dyn Write>,
) -> Result<SearchOutcome, TrainError> {
    let (outcome, _) = random_search_with(
        space,
        trials,
        base,
        train_cfg,
        train_set,
        val_set,
        seed,
        log,
        &mut default_factory,
    )?;
    Ok(outcome)
}

/// [`random_search`] with a custom model constructor. Also returns the best
/// trial's trained model.
#[allow(clippy::too_many_arguments)]
pub fn random_search_with(
    space: &SearchSpace,
    trials: usize,
    base: &FakeFlowConfig,
    train_cfg: &TrainConfig,
    train_set: &[EncodedDocument],
    val_set: &[EncodedDocument],
    seed: u64,
    mut log: Option<&mut dyn Write>,
    make_model: &mut ModelFactory<'_>,
) -> Result<(SearchOutcome, FakeFlowModel), TrainError> {
    if trials == 0 {
        return Err(TrainError::Usage("random search needs at least one trial".into()));
    }
    let configs = space.sample_many(base, trials, seed);
    let mut results: Vec<TrialResult> = Vec::with_capacity(trials);
    let mut best_index = 0;
    let mut best_model = None;
    for (i, config) in configs.into_iter().enumerate() {
        let trial_seed = seed.wrapping_add(i as u64);
        let mut model = make_model(config, trial_seed)?;
        let cfg = TrainConfig {
            seed: trial_seed,
            ..train_cfg.clone()
        };
        let result = train(&mut model, train_set, val_set, &cfg)?;
        log::info!(
            "trial {i}: best {:.4} at epoch {} ({} epochs)",
            result.best_val_metric,
            result.best_epoch,
            result.epochs_run
        );
        if let Some(w) = log.as_mut() {
            let record = TrialLogRecord {
                trial: i,
                seed: trial_seed,
                result: &result,
            };
            serde_json::to_writer(&mut *w, &record).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
        }
        if i == 0 || cfg.monitor.better(result.best_val_metric, results[best_index].best_val_metric) {
            best_index = i;
            best_model = Some(model);
        }
        results.push(result);
    }
    let outcome = SearchOutcome {
        best_index,
        trials: results,
    };
    Ok((outcome, best_model.expect("at least one trial ran")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NResult {
    pub n_segments: usize,
    pub max_seg_len: usize,
    pub val_accuracy: f64,
    pub val_macro_f1: f64,
    pub best_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NSelection {
    pub best_n: usize,
    pub results: Vec<NResult>,
}

/// Trains one model per candidate segment count with identical seeds and
/// hyperparameters and keeps the N with the best validation macro-F1 (ties
/// go to the smaller N). `prepare(n, max_seg_len)` returns the encoded
/// train and validation splits for that segmentation. N = 1 uses a cap of
/// [`SINGLE_SEGMENT_CAP`] tokens.
pub fn select_n_segments<F>(
    candidates: &[usize],
    base: &FakeFlowConfig,
    train_cfg: &TrainConfig,
    prepare: F,
) -> Result<NSelection, TrainError>
where
    F: FnMut(usize, usize) -> Result<(Vec<EncodedDocument>, Vec<EncodedDocument>), TrainError>,
{
    select_n_segments_with(candidates, base, train_cfg, prepare, &mut default_factory)
}

/// [`select_n_segments`] with a custom model constructor.
pub fn select_n_segments_with<F>(
    candidates: &[usize],
    base: &FakeFlowConfig,
    train_cfg: &TrainConfig,
    mut prepare: F,
    make_model: &mut ModelFactory<'_>,
) -> Result<NSelection, TrainError>
where
    F: FnMut(usize, usize) -> Result<(Vec<EncodedDocument>, Vec<EncodedDocument>), TrainError>,
{
    let mut sorted: Vec<usize> = candidates.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.is_empty() || sorted[0] == 0 {
        return Err(TrainError::Usage("candidate segment counts must be non-empty and >= 1".into()));
    }
    let mut results = Vec::with_capacity(sorted.len());
    for &n in &sorted {
        let max_seg_len = if n == 1 { SINGLE_SEGMENT_CAP } else { base.max_seg_len };
        let config = FakeFlowConfig {
            n_segments: n,
            max_seg_len,
            ..base.clone()
        };
        let (train_set, val_set) = prepare(n, max_seg_len)?;
        let mut model = make_model(config, train_cfg.seed)?;
        let trial = train(&mut model, &train_set, &val_set, train_cfg)?;
        let val = evaluate_model(&model, &val_set)?;
        log::info!("N = {n}: val accuracy {:.4}, macro F1 {:.4}", val.report.accuracy, val.report.macro_f1);
        results.push(NResult {
            n_segments: n,
            max_seg_len,
            val_accuracy: val.report.accuracy,
            val_macro_f1: val.report.macro_f1,
            best_epoch: trial.best_epoch,
        });
    }
    let mut best = 0;
    for (i, r) in results.iter().enumerate() {
        if r.val_macro_f1 > results[best].val_macro_f1 {
            best = i;
        }
    }
    Ok(NSelection {
        best_n: results[best].n_segments,
        results,
    })
}
