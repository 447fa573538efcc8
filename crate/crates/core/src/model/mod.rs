//! The segment-flow classifier: a CNN topic branch, a Bi-GRU affect branch,
//! context self-attention, and a softmax output layer, plus the two
//! single-branch ablations.

mod network;

pub use network::{argmax_class, encode_articles, encode_document, EncodedDocument, FakeFlowModel, ForwardTrace, ForwardVars, Layout};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::NUM_FEATURES;
use crate::tensor::{Activation, Algorithm, TensorError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unsupported for this mode: {0}")]
    UnsupportedMode(String),
    #[error("malformed model file: {0}")]
    Format(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which branches feed the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Full,
    TopicOnly,
    AffectOnly,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Full, Mode::TopicOnly, Mode::AffectOnly];

    pub fn uses_topic(self) -> bool {
        self != Mode::AffectOnly
    }

    pub fn uses_affect(self) -> bool {
        self != Mode::TopicOnly
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Full => "full",
            Mode::TopicOnly => "topic_only",
            Mode::AffectOnly => "affect_only",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").to_ascii_lowercase().as_str() {
            "full" => Ok(Mode::Full),
            "topic_only" | "topic" => Ok(Mode::TopicOnly),
            "affect_only" | "affect" => Ok(Mode::AffectOnly),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FakeFlowConfig {
    pub n_segments: usize,
    pub max_seg_len: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub cnn_filter_widths: Vec<usize>,
    pub cnn_filter_count: usize,
    pub pool_size: usize,
    /// Width of `v_topic`.
    pub topic_dense_dim: usize,
    /// Width of `v_fc`; must equal `2 * gru_units`.
    pub fused_dense_dim: usize,
    pub gru_units: usize,
    /// Width of the dense layer before the softmax layer.
    pub final_dense_dim: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
    pub optimizer: Algorithm,
    pub mode: Mode,
    pub n_classes: usize,
    pub trainable_embeddings: bool,
}

impl Default for FakeFlowConfig {
    fn default() -> Self {
        Self {
            n_segments: 10,
            max_seg_len: 800,
            vocab_size: 2,
            embed_dim: 300,
            cnn_filter_widths: vec![3, 4, 5],
            cnn_filter_count: 16,
            pool_size: 2,
            topic_dense_dim: 32,
            fused_dense_dim: 64,
            gru_units: 32,
            final_dense_dim: 32,
            dropout_rate: 0.3,
            activation: Activation::Relu,
            optimizer: Algorithm::Adam,
            mode: Mode::Full,
            n_classes: 2,
            trainable_embeddings: true,
        }
    }
}

impl FakeFlowConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("n_segments", self.n_segments),
            ("max_seg_len", self.max_seg_len),
            ("embed_dim", self.embed_dim),
            ("cnn_filter_count", self.cnn_filter_count),
            ("pool_size", self.pool_size),
            ("topic_dense_dim", self.topic_dense_dim),
            ("fused_dense_dim", self.fused_dense_dim),
            ("gru_units", self.gru_units),
            ("final_dense_dim", self.final_dense_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.vocab_size < 2 {
            return Err(ModelError::Config("vocab_size must cover <pad> and <unk>".into()));
        }
        if self.cnn_filter_widths.is_empty() || self.cnn_filter_widths.contains(&0) {
            return Err(ModelError::Config("cnn_filter_widths must be non-empty and positive".into()));
        }
        if self.fused_dense_dim != 2 * self.gru_units {
            return Err(ModelError::Config(format!(
                "fused_dense_dim ({}) must equal 2 * gru_units ({})",
                self.fused_dense_dim,
                2 * self.gru_units
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::Config(format!("dropout_rate {} outside [0, 1)", self.dropout_rate)));
        }
        if self.n_classes < 2 {
            return Err(ModelError::Config("n_classes must be >= 2".into()));
        }
        Ok(())
    }

    /// Length of the concatenated CNN feature vector.
    pub fn cnn_output_dim(&self) -> usize {
        self.cnn_filter_widths.len() * self.cnn_filter_count
    }

    /// Width of `v_concat` for the configured mode.
    pub fn concat_dim(&self) -> usize {
        match self.mode {
            Mode::Full => self.topic_dense_dim + NUM_FEATURES,
            _ => self.topic_dense_dim,
        }
    }

    /// Width of `v_compact`.
    pub fn compact_dim(&self) -> usize {
        match self.mode {
            Mode::TopicOnly => self.fused_dense_dim,
            _ => 2 * self.gru_units,
        }
    }
}
