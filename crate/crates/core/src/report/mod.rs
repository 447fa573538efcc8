//! Analysis outputs: attention profiles, lexicon highlighting, per-class
//! feature flow statistics, and CSV plot data.

mod flow;
mod highlight;

pub use flow::{flow_statistics, flow_statistics_from_articles, ClassFlow, FeatureFlow, FlowStatistics};
pub use highlight::{highlight_emotions, EmotionAnnotation, EmotionSpan};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::Label;
use crate::model::{ForwardTrace, Mode};
use crate::train::NResult;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("unsupported for this mode: {0}")]
    UnsupportedMode(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Corpus(#[from] crate::corpus::CorpusError),
}

/// Producing command and configuration digest, written at the top of every
/// artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new<T: Serialize>(command: impl Into<String>, config: &T) -> Self {
        Self {
            command: command.into(),
            config_hash: config_hash(config),
        }
    }

    pub fn csv_comment(&self) -> String {
        format!("# command={} config_hash={}\n", self.command, self.config_hash)
    }

    pub fn html_comment(&self) -> String {
        format!("<!-- command={} config_hash={} -->\n", self.command, self.config_hash)
    }
}

/// Hex SHA-256 of the value's JSON serialization.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    let bytes = serde_json::to_vec(config).expect("config serializes");
    hex::encode(Sha256::digest(&bytes))
}

/// JSON artifact with its provenance.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub command: String,
    pub config_hash: String,
    pub payload: T,
}

impl<T: Serialize> Artifact<T> {
    pub fn new(provenance: &Provenance, payload: T) -> Self {
        Self {
            command: provenance.command.clone(),
            config_hash: provenance.config_hash.clone(),
            payload,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("artifact serializes");
        s.push('\n');
        s
    }
}

/// How the attention matrix is collapsed to one weight per segment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Mean of each column: attention received by each segment.
    #[default]
    Columns,
    /// Mean of each row. Rows sum to one, so this is always `1/N`.
    Rows,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionProfile {
    pub document_id: String,
    pub weights: Vec<f64>,
    pub predicted_label: Option<Label>,
    pub probability: f64,
}

pub fn attention_profile(
    document_id: impl Into<String>,
    trace: &ForwardTrace,
    aggregation: Aggregation,
) -> Result<AttentionProfile, ReportError> {
    let w = trace.attention_weights.as_ref().ok_or_else(|| {
        ReportError::UnsupportedMode(format!("{} traces carry no attention weights", trace.mode.as_str()))
    })?;
    if trace.mode == Mode::AffectOnly {
        return Err(ReportError::UnsupportedMode("affect_only".into()));
    }
    let weights = aggregate_attention(w, aggregation);
    let class = trace.predicted_class();
    Ok(AttentionProfile {
        document_id: document_id.into(),
        weights,
        predicted_label: Label::from_index(class),
        probability: trace.probabilities[class],
    })
}

pub fn aggregate_attention(matrix: &[Vec<f64>], aggregation: Aggregation) -> Vec<f64> {
    let n = matrix.len();
    match aggregation {
        Aggregation::Columns => (0..n)
            .map(|t| matrix.iter().map(|row| row[t]).sum::<f64>() / n as f64)
            .collect(),
        Aggregation::Rows => matrix.iter().map(|row| row.iter().sum::<f64>() / row.len() as f64).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    NSweep,
    FlowCurve,
    AttentionBar,
}

impl std::str::FromStr for PlotKind {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n_sweep" | "n-sweep" => Ok(PlotKind::NSweep),
            "flow_curve" | "flow-curve" => Ok(PlotKind::FlowCurve),
            "attention_bar" | "attention-bar" => Ok(PlotKind::AttentionBar),
            other => Err(ReportError::Usage(format!("unknown plot kind `{other}`"))),
        }
    }
}

/// Inputs for [`emit_plot_data`].
pub enum PlotData<'a> {
    /// Columns `n_segments,accuracy,f1`.
    NSweep(&'a [NResult]),
    /// Columns `segment_index,class,feature,mean`, one row per segment,
    /// class and requested feature.
    FlowCurve {
        stats: &'a FlowStatistics,
        features: &'a [&'a str],
    },
    /// Columns `segment_index,weight`.
    AttentionBar(&'a AttentionProfile),
}

impl PlotData<'_> {
    pub fn kind(&self) -> PlotKind {
        match self {
            PlotData::NSweep(_) => PlotKind::NSweep,
            PlotData::FlowCurve { .. } => PlotKind::FlowCurve,
            PlotData::AttentionBar(_) => PlotKind::AttentionBar,
        }
    }
}

/// CSV text preceded by a provenance comment line. Segment indices are
/// 1-based and numbers use the shortest round-trip representation.
pub fn emit_plot_data(data: &PlotData<'_>, provenance: &Provenance) -> Result<String, ReportError> {
    let mut out = provenance.csv_comment();
    match data {
        PlotData::NSweep(rows) => {
            out.push_str("n_segments,accuracy,f1\n");
            for r in rows.iter() {
                out.push_str(&format!("{},{},{}\n", r.n_segments, r.val_accuracy, r.val_macro_f1));
            }
        }
        PlotData::FlowCurve { stats, features } => {
            out.push_str("segment_index,class,feature,mean\n");
            for (label, class) in &stats.classes {
                for name in features.iter() {
                    let f = class
                        .feature(name)
                        .ok_or_else(|| ReportError::Usage(format!("unknown feature `{name}`")))?;
                    for (i, m) in f.per_segment_means.iter().enumerate() {
                        out.push_str(&format!("{},{},{},{}\n", i + 1, label, name, m));
                    }
                }
            }
        }
        PlotData::AttentionBar(profile) => {
            out.push_str("segment_index,weight\n");
            for (i, w) in profile.weights.iter().enumerate() {
                out.push_str(&format!("{},{}\n", i + 1, w));
            }
        }
    }
    Ok(out)
}
