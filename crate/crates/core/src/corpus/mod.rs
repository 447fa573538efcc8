//! Articles, tokenization, segmentation, vocabularies, and dataset
//! construction (domain-level label projection from news source lists).

mod dataset;
mod io;
mod text;

pub use dataset::{
    assemble_test_set, merge_source_lists, normalize_domain, project_and_sample, split_train_val, DomainConflict,
    DomainVerdict, LabelMapping, ListName, MapTo, MergeOutcome, SampleConfig, SampleOutcome, SourceListEntry,
};
pub use io::{load_corpus, load_source_lists, write_corpus, CorpusFormat};
pub use text::{
    build_vocabulary, encode, segment, tokenize, SegmentedDocument, TokenizedDocument, Vocabulary, PAD_ID, UNK_ID,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("document is empty after tokenization")]
    EmptyDocument,
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("configuration error: {0}")]
    Config(String),
    #[error("stratification error: {0}")]
    Stratification(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate article id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Real, Label::Fake];

    /// Class index used by the classifier: real = 0, fake = 1.
    pub fn index(self) -> usize {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Real),
            1 => Some(Label::Fake),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Real => "real",
            Label::Fake => "fake",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "real" | "0" | "true" => Ok(Label::Real),
            "fake" | "1" | "false" => Ok(Label::Fake),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitHint {
    Train,
    Test,
}

/// One article as read from a corpus file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawArticle {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(default, rename = "split", skip_serializing_if = "Option::is_none")]
    pub split_hint: Option<SplitHint>,
}

impl RawArticle {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label: None,
            domain: None,
            year: None,
            split_hint: None,
        }
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        self.domain = Some(domain.into());
        self
    }

    pub fn with_year(mut self, year: i32) -> Self {
        self.year = Some(year);
        self
    }
}
