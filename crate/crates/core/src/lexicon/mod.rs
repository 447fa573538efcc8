//! Affect lexicons and the 23-dimensional per-segment feature matrix.
//!
//! Feature order is fixed: 8 emotions, 2 sentiment polarities, 10 moral
//! foundation categories, imageability, abstractness, hyperbolic.

mod features;
mod load;

pub use features::{extract_affect, AffectFeatureMatrix};
pub use load::{load_category_lexicon, load_lexicon_set, load_rating_lexicon, CategoryFormat, LexiconManifest};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_FEATURES: usize = 23;

pub const EMOTIONS: [&str; 8] = [
    "anger",
    "anticipation",
    "disgust",
    "fear",
    "joy",
    "sadness",
    "surprise",
    "trust",
];
pub const SENTIMENTS: [&str; 2] = ["positive", "negative"];
pub const MORALITY: [&str; 10] = [
    "care",
    "harm",
    "fairness",
    "unfairness",
    "loyalty",
    "betrayal",
    "authority",
    "subversion",
    "sanctity",
    "degradation",
];
pub const IMAGEABILITY: usize = 20;
pub const ABSTRACTNESS: usize = 21;
pub const HYPERBOLIC: usize = 22;

const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "anger",
    "anticipation",
    "disgust",
    "fear",
    "joy",
    "sadness",
    "surprise",
    "trust",
    "positive",
    "negative",
    "care",
    "harm",
    "fairness",
    "unfairness",
    "loyalty",
    "betrayal",
    "authority",
    "subversion",
    "sanctity",
    "degradation",
    "imageability",
    "abstractness",
    "hyperbolic",
];

pub fn feature_names() -> &'static [&'static str; NUM_FEATURES] {
    &FEATURE_NAMES
}

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{source_name} line {line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("lexicon configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Words grouped by category; a word may sit in several categories.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryLexicon {
    pub name: String,
    pub categories: BTreeMap<String, BTreeSet<String>>,
}

impl CategoryLexicon {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            categories: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, category: &str, word: &str) {
        self.categories
            .entry(category.trim().to_lowercase())
            .or_default()
            .insert(word.trim().to_lowercase());
    }

    pub fn with(mut self, category: &str, words: &[&str]) -> Self {
        for w in words {
            self.insert(category, w);
        }
        self
    }

    pub fn contains(&self, category: &str, word: &str) -> bool {
        self.categories.get(category).is_some_and(|s| s.contains(word))
    }

    /// Keeps only the named categories.
    pub fn restrict(mut self, keep: &[&str]) -> Self {
        self.categories.retain(|c, _| keep.contains(&c.as_str()));
        self
    }

    pub fn word_count(&self) -> usize {
        self.categories.values().map(BTreeSet::len).sum()
    }
}

/// Non-negative real rating per word.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RatingLexicon {
    pub name: String,
    pub ratings: HashMap<String, f64>,
}

impl RatingLexicon {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ratings: HashMap::new(),
        }
    }

    pub fn with(mut self, entries: &[(&str, f64)]) -> Self {
        for (w, r) in entries {
            self.ratings.insert(w.to_lowercase(), *r);
        }
        self
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }
}

#[derive(Clone, Debug, Default)]
struct WordEntry {
    features: Vec<u8>,
    imageability: Option<f64>,
    abstractness: Option<f64>,
}

/// The six lexicon resources with a precomputed word index.
#[derive(Clone, Debug)]
pub struct LexiconSet {
    pub emotions: CategoryLexicon,
    pub sentiment: CategoryLexicon,
    pub morality: CategoryLexicon,
    pub imageability: RatingLexicon,
    pub abstractness: RatingLexicon,
    pub hyperbolic: CategoryLexicon,
    index: HashMap<String, WordEntry>,
}

impl LexiconSet {
    /// Categories outside the fixed feature set are ignored; the hyperbolic
    /// lexicon counts every word regardless of its category label.
    pub fn new(
        emotions: CategoryLexicon,
        sentiment: CategoryLexicon,
        morality: CategoryLexicon,
        imageability: RatingLexicon,
        abstractness: RatingLexicon,
        hyperbolic: CategoryLexicon,
    ) -> Self {
        let mut index: HashMap<String, WordEntry> = HashMap::new();
        let mut add_block = |lex: &CategoryLexicon, names: &[&str], offset: usize| {
            for (k, name) in names.iter().enumerate() {
                if let Some(words) = lex.categories.get(*name) {
                    for w in words {
                        index.entry(w.clone()).or_default().features.push((offset + k) as u8);
                    }
                }
            }
        };
        add_block(&emotions, &EMOTIONS, 0);
        add_block(&sentiment, &SENTIMENTS, EMOTIONS.len());
        add_block(&morality, &MORALITY, EMOTIONS.len() + SENTIMENTS.len());
        let hyper_words: BTreeSet<&String> = hyperbolic.categories.values().flatten().collect();
        for w in hyper_words {
            index.entry(w.clone()).or_default().features.push(HYPERBOLIC as u8);
        }
        for (w, r) in &imageability.ratings {
            index.entry(w.clone()).or_default().imageability = Some(*r);
        }
        for (w, r) in &abstractness.ratings {
            index.entry(w.clone()).or_default().abstractness = Some(*r);
        }
        for e in index.values_mut() {
            e.features.sort_unstable();
        }
        Self {
            emotions,
            sentiment,
            morality,
            imageability,
            abstractness,
            hyperbolic,
            index,
        }
    }

    /// Indices of the count-based features a token belongs to.
    pub fn feature_hits(&self, token: &str) -> &[u8] {
        self.index.get(token).map_or(&[], |e| e.features.as_slice())
    }

    pub fn ratings(&self, token: &str) -> (Option<f64>, Option<f64>) {
        self.index
            .get(token)
            .map_or((None, None), |e| (e.imageability, e.abstractness))
    }

    /// Emotion, morality and hyperbolic categories a token matches, in
    /// feature order. Used for text highlighting.
    pub fn highlight_categories(&self, token: &str) -> Vec<&'static str> {
        self.feature_hits(token)
            .iter()
            .map(|&f| f as usize)
            .filter(|&f| f < EMOTIONS.len() || (10..20).contains(&f) || f == HYPERBOLIC)
            .map(|f| FEATURE_NAMES[f])
            .collect()
    }
}
