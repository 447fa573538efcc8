use serde::{Deserialize, Serialize};

use super::{feature_names, LexiconSet, ABSTRACTNESS, IMAGEABILITY, NUM_FEATURES};
use crate::corpus::SegmentedDocument;

/// Per-segment affect features, one row of 23 values per segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffectFeatureMatrix {
    pub values: Vec<[f64; NUM_FEATURES]>,
}

impl AffectFeatureMatrix {
    pub fn n_segments(&self) -> usize {
        self.values.len()
    }

    pub fn feature_names(&self) -> &'static [&'static str; NUM_FEATURES] {
        feature_names()
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[feature]).collect()
    }

    /// Row-major `[N * 23]` copy.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().flat_map(|r| r.iter().copied()).collect()
    }
}

/// Term frequencies per segment divided by the pre-truncation document
/// length. Rating features sum the ratings of matched occurrences.
pub fn extract_affect(seg: &SegmentedDocument<String>, lex: &LexiconSet) -> AffectFeatureMatrix {
    let norm = seg.doc_length.max(1) as f64;
    let values = (0..seg.n_segments)
        .map(|i| {
            let mut counts = [0usize; NUM_FEATURES];
            let mut imageability = 0.0;
            let mut abstractness = 0.0;
            for tok in seg.tokens(i) {
                for &f in lex.feature_hits(tok) {
                    counts[f as usize] += 1;
                }
                let (img, abs) = lex.ratings(tok);
                if let Some(r) = img {
                    imageability += r;
                }
                if let Some(r) = abs {
                    abstractness += r;
                }
            }
            let mut row = [0.0; NUM_FEATURES];
            for (v, &c) in row.iter_mut().zip(counts.iter()) {
                *v = c as f64 / norm;
            }
            row[IMAGEABILITY] = imageability / norm;
            row[ABSTRACTNESS] = abstractness / norm;
            row
        })
        .collect();
    AffectFeatureMatrix { values }
}
