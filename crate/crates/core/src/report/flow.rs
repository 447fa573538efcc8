use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ReportError;
use crate::corpus::{segment, tokenize, Label, RawArticle};
use crate::lexicon::{extract_affect, feature_names, AffectFeatureMatrix, LexiconSet, NUM_FEATURES};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureFlow {
    pub feature: String,
    /// Mean over documents of each segment's value.
    pub per_segment_means: Vec<f64>,
    pub mean_first: f64,
    pub mean_last: f64,
    /// Mean of `per_segment_means`.
    pub mean_all: f64,
    /// Population standard deviation of `per_segment_means`.
    pub std_across: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassFlow {
    pub n_documents: usize,
    pub features: Vec<FeatureFlow>,
}

impl ClassFlow {
    pub fn feature(&self, name: &str) -> Option<&FeatureFlow> {
        self.features.iter().find(|f| f.feature == name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowStatistics {
    pub n_segments: usize,
    pub classes: BTreeMap<Label, ClassFlow>,
    /// Classes with no documents.
    pub missing: Vec<Label>,
}

fn class_flow(mats: &[&AffectFeatureMatrix], n: usize) -> ClassFlow {
    let d = mats.len() as f64;
    let features = (0..NUM_FEATURES)
        .map(|f| {
            let per_segment_means: Vec<f64> = (0..n)
                .map(|t| mats.iter().map(|m| m.values[t][f]).sum::<f64>() / d)
                .collect();
            let mean_all = per_segment_means.iter().sum::<f64>() / n as f64;
            let var = per_segment_means.iter().map(|m| (m - mean_all).powi(2)).sum::<f64>() / n as f64;
            FeatureFlow {
                feature: feature_names()[f].to_string(),
                mean_first: per_segment_means[0],
                mean_last: per_segment_means[n - 1],
                mean_all,
                std_across: var.sqrt(),
                per_segment_means,
            }
        })
        .collect();
    ClassFlow {
        n_documents: mats.len(),
        features,
    }
}

/// Per-class flow statistics over labelled feature matrices, all with the
/// same number of segments.
pub fn flow_statistics(docs: &[(Label, &AffectFeatureMatrix)]) -> Result<FlowStatistics, ReportError> {
    let n = docs
        .first()
        .map(|(_, m)| m.n_segments())
        .ok_or_else(|| ReportError::Usage("flow statistics need at least one document".into()))?;
    if n == 0 || docs.iter().any(|(_, m)| m.n_segments() != n) {
        return Err(ReportError::Usage("all documents must have the same non-zero segment count".into()));
    }
    let mut classes = BTreeMap::new();
    let mut missing = Vec::new();
    for label in Label::ALL {
        let mats: Vec<&AffectFeatureMatrix> = docs.iter().filter(|(l, _)| *l == label).map(|(_, m)| *m).collect();
        if mats.is_empty() {
            log::warn!("no `{label}` documents for flow statistics");
            missing.push(label);
        } else {
            classes.insert(label, class_flow(&mats, n));
        }
    }
    Ok(FlowStatistics {
        n_segments: n,
        classes,
        missing,
    })
}

/// Tokenizes, segments and extracts features for labelled articles, then
/// computes [`flow_statistics`].
pub fn flow_statistics_from_articles(
    articles: &[RawArticle],
    n_segments: usize,
    max_seg_len: usize,
    lex: &LexiconSet,
) -> Result<FlowStatistics, ReportError> {
    let mut mats = Vec::with_capacity(articles.len());
    for a in articles {
        let label = a
            .label
            .ok_or_else(|| ReportError::Usage(format!("article `{}` has no label", a.id)))?;
        let seg = segment(&tokenize(&a.text)?, n_segments, max_seg_len)?;
        mats.push((label, extract_affect(&seg, lex)));
    }
    let refs: Vec<(Label, &AffectFeatureMatrix)> = mats.iter().map(|(l, m)| (*l, m)).collect();
    flow_statistics(&refs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{feature_index, CategoryLexicon, RatingLexicon};
    use crate::report::{emit_plot_data, PlotData, Provenance};
    use proptest::prelude::*;

    fn matrix(rows: &[(usize, f64)], n: usize) -> AffectFeatureMatrix {
        let mut values = vec![[0.0; NUM_FEATURES]; n];
        for (t, &(f, v)) in rows.iter().enumerate() {
            values[t][f] = v;
        }
        AffectFeatureMatrix { values }
    }

    #[test]
    fn two_document_hand_oracle() {
        // Fear, three segments. Doc A: 0.1, 0.2, 0.0; doc B: 0.3, 0.0, 0.0.
        let fear = feature_index("fear").unwrap();
        let a = matrix(&[(fear, 0.1), (fear, 0.2), (fear, 0.0)], 3);
        let b = matrix(&[(fear, 0.3), (fear, 0.0), (fear, 0.0)], 3);
        let stats = flow_statistics(&[(Label::Fake, &a), (Label::Fake, &b)]).unwrap();
        assert_eq!(stats.missing, vec![Label::Real]);
        let f = stats.classes[&Label::Fake].feature("fear").unwrap();
        // Segment means 0.2, 0.1, 0.0.
        assert!((f.mean_first - 0.2).abs() < 1e-15);
        assert_eq!(f.mean_last, 0.0);
        assert!((f.mean_all - 0.1).abs() < 1e-15);
        assert!((f.std_across - (0.02f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(stats.classes[&Label::Fake].n_documents, 2);
    }

    #[test]
    fn identical_segments_have_zero_std() {
        let m = AffectFeatureMatrix {
            values: vec![[0.25; NUM_FEATURES]; 4],
        };
        let stats = flow_statistics(&[(Label::Real, &m), (Label::Fake, &m)]).unwrap();
        for c in stats.classes.values() {
            assert!(c.features.iter().all(|f| f.std_across == 0.0));
        }
    }

    #[test]
    fn mismatched_segments_rejected() {
        let a = matrix(&[], 2);
        let b = matrix(&[], 3);
        assert!(flow_statistics(&[(Label::Real, &a), (Label::Real, &b)]).is_err());
        assert!(flow_statistics(&[]).is_err());
    }

    #[test]
    fn from_articles_uses_feature_pipeline() {
        let lex = LexiconSet::new(
            CategoryLexicon::new("e").with("fear", &["panic"]),
            CategoryLexicon::new("s").with("negative", &["panic"]),
            CategoryLexicon::new("m").with("harm", &["hit"]),
            RatingLexicon::new("i").with(&[("dog", 1.0)]),
            RatingLexicon::new("a").with(&[("idea", 1.0)]),
            CategoryLexicon::new("h").with("hyperbolic", &["huge"]),
        );
        let arts = vec![
            RawArticle::new("1", "panic a b c").with_label(Label::Fake),
            RawArticle::new("2", "a b c panic").with_label(Label::Real),
        ];
        let stats = flow_statistics_from_articles(&arts, 2, 10, &lex).unwrap();
        assert_eq!(stats.classes[&Label::Fake].feature("fear").unwrap().mean_first, 0.25);
        assert_eq!(stats.classes[&Label::Real].feature("fear").unwrap().mean_last, 0.25);
        let unlabeled = vec![RawArticle::new("3", "x")];
        assert!(flow_statistics_from_articles(&unlabeled, 2, 10, &lex).is_err());
    }

    #[test]
    fn flow_curve_rows_match_statistics() {
        let fear = feature_index("fear").unwrap();
        let mats: Vec<(Label, AffectFeatureMatrix)> = (0..6)
            .map(|i| {
                let rows: Vec<(usize, f64)> = (0..10).map(|t| (fear, ((i * 7 + t * 3) % 11) as f64 / 37.0)).collect();
                (Label::ALL[i % 2], matrix(&rows, 10))
            })
            .collect();
        let refs: Vec<(Label, &AffectFeatureMatrix)> = mats.iter().map(|(l, m)| (*l, m)).collect();
        let stats = flow_statistics(&refs).unwrap();
        let csv = emit_plot_data(
            &PlotData::FlowCurve {
                stats: &stats,
                features: &["fear"],
            },
            &Provenance::new("analyze", &0),
        )
        .unwrap();
        let rows: Vec<&str> = csv.lines().skip(2).collect();
        assert_eq!(rows.len(), 20);
        for row in rows {
            let cols: Vec<&str> = row.split(',').collect();
            let t: usize = cols[0].parse().unwrap();
            let label: Label = cols[1].parse().unwrap();
            let v: f64 = cols[3].parse().unwrap();
            let expected = stats.classes[&label].feature("fear").unwrap().per_segment_means[t - 1];
            assert_eq!(v.to_bits(), expected.to_bits());
        }
    }

    proptest! {
        #[test]
        fn mean_all_is_mean_of_segment_means(
            vals in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 5), 1..6),
        ) {
            let mats: Vec<AffectFeatureMatrix> = vals.iter().map(|v| matrix(&v.iter().map(|&x| (0, x)).collect::<Vec<_>>(), 5)).collect();
            let refs: Vec<(Label, &AffectFeatureMatrix)> = mats.iter().map(|m| (Label::Fake, m)).collect();
            let stats = flow_statistics(&refs).unwrap();
            let f = &stats.classes[&Label::Fake].features[0];
            prop_assert_eq!(f.mean_all, f.per_segment_means.iter().sum::<f64>() / 5.0);
            prop_assert!(f.std_across >= 0.0);
        }
    }
}
