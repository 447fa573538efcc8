use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::CorpusError;

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

/// Lowercased word tokens of one article.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizedDocument {
    pub tokens: Vec<String>,
}

impl TokenizedDocument {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Whitespace tokenizer: lowercases and strips non-alphanumeric characters
/// from both ends of each token. Inner punctuation (`soul-stirring`,
/// `don't`) is kept. Shared by the lexicon matcher and the vocabulary.
pub fn tokenize(text: &str) -> Result<TokenizedDocument, CorpusError> {
    let tokens: Vec<String> = text
        .split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()))
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect();
    if tokens.is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    Ok(TokenizedDocument { tokens })
}

/// An article cut into exactly `n_segments` contiguous chunks, each padded
/// to `max_seg_len` entries. `T` is a token string before encoding and a
/// vocabulary id after.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentedDocument<T> {
    pub n_segments: usize,
    pub max_seg_len: usize,
    pub segments: Vec<Vec<T>>,
    /// Number of real (unpadded) tokens at the head of each segment.
    pub lengths: Vec<usize>,
    /// Token count of the document before truncation.
    pub doc_length: usize,
}

impl<T> SegmentedDocument<T> {
    /// `n_segments x max_seg_len` matrix with 1 on real tokens and 0 on padding.
    pub fn mask(&self) -> Vec<Vec<u8>> {
        self.lengths
            .iter()
            .map(|&l| (0..self.max_seg_len).map(|i| u8::from(i < l)).collect())
            .collect()
    }

    /// Real tokens of segment `i`.
    pub fn tokens(&self, i: usize) -> &[T] {
        &self.segments[i][..self.lengths[i]]
    }

    /// Unmasked tokens of all segments, in order.
    pub fn unmasked(&self) -> impl Iterator<Item = &T> {
        (0..self.n_segments).flat_map(move |i| self.tokens(i).iter())
    }
}

/// Truncates to `n_segments * max_seg_len` tokens and splits the rest into
/// `n_segments` chunks of `ceil(L / n_segments)` tokens; trailing chunks may
/// be shorter or empty.
pub fn segment(
    doc: &TokenizedDocument,
    n_segments: usize,
    max_seg_len: usize,
) -> Result<SegmentedDocument<String>, CorpusError> {
    if n_segments == 0 || max_seg_len == 0 {
        return Err(CorpusError::Config(format!(
            "segmentation needs n_segments >= 1 and max_seg_len >= 1, got {n_segments} and {max_seg_len}"
        )));
    }
    if doc.is_empty() {
        return Err(CorpusError::EmptyDocument);
    }
    let kept = doc.len().min(n_segments * max_seg_len);
    let chunk = kept.div_ceil(n_segments);
    let mut segments = Vec::with_capacity(n_segments);
    let mut lengths = Vec::with_capacity(n_segments);
    for i in 0..n_segments {
        let lo = (i * chunk).min(kept);
        let hi = ((i + 1) * chunk).min(kept);
        let mut seg: Vec<String> = doc.tokens[lo..hi].to_vec();
        lengths.push(seg.len());
        seg.resize(max_seg_len, String::new());
        segments.push(seg);
    }
    Ok(SegmentedDocument {
        n_segments,
        max_seg_len,
        segments,
        lengths,
        doc_length: doc.len(),
    })
}

/// Token to id map. Id 0 is padding and id 1 the unknown token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
}

impl From<VocabularyRepr> for Vocabulary {
    fn from(r: VocabularyRepr) -> Self {
        Self::from_tokens(r.tokens.into_iter().skip(2).collect())
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        Self { tokens: v.tokens }
    }
}

impl Vocabulary {
    /// Builds a vocabulary whose real tokens get ids 2, 3, ... in the given order.
    pub fn from_tokens(tokens: Vec<String>) -> Self {
        let mut all = vec!["<pad>".to_string(), "<unk>".to_string()];
        let mut index = HashMap::with_capacity(tokens.len());
        for t in tokens {
            if !index.contains_key(&t) {
                index.insert(t.clone(), all.len());
                all.push(t);
            }
        }
        Self { tokens: all, index }
    }

    /// Total number of ids including padding and unknown.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Real tokens in id order (ids >= 2).
    pub fn words(&self) -> &[String] {
        &self.tokens[2..]
    }
}

/// Assigns ids to tokens seen at least `min_count` times, most frequent
/// first, ties broken lexicographically.
pub fn build_vocabulary(corpus: &[TokenizedDocument], min_count: usize) -> Result<Vocabulary, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for t in &doc.tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string()).collect()))
}

/// Maps tokens to ids; padding positions become [`PAD_ID`].
pub fn encode(seg: &SegmentedDocument<String>, vocab: &Vocabulary) -> SegmentedDocument<usize> {
    let segments = seg
        .segments
        .iter()
        .zip(&seg.lengths)
        .map(|(s, &len)| {
            s.iter()
                .enumerate()
                .map(|(i, t)| if i < len { vocab.id(t) } else { PAD_ID })
                .collect()
        })
        .collect();
    SegmentedDocument {
        n_segments: seg.n_segments,
        max_seg_len: seg.max_seg_len,
        segments,
        lengths: seg.lengths.clone(),
        doc_length: seg.doc_length,
    }
}
