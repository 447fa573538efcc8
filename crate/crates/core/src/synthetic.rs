//! Generated corpora whose classes differ only in where affect words occur,
//! with a matching toy lexicon set. Used by tests, the acceptance suite and
//! the CLI demo.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Label, RawArticle};
use crate::lexicon::{CategoryLexicon, LexiconSet, RatingLexicon};

pub const FEAR_WORDS: [&str; 6] = ["dread", "panic", "terror", "threat", "alarm", "horror"];
pub const JOY_WORDS: [&str; 6] = ["delight", "cheer", "bliss", "glee", "smile", "festive"];
const FILLER_WORDS: usize = 120;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub docs_per_class: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fear and joy occurrences per document, identical for both classes.
    pub affect_tokens: usize,
    /// Share of a fake document's fear (joy) tokens placed in its first
    /// (last) `edge_fraction` of positions.
    pub concentration: f64,
    pub edge_fraction: f64,
    /// Years assigned round-robin to the documents of each class.
    pub years: Vec<i32>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            docs_per_class: 1000,
            min_len: 150,
            max_len: 250,
            affect_tokens: 12,
            concentration: 0.85,
            edge_fraction: 0.3,
            years: Vec::new(),
            seed: 0,
        }
    }
}

pub fn filler_word(i: usize) -> String {
    format!("w{i:03}")
}

/// Positions for `k` tokens: a `concentration` share drawn from
/// `[lo, hi)` and the rest from the remainder of the document.
fn place<R: Rng>(rng: &mut R, len: usize, k: usize, lo: usize, hi: usize, concentration: f64, taken: &mut [bool]) -> Vec<usize> {
    let inside = (k as f64 * concentration).round() as usize;
    let mut out = Vec::with_capacity(k);
    let draw = |rng: &mut R, from_edge: bool, taken: &mut [bool]| loop {
        let p = rng.gen_range(0..len);
        if (from_edge == (lo..hi).contains(&p)) && !taken[p] {
            taken[p] = true;
            return p;
        }
    };
    for i in 0..k {
        out.push(draw(rng, i < inside, taken));
    }
    out
}

fn free_position<R: Rng>(rng: &mut R, len: usize, taken: &mut [bool]) -> usize {
    loop {
        let p = rng.gen_range(0..len);
        if !taken[p] {
            taken[p] = true;
            return p;
        }
    }
}

/// Balanced corpus: fake documents front-load fear words and back-load joy
/// words; real documents scatter the same number of each uniformly.
pub fn generate_corpus(spec: &SyntheticSpec) -> Vec<RawArticle> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut docs = Vec::with_capacity(2 * spec.docs_per_class);
    for i in 0..spec.docs_per_class {
        for label in Label::ALL {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let mut words: Vec<String> = (0..len).map(|_| filler_word(rng.gen_range(0..FILLER_WORDS))).collect();
            let mut taken = vec![false; len];
            let edge = ((len as f64) * spec.edge_fraction).round() as usize;
            let k = spec.affect_tokens;
            let (fear_pos, joy_pos) = match label {
                Label::Fake => {
                    let f = place(&mut rng, len, k, 0, edge, spec.concentration, &mut taken);
                    let j = place(&mut rng, len, k, len - edge, len, spec.concentration, &mut taken);
                    (f, j)
                }
                Label::Real => {
                    let f = (0..k).map(|_| free_position(&mut rng, len, &mut taken)).collect();
                    let j = (0..k).map(|_| free_position(&mut rng, len, &mut taken)).collect();
                    (f, j)
                }
            };
            for p in fear_pos {
                words[p] = FEAR_WORDS.choose(&mut rng).expect("non-empty").to_string();
            }
            for p in joy_pos {
                words[p] = JOY_WORDS.choose(&mut rng).expect("non-empty").to_string();
            }
            let mut article = RawArticle::new(format!("{}-{i:05}", label.as_str()), words.join(" "))
                .with_label(label)
                .with_domain(format!("{}{}.example", label.as_str(), i % 7));
            if !spec.years.is_empty() {
                article = article.with_year(spec.years[i % spec.years.len()]);
            }
            docs.push(article);
        }
    }
    docs
}

/// Toy lexicons: fear and joy words, a few shared sentiment and morality
/// entries, ratings for some filler words, and one hyperbolic word.
pub fn lexicons() -> LexiconSet {
    let emotions = CategoryLexicon::new("emotions")
        .with("fear", &FEAR_WORDS)
        .with("joy", &JOY_WORDS)
        .with("surprise", &["alarm", "delight"]);
    let sentiment = CategoryLexicon::new("sentiment")
        .with("negative", &FEAR_WORDS)
        .with("positive", &JOY_WORDS);
    let morality = CategoryLexicon::new("morality").with("harm", &["threat", "terror"]).with("care", &["smile"]);
    let imageability = RatingLexicon::new("imageability").with(&[("w000", 0.8), ("w001", 0.4), ("smile", 0.9)]);
    let abstractness = RatingLexicon::new("abstractness").with(&[("w002", 0.6), ("dread", 0.3)]);
    let hyperbolic = CategoryLexicon::new("hyperbolic").with("hyperbolic", &["horror", "bliss"]);
    LexiconSet::new(emotions, sentiment, morality, imageability, abstractness, hyperbolic)
}

/// Writes [`lexicons`] as files plus a manifest and returns the manifest path.
pub fn write_lexicon_files(dir: &Path) -> std::io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let lex = lexicons();
    let mut nrc = String::new();
    for block in [&lex.emotions, &lex.sentiment] {
        for (cat, words) in &block.categories {
            for w in words {
                nrc.push_str(&format!("{w}\t{cat}\t1\n"));
            }
        }
    }
    fs::write(dir.join("emotions.tsv"), &nrc)?;
    let mut mfd = String::new();
    for (cat, words) in &lex.morality.categories {
        for w in words {
            mfd.push_str(&format!("{w}\t{cat}\n"));
        }
    }
    fs::write(dir.join("morality.tsv"), mfd)?;
    let ratings = |r: &RatingLexicon| {
        let mut rows: Vec<_> = r.ratings.iter().collect();
        rows.sort_by(|a, b| a.0.cmp(b.0));
        rows.iter().map(|(w, v)| format!("{w}\t{v}\n")).collect::<String>()
    };
    fs::write(dir.join("imageability.tsv"), ratings(&lex.imageability))?;
    fs::write(dir.join("abstractness.tsv"), ratings(&lex.abstractness))?;
    let hyper: String = lex.hyperbolic.categories.values().flatten().map(|w| format!("{w}\n")).collect();
    fs::write(dir.join("hyperbolic.txt"), hyper)?;
    let manifest = "\
[emotions]
path = \"emotions.tsv\"
format = \"nrc\"

[sentiment]
path = \"emotions.tsv\"
format = \"nrc\"

[morality]
path = \"morality.tsv\"
format = \"word-category\"

[imageability]
path = \"imageability.tsv\"

[abstractness]
path = \"abstractness.tsv\"

[hyperbolic]
path = \"hyperbolic.txt\"
format = \"word-list\"
category = \"hyperbolic\"
";
    let path = dir.join("lexicons.toml");
    fs::write(&path, manifest)?;
    Ok(path)
}
