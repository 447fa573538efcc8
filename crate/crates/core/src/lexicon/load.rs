use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{CategoryLexicon, LexiconError, LexiconSet, RatingLexicon, EMOTIONS, MORALITY, SENTIMENTS};

/// On-disk layout of a categorical lexicon.
#[derive(Clone, Debug, PartialEq, Eq, Deserialize)]
#[serde(tag = "format", rename_all = "kebab-case")]
pub enum CategoryFormat {
    /// `word<TAB>category<TAB>flag`, only rows with flag 1 are kept.
    Nrc,
    /// `word<TAB>category`.
    WordCategory,
    /// One word per line, all in a single category.
    WordList { category: String },
}

impl std::str::FromStr for CategoryFormat {
    type Err = LexiconError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "nrc" => Ok(CategoryFormat::Nrc),
            "word-category" => Ok(CategoryFormat::WordCategory),
            _ => match s.strip_prefix("word-list:") {
                Some(cat) if !cat.is_empty() => Ok(CategoryFormat::WordList { category: cat.into() }),
                _ => Err(LexiconError::Config(format!("unknown lexicon format `{s}`"))),
            },
        }
    }
}

fn source_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn load_category_lexicon(path: &Path, format: &CategoryFormat) -> Result<CategoryLexicon, LexiconError> {
    let text = fs::read_to_string(path)?;
    parse_category_lexicon(&source_name(path), &text, format)
}

pub(crate) fn parse_category_lexicon(
    name: &str,
    text: &str,
    format: &CategoryFormat,
) -> Result<CategoryLexicon, LexiconError> {
    let mut lex = CategoryLexicon::new(name);
    let err = |line: usize, message: String| LexiconError::Parse {
        source_name: name.to_string(),
        line,
        message,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        match format {
            CategoryFormat::Nrc => {
                if cols.len() != 3 {
                    return Err(err(i + 1, format!("expected 3 tab-separated columns, found {}", cols.len())));
                }
                match cols[2] {
                    "1" => lex.insert(cols[1], cols[0]),
                    "0" => {}
                    other => return Err(err(i + 1, format!("flag must be 0 or 1, found `{other}`"))),
                }
            }
            CategoryFormat::WordCategory => {
                if cols.len() != 2 || cols[0].is_empty() || cols[1].is_empty() {
                    return Err(err(i + 1, "expected `word<TAB>category`".into()));
                }
                lex.insert(cols[1], cols[0]);
            }
            CategoryFormat::WordList { category } => {
                if cols.len() != 1 {
                    return Err(err(i + 1, "expected a single word per line".into()));
                }
                lex.insert(category, cols[0]);
            }
        }
    }
    if lex.categories.is_empty() {
        return Err(err(0, "lexicon has no categories".into()));
    }
    Ok(lex)
}

pub fn load_rating_lexicon(path: &Path) -> Result<RatingLexicon, LexiconError> {
    let text = fs::read_to_string(path)?;
    parse_rating_lexicon(&source_name(path), &text)
}

pub(crate) fn parse_rating_lexicon(name: &str, text: &str) -> Result<RatingLexicon, LexiconError> {
    let mut ratings = HashMap::new();
    let err = |line: usize, message: String| LexiconError::Parse {
        source_name: name.to_string(),
        line,
        message,
    };
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 2 || cols[0].is_empty() {
            return Err(err(i + 1, "expected `word<TAB>rating`".into()));
        }
        let rating: f64 = cols[1]
            .parse()
            .map_err(|_| err(i + 1, format!("rating `{}` is not a number", cols[1])))?;
        if !rating.is_finite() || rating < 0.0 {
            return Err(err(i + 1, format!("rating {rating} must be finite and non-negative")));
        }
        let word = cols[0].to_lowercase();
        if ratings.insert(word.clone(), rating).is_some() {
            log::warn!("{name}: duplicate word `{word}` on line {}, keeping the last rating", i + 1);
        }
    }
    Ok(RatingLexicon {
        name: name.to_string(),
        ratings,
    })
}

#[derive(Clone, Debug, Deserialize)]
pub struct CategoryEntry {
    pub path: PathBuf,
    #[serde(flatten)]
    pub format: CategoryFormat,
}

#[derive(Clone, Debug, Deserialize)]
pub struct RatingEntry {
    pub path: PathBuf,
}

/// TOML manifest naming the six lexicon files. Relative paths resolve
/// against the manifest's directory.
///
/// ```toml
/// [emotions]
/// path = "nrc.tsv"
/// format = "nrc"
///
/// [hyperbolic]
/// path = "hyperbolic.txt"
/// format = "word-list"
/// category = "hyperbolic"
/// ```
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconManifest {
    pub emotions: CategoryEntry,
    pub sentiment: CategoryEntry,
    pub morality: CategoryEntry,
    pub imageability: RatingEntry,
    pub abstractness: RatingEntry,
    pub hyperbolic: CategoryEntry,
}

impl LexiconManifest {
    pub fn from_toml_str(text: &str) -> Result<Self, LexiconError> {
        toml::from_str(text).map_err(|e| LexiconError::Config(e.to_string()))
    }
}

pub fn load_lexicon_set(manifest_path: &Path) -> Result<LexiconSet, LexiconError> {
    let manifest = LexiconManifest::from_toml_str(&fs::read_to_string(manifest_path)?)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let cat = |e: &CategoryEntry| load_category_lexicon(&resolve(&e.path), &e.format);
    let emotions = cat(&manifest.emotions)?.restrict(&EMOTIONS);
    let sentiment = cat(&manifest.sentiment)?.restrict(&SENTIMENTS);
    let morality = cat(&manifest.morality)?.restrict(&MORALITY);
    let hyperbolic = cat(&manifest.hyperbolic)?;
    let imageability = load_rating_lexicon(&resolve(&manifest.imageability.path))?;
    let abstractness = load_rating_lexicon(&resolve(&manifest.abstractness.path))?;
    for (what, lex) in [("emotions", &emotions), ("sentiment", &sentiment), ("morality", &morality)] {
        if lex.categories.is_empty() {
            return Err(LexiconError::Config(format!("{what} lexicon has none of the expected categories")));
        }
    }
    Ok(LexiconSet::new(emotions, sentiment, morality, imageability, abstractness, hyperbolic))
}
