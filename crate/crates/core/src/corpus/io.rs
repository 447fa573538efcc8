use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;

use super::{CorpusError, ListName, RawArticle, SourceListEntry};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One JSON object per line: `{id, text, label?, domain?, year?, split?}`.
    JsonLines,
    /// CSV with a header naming the same fields.
    Csv,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::JsonLines,
        }
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<RawArticle>, CorpusError> {
    let file = File::open(path)?;
    let articles = match format {
        CorpusFormat::JsonLines => read_jsonl(BufReader::new(file))?,
        CorpusFormat::Csv => read_csv(file)?,
    };
    Ok(articles)
}

fn validate(article: RawArticle, line: usize, ids: &mut HashSet<String>) -> Result<RawArticle, CorpusError> {
    if article.text.trim().is_empty() {
        return Err(CorpusError::Parse {
            line,
            message: "field `text` is empty".into(),
        });
    }
    if !ids.insert(article.id.clone()) {
        return Err(CorpusError::DuplicateId(article.id));
    }
    Ok(article)
}

pub(crate) fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<RawArticle>, CorpusError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let article: RawArticle = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(validate(article, i + 1, &mut ids)?);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct CsvArticle {
    id: String,
    text: String,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    domain: Option<String>,
    #[serde(default)]
    year: Option<i32>,
    #[serde(default)]
    split: Option<String>,
}

fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<RawArticle>, CorpusError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, rec) in rdr.deserialize::<CsvArticle>().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CorpusError::Parse {
            line,
            message: e.to_string(),
        })?;
        let parse_err = |message: String| CorpusError::Parse { line, message };
        let label = match rec.label.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(l) => Some(l.parse().map_err(parse_err)?),
        };
        let split_hint = match rec.split.as_deref().map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(
                serde_json::from_value(serde_json::Value::String(s.to_lowercase()))
                    .map_err(|e| CorpusError::Parse { line, message: e.to_string() })?,
            ),
        };
        let article = RawArticle {
            id: rec.id,
            text: rec.text,
            label,
            domain: rec.domain.filter(|d| !d.is_empty()),
            year: rec.year,
            split_hint,
        };
        out.push(validate(article, line, &mut ids)?);
    }
    Ok(out)
}

/// Writes articles as JSON Lines.
pub fn write_corpus(path: &Path, articles: &[RawArticle]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path)?);
    for a in articles {
        serde_json::to_writer(&mut w, a).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Deserialize)]
struct SourceRow {
    domain: String,
    list: String,
    category: String,
}

/// Reads a source list CSV with header `domain,list,category`.
pub fn load_source_lists(path: &Path) -> Result<Vec<SourceListEntry>, CorpusError> {
    read_source_lists(File::open(path)?)
}

pub(crate) fn read_source_lists<R: std::io::Read>(reader: R) -> Result<Vec<SourceListEntry>, CorpusError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<SourceRow>().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| CorpusError::Parse {
            line,
            message: e.to_string(),
        })?;
        let list_name: ListName = rec.list.parse().map_err(|message| CorpusError::Parse { line, message })?;
        out.push(SourceListEntry {
            domain: rec.domain,
            list_name,
            raw_category: rec.category,
        });
    }
    Ok(out)
}
