use serde::{Deserialize, Serialize};

use super::Provenance;
use crate::corpus::TokenizedDocument;
use crate::lexicon::LexiconSet;

/// Token range `[start, end)` and the categories it matched.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionSpan {
    pub start: usize,
    pub end: usize,
    pub token: String,
    pub categories: Vec<String>,
}

/// Standoff annotation of a tokenized document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionAnnotation {
    pub n_tokens: usize,
    pub spans: Vec<EmotionSpan>,
}

/// One single-token span per token that matches an emotion, morality or
/// hyperbolic category, listing every category it matches.
pub fn highlight_emotions(doc: &TokenizedDocument, lex: &LexiconSet) -> EmotionAnnotation {
    let spans = doc
        .tokens
        .iter()
        .enumerate()
        .filter_map(|(i, tok)| {
            let cats = lex.highlight_categories(tok);
            (!cats.is_empty()).then(|| EmotionSpan {
                start: i,
                end: i + 1,
                token: tok.clone(),
                categories: cats.into_iter().map(String::from).collect(),
            })
        })
        .collect();
    EmotionAnnotation {
        n_tokens: doc.len(),
        spans,
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

impl EmotionAnnotation {
    /// Count of spans carrying `category`.
    pub fn count(&self, category: &str) -> usize {
        self.spans.iter().filter(|s| s.categories.iter().any(|c| c == category)).count()
    }

    /// The document as HTML; each matched token is wrapped in a `span` with
    /// one `emo-<category>` class per category.
    pub fn to_html(&self, doc: &TokenizedDocument, provenance: &Provenance) -> String {
        let mut out = provenance.html_comment();
        out.push_str("<div class=\"fakeflow-highlight\">");
        let mut spans = self.spans.iter().peekable();
        for (i, tok) in doc.tokens.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            match spans.peek() {
                Some(s) if s.start == i => {
                    let classes: Vec<String> = s.categories.iter().map(|c| format!("emo-{c}")).collect();
                    out.push_str(&format!(
                        "<span class=\"{}\" title=\"{}\">{}</span>",
                        classes.join(" "),
                        s.categories.join(", "),
                        escape(tok)
                    ));
                    spans.next();
                }
                _ => out.push_str(&escape(tok)),
            }
        }
        out.push_str("</div>\n");
        out
    }
}
