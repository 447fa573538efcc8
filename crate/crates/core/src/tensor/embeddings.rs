use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use super::TensorError;

/// Reads whitespace-separated word vectors (`word v1 v2 ... vD` per line).
/// A leading `count dim` header line, as written by word2vec, is skipped.
/// When `wanted` is given, other words are not retained.
pub fn read_word_vectors<R: BufRead>(
    reader: R,
    wanted: Option<&HashSet<String>>,
) -> Result<(usize, HashMap<String, Vec<f64>>), TensorError> {
    let mut dim: Option<usize> = None;
    let mut out = HashMap::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        let Some(word) = parts.next() else { continue };
        let rest: Vec<&str> = parts.collect();
        if lineno == 0 && rest.len() == 1 && word.parse::<usize>().is_ok() && rest[0].parse::<usize>().is_ok() {
            continue;
        }
        let d = *dim.get_or_insert(rest.len());
        if rest.len() != d || d == 0 {
            return Err(TensorError::Format(format!(
                "line {}: expected {} values, found {}",
                lineno + 1,
                d,
                rest.len()
            )));
        }
        if wanted.is_some_and(|w| !w.contains(word)) {
            continue;
        }
        let values = rest
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| TensorError::Format(format!("line {}: {e}", lineno + 1)))?;
        out.insert(word.to_string(), values);
    }
    Ok((dim.unwrap_or(0), out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_and_without_header() {
        let text = "2 3\nfoo 0.1 0.2 0.3\nbar 1 2 3\n";
        let (d, v) = read_word_vectors(text.as_bytes(), None).unwrap();
        assert_eq!(d, 3);
        assert_eq!(v["bar"], vec![1.0, 2.0, 3.0]);

        let wanted: HashSet<String> = ["foo".to_string()].into();
        let (_, v) = read_word_vectors("foo 1 2\nbaz 3 4\n".as_bytes(), Some(&wanted)).unwrap();
        assert_eq!(v.len(), 1);
    }

    #[test]
    fn ragged_rows_are_rejected() {
        assert!(read_word_vectors("a 1 2\nb 1\n".as_bytes(), None).is_err());
    }
}
