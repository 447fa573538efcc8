use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EvalError;

/// Items that may carry a class index.
pub trait Labelled {
    fn class(&self) -> Option<usize>;
}

impl Labelled for crate::corpus::RawArticle {
    fn class(&self) -> Option<usize> {
        self.label.map(|l| l.index())
    }
}

impl Labelled for crate::model::EncodedDocument {
    fn class(&self) -> Option<usize> {
        self.label.map(|l| l.index())
    }
}

/// Accuracy for every ordered (train year, test year) pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossYearMatrix {
    pub years: Vec<i32>,
    /// `accuracy[train][test]`; `None` on the diagonal.
    pub accuracy: Vec<Vec<Option<f64>>>,
    /// Mean over the off-diagonal entries of each test-year column.
    pub column_averages: Vec<f64>,
    pub skipped_years: Vec<i32>,
}

impl CrossYearMatrix {
    /// Builds the matrix from off-diagonal values; diagonal inputs are ignored.
    pub fn from_values(years: Vec<i32>, values: Vec<Vec<f64>>) -> Result<Self, EvalError> {
        let k = years.len();
        if k < 2 || values.len() != k || values.iter().any(|r| r.len() != k) {
            return Err(EvalError::Usage(format!("need a square matrix over {k} >= 2 years")));
        }
        let accuracy = values
            .into_iter()
            .enumerate()
            .map(|(i, row)| row.into_iter().enumerate().map(|(j, v)| (i != j).then_some(v)).collect())
            .collect();
        Ok(Self::with_averages(years, accuracy, Vec::new()))
    }

    fn with_averages(years: Vec<i32>, accuracy: Vec<Vec<Option<f64>>>, skipped_years: Vec<i32>) -> Self {
        let k = years.len();
        let column_averages = (0..k)
            .map(|j| {
                let col: Vec<f64> = (0..k).filter(|&i| i != j).filter_map(|i| accuracy[i][j]).collect();
                col.iter().sum::<f64>() / col.len() as f64
            })
            .collect();
        Self {
            years,
            accuracy,
            column_averages,
            skipped_years,
        }
    }

    /// Train years as rows, test years as columns, diagonal printed as 0.00,
    /// followed by an `Average` row. Values use two decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("train\\test");
        for y in &self.years {
            out.push_str(&format!(",{y}"));
        }
        out.push('\n');
        for (i, y) in self.years.iter().enumerate() {
            out.push_str(&y.to_string());
            for v in &self.accuracy[i] {
                out.push_str(&format!(",{:.2}", v.unwrap_or(0.0)));
            }
            out.push('\n');
        }
        out.push_str("Average");
        for a in &self.column_averages {
            out.push_str(&format!(",{a:.2}"));
        }
        out.push('\n');
        out
    }
}

/// Trains on each year and tests on every other year. `run(train, test)`
/// returns the test accuracy. Years whose items cover fewer than two classes
/// are skipped with a warning.
pub fn cross_year<T, F>(by_year: &BTreeMap<i32, Vec<T>>, mut run: F) -> Result<CrossYearMatrix, EvalError>
where
    T: Labelled,
    F: FnMut(i32, &[T], i32, &[T]) -> Result<f64, EvalError>,
{
    let mut years = Vec::new();
    let mut skipped = Vec::new();
    for (&year, items) in by_year {
        let classes: BTreeSet<usize> = items.iter().filter_map(Labelled::class).collect();
        if classes.len() < 2 {
            log::warn!("skipping year {year}: {} class(es) present", classes.len());
            skipped.push(year);
        } else {
            years.push(year);
        }
    }
    if years.len() < 2 {
        return Err(EvalError::Usage(format!(
            "cross-year evaluation needs at least 2 usable years, found {}",
            years.len()
        )));
    }
    let k = years.len();
    let mut accuracy = vec![vec![None; k]; k];
    for (i, &train_year) in years.iter().enumerate() {
        for (j, &test_year) in years.iter().enumerate() {
            if i == j {
                continue;
            }
            let acc = run(train_year, &by_year[&train_year], test_year, &by_year[&test_year])?;
            log::info!("train {train_year} test {test_year}: accuracy {acc:.4}");
            accuracy[i][j] = Some(acc);
        }
    }
    Ok(CrossYearMatrix::with_averages(years, accuracy, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, RawArticle};

    fn published() -> CrossYearMatrix {
        let values = vec![
            vec![0.00, 0.82, 0.74, 0.76, 0.78, 0.74],
            vec![0.84, 0.00, 0.79, 0.76, 0.81, 0.74],
            vec![0.79, 0.81, 0.00, 0.82, 0.80, 0.82],
            vec![0.80, 0.76, 0.87, 0.00, 0.85, 0.79],
            vec![0.79, 0.82, 0.76, 0.80, 0.00, 0.85],
            vec![0.79, 0.75, 0.81, 0.83, 0.83, 0.00],
        ];
        CrossYearMatrix::from_values((2013..=2018).collect(), values).unwrap()
    }

    #[test]
    fn published_matrix_averages() {
        let m = published();
        let rounded: Vec<String> = m.column_averages.iter().map(|a| format!("{a:.2}")).collect();
        assert_eq!(rounded, ["0.80", "0.79", "0.79", "0.79", "0.81", "0.79"]);
        let csv = m.to_csv();
        assert!(csv.starts_with("train\\test,2013,2014,2015,2016,2017,2018\n2013,0.00,0.82"));
        assert!(csv.ends_with("Average,0.80,0.79,0.79,0.79,0.81,0.79\n"));
    }

    #[test]
    fn runs_every_ordered_pair_and_skips_single_class_years() {
        let art = |id: &str, l: Label| RawArticle::new(id, "x").with_label(l);
        let mut by_year = BTreeMap::new();
        by_year.insert(2013, vec![art("a", Label::Real), art("b", Label::Fake)]);
        by_year.insert(2014, vec![art("c", Label::Real), art("d", Label::Fake)]);
        by_year.insert(2015, vec![art("e", Label::Real)]);
        let mut calls = Vec::new();
        let m = cross_year(&by_year, |tr, _, te, _| {
            calls.push((tr, te));
            Ok(if tr == 2013 { 0.6 } else { 0.9 })
        })
        .unwrap();
        assert_eq!(calls, vec![(2013, 2014), (2014, 2013)]);
        assert_eq!(m.years, vec![2013, 2014]);
        assert_eq!(m.skipped_years, vec![2015]);
        assert_eq!(m.accuracy[0][0], None);
        assert_eq!(m.column_averages, vec![0.9, 0.6]);
    }
}
