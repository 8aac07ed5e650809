//! Dataset ingestion and synthesis: UCR tab-separated univariate files,
//! UEA `.ts` multivariate files, and a seeded cylinder-bell-funnel generator
//! for desk-scale runs. Parsers are pure functions over input text; callers
//! own file IO.

pub mod cbf;
pub mod ts;
pub mod ucr;

pub use cbf::{generate_cbf, sample_cbf, CbfDraw, CbfKind, SyntheticSpec};
pub use ts::{format_uea_ts, parse_uea_ts, TsHeader};
pub use ucr::{format_ucr_tsv, parse_ucr_tsv};

use crate::series::{ClassLabel, Dataset, SeriesError, TimeSeries};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("no data lines found")]
    Empty,
    #[error("line {line}: expected {expected} values, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {column}: cannot parse {token:?} as a number")]
    BadNumber {
        line: usize,
        column: usize,
        token: String,
    },
    #[error("line {line}: no values after the label")]
    MissingValues { line: usize },
    #[error("missing @data section")]
    MissingData,
    #[error("@classLabel header missing or declares no labels")]
    MissingClassLabels,
    #[error("line {line}: dimension {dim} has {found} values, expected {expected}")]
    UnequalDims {
        line: usize,
        dim: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: label {label:?} not declared in the @classLabel header")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: expected `values:...:label` with at least one dimension")]
    MalformedLine { line: usize },
    #[error("header declares univariate data but line {line} carries {found} dimensions")]
    UnivariateMismatch { line: usize, found: usize },
    #[error("timestamped .ts data is not supported")]
    Timestamps,
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// One parsed file: samples with dense label indices plus the vocabulary the
/// indices refer to (distinct raw labels, sorted lexicographically).
#[derive(Debug, Clone)]
pub struct LabeledSplit {
    pub samples: Vec<(TimeSeries, usize)>,
    pub labels: Vec<ClassLabel>,
}

impl LabeledSplit {
    /// Raw label name of one sample.
    pub fn label_name(&self, sample: usize) -> &str {
        &self.labels[self.samples[sample].1].name
    }
}

/// Build the sorted dense vocabulary for a set of raw label names.
pub(crate) fn index_labels(raw: &[String]) -> Vec<ClassLabel> {
    let mut names: Vec<&String> = raw.iter().collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .enumerate()
        .map(|(index, name)| ClassLabel {
            index,
            name: name.clone(),
        })
        .collect()
}

/// Combine separately parsed TRAIN and TEST files into one [`Dataset`],
/// re-indexing both against the union vocabulary.
pub fn into_dataset(train: LabeledSplit, test: LabeledSplit) -> Result<Dataset, SeriesError> {
    let raw: Vec<String> = train
        .labels
        .iter()
        .chain(test.labels.iter())
        .map(|l| l.name.clone())
        .collect();
    let vocab = index_labels(&raw);
    let remap = |split: LabeledSplit| -> Vec<(TimeSeries, usize)> {
        split
            .samples
            .into_iter()
            .map(|(series, old)| {
                let name = &split.labels[old].name;
                // index_labels output is sorted by name, so lookup always hits
                let new = vocab.iter().position(|l| &l.name == name).unwrap();
                (series, new)
            })
            .collect()
    };
    Dataset::new(remap(train), remap(test), vocab)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::TimeSeries;

    fn split(labels: &[&str], value: f64) -> LabeledSplit {
        let vocab = index_labels(&labels.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        let samples = labels
            .iter()
            .map(|name| {
                let idx = vocab.iter().position(|l| &l.name == name).unwrap();
                (TimeSeries::univariate(vec![value, value]).unwrap(), idx)
            })
            .collect();
        LabeledSplit {
            samples,
            labels: vocab,
        }
    }

    #[test]
    fn union_vocabulary_is_sorted_and_remapped() {
        let train = split(&["b", "c"], 0.0);
        let test = split(&["a", "c"], 1.0);
        let ds = into_dataset(train, test).unwrap();
        let names: Vec<&str> = ds.labels().iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
        assert_eq!(ds.train()[0].1, 1); // "b"
        assert_eq!(ds.test()[0].1, 0); // "a"
        assert_eq!(ds.test()[1].1, 2); // "c"
    }
}
