//! UCR archive tab-separated format: one series per line, class label first,
//! then T float values. Always univariate.

use super::{index_labels, LabeledSplit, ParseError};
use crate::series::{ClassLabel, TimeSeries};
use std::fmt::Write as _;

/// Parse one UCR `.tsv` file. Blank lines and `#` comments are skipped; all
/// data lines must carry the same value count. Labels are mapped to dense
/// indices in lexicographic order of the distinct raw labels.
pub fn parse_ucr_tsv(text: &str) -> Result<LabeledSplit, ParseError> {
    let mut raw_labels: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut expected: Option<usize> = None;

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let label = fields.next().expect("split yields at least one field");
        let mut values = Vec::new();
        for (offset, token) in fields.enumerate() {
            let token = token.trim();
            let value: f64 = token.parse().map_err(|_| ParseError::BadNumber {
                line: line_no,
                // column 1 is the label field
                column: offset + 2,
                token: token.to_string(),
            })?;
            values.push(value);
        }
        if values.is_empty() {
            return Err(ParseError::MissingValues { line: line_no });
        }
        match expected {
            None => expected = Some(values.len()),
            Some(count) if count != values.len() => {
                return Err(ParseError::RaggedRow {
                    line: line_no,
                    expected: count,
                    found: values.len(),
                });
            }
            Some(_) => {}
        }
        raw_labels.push(label.trim().to_string());
        rows.push(values);
    }

    if rows.is_empty() {
        return Err(ParseError::Empty);
    }
    let labels = index_labels(&raw_labels);
    let samples = rows
        .into_iter()
        .zip(raw_labels.iter())
        .map(|(values, raw)| {
            let index = labels.iter().position(|l| &l.name == raw).unwrap();
            Ok((TimeSeries::univariate(values)?, index))
        })
        .collect::<Result<Vec<_>, ParseError>>()?;
    Ok(LabeledSplit { samples, labels })
}

/// Serialize samples back to UCR `.tsv` lines (label, then values, tab
/// separated; shortest round-trip decimals; `\n` endings).
pub fn format_ucr_tsv(samples: &[(TimeSeries, usize)], labels: &[ClassLabel]) -> String {
    let mut out = String::new();
    for (series, label) in samples {
        out.push_str(&labels[*label].name);
        for t in 0..series.t_len() {
            write!(out, "\t{}", series.value(t, 0)).unwrap();
        }
        out.push('\n');
    }
    out
}
