//! UEA `.ts` format: `@`-prefixed header (case-insensitive keywords), then an
//! `@data` section of `dim1values:dim2values:...:label` lines with
//! comma-separated values per dimension.
//!
//! Support is limited to equal-length, class-labeled data without timestamps,
//! which covers the univariate and multivariate archive files this tool
//! targets.

use super::{index_labels, LabeledSplit, ParseError};
use crate::series::{ClassLabel, TimeSeries};
use std::fmt::Write as _;

/// Parsed `.ts` header fields. `dimensions` is derived from the first data
/// line, not declared.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsHeader {
    pub problem_name: String,
    pub univariate: bool,
    /// Class labels as declared on the `@classLabel` line, original order.
    pub class_labels: Vec<String>,
    pub dimensions: usize,
}

/// Parse one `.ts` file into its header and labeled samples. Labels are
/// indexed lexicographically over the declared vocabulary, matching the
/// `.tsv` parser's ordering rule.
pub fn parse_uea_ts(text: &str) -> Result<(TsHeader, LabeledSplit), ParseError> {
    let mut problem_name = String::new();
    let mut univariate = false;
    let mut declared: Vec<String> = Vec::new();
    let mut in_data = false;
    let mut shape: Option<(usize, usize)> = None; // (T, d)
    let mut raw_labels: Vec<String> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new(); // row-major T x d

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.trim_end_matches('\r').trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !in_data {
            let (keyword, rest) = match line.split_once(char::is_whitespace) {
                Some((k, r)) => (k, r.trim()),
                None => (line, ""),
            };
            match keyword.to_ascii_lowercase().as_str() {
                "@problemname" => problem_name = rest.to_string(),
                "@univariate" => univariate = rest.eq_ignore_ascii_case("true"),
                "@timestamps" => {
                    if rest.eq_ignore_ascii_case("true") {
                        return Err(ParseError::Timestamps);
                    }
                }
                "@classlabel" => {
                    let mut tokens = rest.split_whitespace();
                    let enabled = tokens
                        .next()
                        .map(|t| t.eq_ignore_ascii_case("true"))
                        .unwrap_or(false);
                    if enabled {
                        declared = tokens.map(|t| t.to_string()).collect();
                    }
                }
                "@data" => {
                    if declared.is_empty() {
                        return Err(ParseError::MissingClassLabels);
                    }
                    in_data = true;
                }
                _ => {} // tolerate @seriesLength, @equalLength, @missing, ...
            }
            continue;
        }

        // data line: d value blocks, then the label
        let mut blocks: Vec<&str> = line.split(':').collect();
        if blocks.len() < 2 {
            return Err(ParseError::MalformedLine { line: line_no });
        }
        let label = blocks.pop().unwrap().trim();
        if !declared.iter().any(|l| l == label) {
            return Err(ParseError::UnknownLabel {
                line: line_no,
                label: label.to_string(),
            });
        }
        let d = blocks.len();
        if univariate && d != 1 {
            return Err(ParseError::UnivariateMismatch {
                line: line_no,
                found: d,
            });
        }
        let mut dims: Vec<Vec<f64>> = Vec::with_capacity(d);
        for (dim_idx, block) in blocks.iter().enumerate() {
            let mut values = Vec::new();
            for (offset, token) in block.split(',').enumerate() {
                let token = token.trim();
                let value: f64 = token.parse().map_err(|_| ParseError::BadNumber {
                    line: line_no,
                    column: offset + 1,
                    token: token.to_string(),
                })?;
                values.push(value);
            }
            if let Some(first) = dims.first() {
                if values.len() != first.len() {
                    return Err(ParseError::UnequalDims {
                        line: line_no,
                        dim: dim_idx + 1,
                        expected: first.len(),
                        found: values.len(),
                    });
                }
            }
            dims.push(values);
        }
        let t_len = dims[0].len();
        match shape {
            None => shape = Some((t_len, d)),
            Some(expected) if expected != (t_len, d) => {
                return Err(ParseError::Series(
                    crate::series::SeriesError::ShapeMismatch {
                        a: expected,
                        b: (t_len, d),
                    },
                ));
            }
            Some(_) => {}
        }
        // interleave dimension blocks into the row-major T x d layout
        let mut values = Vec::with_capacity(t_len * d);
        for t in 0..t_len {
            for dim in &dims {
                values.push(dim[t]);
            }
        }
        raw_labels.push(label.to_string());
        rows.push(values);
    }

    if !in_data {
        return Err(ParseError::MissingData);
    }
    if rows.is_empty() {
        return Err(ParseError::Empty);
    }
    let (t_len, d) = shape.unwrap();
    let labels = index_labels(&raw_labels);
    let samples = rows
        .into_iter()
        .zip(raw_labels.iter())
        .map(|(values, raw)| {
            let index = labels.iter().position(|l| &l.name == raw).unwrap();
            Ok((TimeSeries::new(values, t_len, d)?, index))
        })
        .collect::<Result<Vec<_>, ParseError>>()?;
    Ok((
        TsHeader {
            problem_name,
            univariate,
            class_labels: declared,
            dimensions: d,
        },
        LabeledSplit { samples, labels },
    ))
}

/// Serialize a header and samples back to `.ts` text (shortest round-trip
/// decimals, `\n` endings).
pub fn format_uea_ts(
    header: &TsHeader,
    samples: &[(TimeSeries, usize)],
    labels: &[ClassLabel],
) -> String {
    let mut out = String::new();
    writeln!(out, "@problemName {}", header.problem_name).unwrap();
    writeln!(out, "@univariate {}", header.univariate).unwrap();
    write!(out, "@classLabel true").unwrap();
    for name in &header.class_labels {
        write!(out, " {name}").unwrap();
    }
    out.push('\n');
    out.push_str("@data\n");
    for (series, label) in samples {
        for ch in 0..series.channels() {
            for t in 0..series.t_len() {
                if t > 0 {
                    out.push(',');
                }
                write!(out, "{}", series.value(t, ch)).unwrap();
            }
            out.push(':');
        }
        out.push_str(&labels[*label].name);
        out.push('\n');
    }
    out
}
