//! Evaluation metrics over a batch of counterfactual results: validity
//! (classifier flips, recomputed from scratch), mean l1/l2 perturbation
//! norms, DTW plausibility against the ten nearest target-class training
//! samples, and the isolation-forest nominal fraction. Every metric is
//! computed in normalized space, under both the all-results and
//! valid-only aggregations.

pub mod iso;

pub use iso::{average_path_length, IsolationForest};

use crate::cfe::CfeResult;
use crate::nn::{Classifier, NnError};
use crate::seed::derive_seed;
use crate::series::TimeSeries;
use crate::warp::{dtw, WarpError};
use serde::Serialize;
use std::collections::BTreeMap;
use thiserror::Error;

/// Neighbors averaged by the plausibility statistic.
pub const NEIGHBOR_POOL: usize = 10;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no results to evaluate")]
    EmptyResults,
    #[error("empty reference set")]
    EmptyReference,
    #[error("no train samples carry target class {0}")]
    NoTargetSamples(usize),
    #[error("flattened length {found} does not match the expected {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Warp(#[from] WarpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lp {
    L1,
    L2,
}

/// One aggregation mode's numbers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub n: usize,
    #[serde(rename = "val")]
    pub validity: f64,
    pub l1: f64,
    pub l2: f64,
    pub dtw_plausibility: f64,
    /// The same plausibility statistic for the untouched originals — the
    /// baseline a counterfactual is supposed to beat.
    pub originals_dtw_plausibility: f64,
    pub iso_nominal_fraction: f64,
}

impl ModeSummary {
    fn empty() -> Self {
        Self {
            n: 0,
            validity: 0.0,
            l1: 0.0,
            l2: 0.0,
            dtw_plausibility: 0.0,
            originals_dtw_plausibility: 0.0,
            iso_nominal_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub all: ModeSummary,
    pub valid_only: ModeSummary,
}

/// Per-result flip indicators `f(X) != f(X')`, recomputed through the
/// classifier rather than read from stored flags.
pub fn recompute_flips(
    classifier: &Classifier,
    results: &[&CfeResult],
) -> Result<Vec<bool>, MetricsError> {
    let mut flips = Vec::with_capacity(results.len());
    for r in results {
        let labels = classifier.predict(&[&r.original, &r.counterfactual])?;
        flips.push(labels[0] != labels[1]);
    }
    Ok(flips)
}

/// Fraction of results whose counterfactual flips the classifier.
pub fn validity_score(
    classifier: &Classifier,
    results: &[&CfeResult],
) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let flips = recompute_flips(classifier, results)?;
    Ok(flips.iter().filter(|f| **f).count() as f64 / flips.len() as f64)
}

/// Mean perturbation norm over the given results, on flattened series.
pub fn lp_distance(results: &[&CfeResult], p: Lp) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let total: f64 = results
        .iter()
        .map(|r| {
            let diffs = r
                .original
                .values()
                .iter()
                .zip(r.counterfactual.values())
                .map(|(a, b)| a - b);
            match p {
                Lp::L1 => diffs.map(f64::abs).sum::<f64>(),
                Lp::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            }
        })
        .sum();
    Ok(total / results.len() as f64)
}

/// Average (1/dT)-normalized DTW distance from one series to its ten
/// nearest target-class train samples; falls back (with a warning) to the
/// whole pool when it holds fewer than ten.
pub fn mean_dtw_to_class(
    series: &TimeSeries,
    target: usize,
    train: &[(TimeSeries, usize)],
) -> Result<f64, MetricsError> {
    let mut distances = Vec::new();
    let scale = 1.0 / series.numel() as f64;
    for (candidate, label) in train {
        if *label != target {
            continue;
        }
        distances.push(dtw(series, candidate)?.0 * scale);
    }
    if distances.is_empty() {
        return Err(MetricsError::NoTargetSamples(target));
    }
    if distances.len() < NEIGHBOR_POOL {
        log::warn!(
            "target class {target} has only {} train samples; plausibility averages all of them",
            distances.len()
        );
    }
    distances.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    let take = distances.len().min(NEIGHBOR_POOL);
    Ok(distances[..take].iter().sum::<f64>() / take as f64)
}

/// Batch-mean DTW plausibility of the counterfactuals.
pub fn dtw_plausibility(
    results: &[&CfeResult],
    train: &[(TimeSeries, usize)],
) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let total: f64 = results
        .iter()
        .map(|r| mean_dtw_to_class(&r.counterfactual, r.target_class.index, train))
        .sum::<Result<f64, _>>()?;
    Ok(total / results.len() as f64)
}

/// Assemble the full report under both aggregation modes. Isolation
/// forests are fitted on the target-class train samples of every target
/// class appearing in the results, seeded per class from `seed`.
pub fn evaluate(
    results: &[CfeResult],
    classifier: &Classifier,
    train: &[(TimeSeries, usize)],
    seed: u64,
) -> Result<MetricsReport, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    let refs: Vec<&CfeResult> = results.iter().collect();
    let flips = recompute_flips(classifier, &refs)?;

    let mut classes: Vec<usize> = results.iter().map(|r| r.target_class.index).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut forests = BTreeMap::new();
    for class in classes {
        let pool: Vec<&TimeSeries> = train
            .iter()
            .filter(|(_, y)| *y == class)
            .map(|(s, _)| s)
            .collect();
        if pool.is_empty() {
            return Err(MetricsError::NoTargetSamples(class));
        }
        let forest_seed = derive_seed(seed, &format!("iso-forest:{class}"));
        forests.insert(class, IsolationForest::fit(&pool, forest_seed)?);
    }
    let mut nominal = Vec::with_capacity(results.len());
    for r in results {
        nominal.push(forests[&r.target_class.index].is_nominal(&r.counterfactual)?);
    }

    let all_idx: Vec<usize> = (0..results.len()).collect();
    let valid_idx: Vec<usize> = all_idx.iter().copied().filter(|&i| flips[i]).collect();
    Ok(MetricsReport {
        all: summarize(&refs, &flips, &nominal, &all_idx, train)?,
        valid_only: summarize(&refs, &flips, &nominal, &valid_idx, train)?,
    })
}

fn summarize(
    results: &[&CfeResult],
    flips: &[bool],
    nominal: &[bool],
    idx: &[usize],
    train: &[(TimeSeries, usize)],
) -> Result<ModeSummary, MetricsError> {
    if idx.is_empty() {
        return Ok(ModeSummary::empty());
    }
    let subset: Vec<&CfeResult> = idx.iter().map(|&i| results[i]).collect();
    let n = idx.len() as f64;
    let originals: f64 = subset
        .iter()
        .map(|r| mean_dtw_to_class(&r.original, r.target_class.index, train))
        .sum::<Result<f64, _>>()?
        / n;
    Ok(ModeSummary {
        n: idx.len(),
        validity: idx.iter().filter(|&&i| flips[i]).count() as f64 / n,
        l1: lp_distance(&subset, Lp::L1)?,
        l2: lp_distance(&subset, Lp::L2)?,
        dtw_plausibility: dtw_plausibility(&subset, train)?,
        originals_dtw_plausibility: originals,
        iso_nominal_fraction: idx.iter().filter(|&&i| nominal[i]).count() as f64 / n,
    })
}
