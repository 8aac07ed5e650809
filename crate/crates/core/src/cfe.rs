//! Counterfactual generation. Starting from the original series, gradient
//! descent in input space minimizes a composite loss — squared proximity,
//! an l1 sparsity term, a hinge on the target-class probability, and
//! soft-DTW alignment to the k nearest target-class training samples —
//! until the classifier flips to the requested class.

use crate::nn::{argmax, Adam, Classifier, NnError};
use crate::series::{ClassLabel, TimeSeries};
use crate::warp::{dtw, soft_dtw, soft_dtw_grad, WarpError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CfeError {
    #[error("bad counterfactual config: {0}")]
    BadConfig(&'static str),
    #[error("target class {target} has {have} train samples; choose k <= {have}")]
    TooFewTargetSamples {
        target: String,
        have: usize,
        k: usize,
    },
    #[error("neighbor set is empty")]
    NoNeighbors,
    #[error("candidate shape {candidate:?} does not match original {original:?}")]
    ShapeMismatch {
        candidate: (usize, usize),
        original: (usize, usize),
    },
    #[error("label vocabulary has {labels} entries, classifier outputs {classes} classes")]
    VocabularyMismatch { labels: usize, classes: usize },
    #[error("target index {target} out of range for {classes} classes")]
    BadTarget { target: usize, classes: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("fixed target {0:?} is already the predicted class")]
    TargetEqualsPrediction(String),
    #[error("unrecognized target policy {0:?} (use \"second\" or \"fixed:<label>\")")]
    BadPolicy(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Warp(#[from] WarpError),
}

/// Distance used to retrieve the neighbor set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeighborMetric {
    /// Flattened Euclidean distance (the default: cheap, and the alignment
    /// loss already handles warping).
    Euclidean,
    /// Hard dynamic-time-warping distance.
    Dtw,
}

#[derive(Debug, Clone)]
pub struct CfeConfig {
    /// Weight of the confidence and alignment terms.
    pub lambda: f64,
    /// Neighbors retrieved from the target class.
    pub k: usize,
    /// Soft-DTW smoothing for the alignment term.
    pub gamma: f64,
    /// Hinge threshold on the target-class probability.
    pub tau: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub neighbor_metric: NeighborMetric,
}

impl Default for CfeConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            k: 10,
            gamma: 1.0,
            tau: 0.5,
            iterations: 200,
            learning_rate: 0.05,
            seed: 0,
            neighbor_metric: NeighborMetric::Euclidean,
        }
    }
}

impl CfeConfig {
    fn validate(&self) -> Result<(), CfeError> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(CfeError::BadConfig("lambda must be finite and >= 0"));
        }
        if self.k == 0 {
            return Err(CfeError::BadConfig("k must be positive"));
        }
        if !self.gamma.is_finite() || self.gamma <= 0.0 {
            return Err(CfeError::BadConfig("gamma must be positive"));
        }
        if !self.tau.is_finite() || !(0.0..=1.0).contains(&self.tau) || self.tau == 0.0 {
            return Err(CfeError::BadConfig("tau must lie in (0, 1]"));
        }
        if self.iterations == 0 {
            return Err(CfeError::BadConfig("iterations must be positive"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(CfeError::BadConfig("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// One iterate's loss breakdown.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub prox: f64,
    pub sparse: f64,
    pub valid: f64,
    pub dtw: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct CfeResult {
    pub original: TimeSeries,
    pub counterfactual: TimeSeries,
    pub source_class: ClassLabel,
    pub target_class: ClassLabel,
    /// Re-checked through the classifier on the returned counterfactual.
    pub valid: bool,
    /// `trivial` marks inputs the classifier already assigned to the
    /// target class; they are returned unchanged.
    pub trivial: bool,
    /// Entry 0 is the untouched starting point, then one entry per
    /// optimizer iteration. Empty for trivial results.
    pub trajectory: Vec<LossTerms>,
    /// Train-split indices of the retrieved neighbors, fixed up front.
    pub neighbor_ids: Vec<usize>,
    pub iterations_used: usize,
}

/// How the target class is chosen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetPolicy {
    /// The class with the second-highest predicted probability.
    Second,
    /// A caller-named class; rejected when it matches the prediction.
    Fixed(String),
}

impl std::str::FromStr for TargetPolicy {
    type Err = CfeError;

    fn from_str(s: &str) -> Result<Self, CfeError> {
        if s == "second" {
            return Ok(Self::Second);
        }
        match s.split_once(':') {
            Some(("fixed", label)) if !label.is_empty() => Ok(Self::Fixed(label.to_string())),
            _ => Err(CfeError::BadPolicy(s.to_string())),
        }
    }
}

/// Pick the explanation target for one series under a policy.
pub fn pick_target(
    series: &TimeSeries,
    classifier: &Classifier,
    labels: &[ClassLabel],
    policy: &TargetPolicy,
) -> Result<ClassLabel, CfeError> {
    check_vocabulary(classifier, labels)?;
    let probs = classifier.predict_proba(&[series])?;
    let row = probs.values();
    let predicted = argmax(row);
    let index = match policy {
        TargetPolicy::Second => second_highest(row),
        TargetPolicy::Fixed(name) => {
            let index = labels
                .iter()
                .position(|l| l.name == *name)
                .ok_or_else(|| CfeError::UnknownLabel(name.clone()))?;
            if index == predicted {
                return Err(CfeError::TargetEqualsPrediction(name.clone()));
            }
            index
        }
    };
    Ok(labels[index].clone())
}

/// Index of the second-largest value (ties to the lower index).
pub(crate) fn second_highest(row: &[f64]) -> usize {
    debug_assert!(row.len() >= 2);
    let top = argmax(row);
    let mut second = usize::MAX;
    for (i, &v) in row.iter().enumerate() {
        if i == top {
            continue;
        }
        if second == usize::MAX || v > row[second] {
            second = i;
        }
    }
    second
}

/// Indices of the `k` target-class train series closest to `x`, ties
/// broken by lower train index. The neighbor set belongs to the original
/// series and stays fixed for the whole optimization.
pub fn target_neighbors(
    x: &TimeSeries,
    target: usize,
    train: &[(TimeSeries, usize)],
    k: usize,
    metric: NeighborMetric,
    target_name: &str,
) -> Result<Vec<usize>, CfeError> {
    if k == 0 {
        return Err(CfeError::BadConfig("k must be positive"));
    }
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for (i, (series, label)) in train.iter().enumerate() {
        if *label != target {
            continue;
        }
        let d = match metric {
            NeighborMetric::Euclidean => squared_distance(x, series)?,
            NeighborMetric::Dtw => dtw(x, series)?.0,
        };
        scored.push((d, i));
    }
    if scored.len() < k {
        return Err(CfeError::TooFewTargetSamples {
            target: target_name.to_string(),
            have: scored.len(),
            k,
        });
    }
    scored.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    Ok(scored.into_iter().take(k).map(|(_, i)| i).collect())
}

fn squared_distance(a: &TimeSeries, b: &TimeSeries) -> Result<f64, CfeError> {
    if a.shape() != b.shape() {
        return Err(CfeError::ShapeMismatch {
            candidate: a.shape(),
            original: b.shape(),
        });
    }
    Ok(a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// The composite objective at one candidate, its gradient with respect to
/// the candidate (`T x d` row-major), and the classifier's probability row
/// there. The hinge contributes no gradient once the target probability
/// reaches `tau`; the l1 subgradient at exactly zero is zero.
pub fn composite_loss(
    candidate: &TimeSeries,
    original: &TimeSeries,
    neighbors: &[&TimeSeries],
    target: usize,
    classifier: &Classifier,
    config: &CfeConfig,
) -> Result<(LossTerms, Vec<f64>, Vec<f64>), CfeError> {
    if candidate.shape() != original.shape() {
        return Err(CfeError::ShapeMismatch {
            candidate: candidate.shape(),
            original: original.shape(),
        });
    }
    if neighbors.is_empty() {
        return Err(CfeError::NoNeighbors);
    }
    let n = candidate.numel() as f64;
    let mut grad = vec![0.0; candidate.numel()];

    let mut prox = 0.0;
    let mut sparse = 0.0;
    for (i, (c, o)) in candidate.values().iter().zip(original.values()).enumerate() {
        let diff = c - o;
        prox += diff * diff;
        sparse += diff.abs();
        let sign = if diff == 0.0 { 0.0 } else { diff.signum() };
        grad[i] = (2.0 * diff + sign) / n;
    }
    prox /= n;
    sparse /= n;

    let (probs, prob_grad) = classifier.probability_gradient(candidate, target)?;
    let p_target = probs[target];
    let valid = (config.tau - p_target).max(0.0);
    if valid > 0.0 {
        for (g, pg) in grad.iter_mut().zip(&prob_grad) {
            *g -= config.lambda * pg;
        }
    }

    let mut dtw_total = 0.0;
    let k = neighbors.len() as f64;
    for neighbor in neighbors {
        let (value, workspace) = soft_dtw(candidate, neighbor, config.gamma)?;
        dtw_total += value;
        let dtw_grad = soft_dtw_grad(&workspace, candidate, neighbor)?;
        let scale = config.lambda / k;
        for (g, dg) in grad.iter_mut().zip(&dtw_grad) {
            *g += scale * dg;
        }
    }
    let dtw_mean = dtw_total / k;

    let terms = LossTerms {
        prox,
        sparse,
        valid,
        dtw: dtw_mean,
        total: prox + sparse + config.lambda * (valid + dtw_mean),
    };
    Ok((terms, grad, probs))
}

/// Generate a counterfactual for `original` toward `labels[target]`.
///
/// The candidate starts at the original and follows Adam on the composite
/// loss for the configured iterations; classifier parameters are never
/// touched. Among iterates the classifier assigns to the target class, the
/// one with the lowest total loss is returned; if none qualifies, the
/// final iterate is returned with `valid = false`. Deterministic for fixed
/// inputs and config.
pub fn generate(
    original: &TimeSeries,
    target: usize,
    classifier: &Classifier,
    train: &[(TimeSeries, usize)],
    labels: &[ClassLabel],
    config: &CfeConfig,
) -> Result<CfeResult, CfeError> {
    config.validate()?;
    check_vocabulary(classifier, labels)?;
    if target >= labels.len() {
        return Err(CfeError::BadTarget {
            target,
            classes: labels.len(),
        });
    }

    let source_probs = classifier.predict_proba(&[original])?;
    let source = argmax(source_probs.values());
    if source == target {
        return Ok(CfeResult {
            original: original.clone(),
            counterfactual: original.clone(),
            source_class: labels[source].clone(),
            target_class: labels[target].clone(),
            valid: true,
            trivial: true,
            trajectory: Vec::new(),
            neighbor_ids: Vec::new(),
            iterations_used: 0,
        });
    }

    let neighbor_ids = target_neighbors(
        original,
        target,
        train,
        config.k,
        config.neighbor_metric,
        &labels[target].name,
    )?;
    let neighbors: Vec<&TimeSeries> = neighbor_ids.iter().map(|&i| &train[i].0).collect();

    let (t_len, channels) = original.shape();
    let mut values = original.values().to_vec();
    let mut adam = Adam::new(config.learning_rate, 0.0, &[values.len()]);
    let mut trajectory = Vec::with_capacity(config.iterations + 1);
    let mut best: Option<(f64, Vec<f64>)> = None;

    for iteration in 0..=config.iterations {
        let candidate = TimeSeries::new(values.clone(), t_len, channels)
            .expect("candidate keeps the original's shape");
        let (terms, grad, probs) =
            composite_loss(&candidate, original, &neighbors, target, classifier, config)?;
        trajectory.push(terms);
        if argmax(&probs) == target && best.as_ref().is_none_or(|(t, _)| terms.total < *t) {
            best = Some((terms.total, values.clone()));
        }
        if iteration == config.iterations {
            break;
        }
        adam.step(&mut [&mut values], &[grad]);
    }

    let chosen = match best {
        Some((_, winner)) => winner,
        None => values,
    };
    let counterfactual = TimeSeries::new(chosen, t_len, channels)
        .expect("counterfactual keeps the original's shape");
    // validity re-checked through the classifier, not optimizer bookkeeping
    let valid = classifier.predict(&[&counterfactual])?[0] == target;

    Ok(CfeResult {
        original: original.clone(),
        counterfactual,
        source_class: labels[source].clone(),
        target_class: labels[target].clone(),
        valid,
        trivial: false,
        trajectory,
        neighbor_ids,
        iterations_used: config.iterations,
    })
}

fn check_vocabulary(classifier: &Classifier, labels: &[ClassLabel]) -> Result<(), CfeError> {
    if labels.len() != classifier.num_classes() {
        return Err(CfeError::VocabularyMismatch {
            labels: labels.len(),
            classes: classifier.num_classes(),
        });
    }
    Ok(())
}
