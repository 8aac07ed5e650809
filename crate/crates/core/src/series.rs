//! Core time series and dataset types, shape validation, and per-channel
//! z-normalization shared by every other module.
//!
//! A [`TimeSeries`] is a fixed-shape `T x d` matrix of finite reals (row-major,
//! timestep-major). A [`Dataset`] holds labeled train/test splits of
//! equal-shape series plus the label vocabulary and, once normalized, the
//! per-channel statistics of the train split. All types are immutable after
//! construction and safe to share across threads.

use thiserror::Error;

/// Channels with train-split standard deviation below this are treated as
/// constant: they are shifted by the mean only, never divided.
pub const DEGENERATE_SIGMA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("series shape must satisfy T >= 1 and d >= 1, got T={t_len}, d={channels}")]
    EmptyShape { t_len: usize, channels: usize },
    #[error("value buffer holds {found} entries, expected T*d = {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("non-finite value at timestep {t}, channel {ch}")]
    NonFinite { t: usize, ch: usize },
    #[error("channel count mismatch: series has {series} channels, stats cover {stats}")]
    ChannelMismatch { series: usize, stats: usize },
    #[error("all series in a dataset must share one shape: found (T={0}, d={1}) and (T={2}, d={3})", .a.0, .a.1, .b.0, .b.1)]
    ShapeMismatch {
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("train split must contain at least two distinct labels, found {found}")]
    SingleClass { found: usize },
    #[error("dataset must contain at least two samples, found {found}")]
    TooFewSamples { found: usize },
    #[error("label index {index} out of range for vocabulary of {count}")]
    LabelOutOfRange { index: usize, count: usize },
    #[error("duplicate label name {name:?} in vocabulary")]
    DuplicateLabel { name: String },
}

/// One `d`-channel, `T`-step real-valued sequence. The unit of classification
/// and explanation.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>, // row-major: values[t * channels + ch]
    t_len: usize,
    channels: usize,
}

impl TimeSeries {
    /// Build a series from a row-major `T x d` buffer. Rejects empty shapes,
    /// length mismatches, and non-finite values.
    pub fn new(values: Vec<f64>, t_len: usize, channels: usize) -> Result<Self, SeriesError> {
        if t_len == 0 || channels == 0 {
            return Err(SeriesError::EmptyShape { t_len, channels });
        }
        let expected = t_len * channels;
        if values.len() != expected {
            return Err(SeriesError::LengthMismatch {
                expected,
                found: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFinite {
                t: pos / channels,
                ch: pos % channels,
            });
        }
        Ok(Self {
            values,
            t_len,
            channels,
        })
    }

    /// Single-channel convenience constructor.
    pub fn univariate(values: Vec<f64>) -> Result<Self, SeriesError> {
        let t_len = values.len();
        Self::new(values, t_len, 1)
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(T, d)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.t_len, self.channels)
    }

    /// Total element count `T * d`.
    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn value(&self, t: usize, ch: usize) -> f64 {
        self.values[t * self.channels + ch]
    }

    /// Row-major `T x d` backing buffer.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// One timestep as a `d`-length slice.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.channels..(t + 1) * self.channels]
    }
}

/// A class in the label vocabulary: dense index plus display name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassLabel {
    pub index: usize,
    pub name: String,
}

/// Per-channel normalization statistics computed on a train split.
///
/// `scale` is the population standard deviation, replaced by 1 for channels
/// whose deviation falls below [`DEGENERATE_SIGMA`], so that the forward and
/// inverse maps stay exact on constant channels.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    channels: Vec<(f64, f64)>, // (mean, scale)
}

impl NormStats {
    pub fn new(channels: Vec<(f64, f64)>) -> Self {
        Self { channels }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// `(mean, scale)` for one channel.
    pub fn channel(&self, ch: usize) -> (f64, f64) {
        self.channels[ch]
    }

    pub fn channels(&self) -> &[(f64, f64)] {
        &self.channels
    }
}

/// Labeled train/test collections of equal-shape series.
#[derive(Debug, Clone)]
pub struct Dataset {
    train: Vec<(TimeSeries, usize)>,
    test: Vec<(TimeSeries, usize)>,
    labels: Vec<ClassLabel>,
    stats: Option<NormStats>,
}

impl Dataset {
    /// Assemble and validate a dataset: nonempty, consistent shapes, label
    /// indices in range, and at least two distinct labels in the train split.
    pub fn new(
        train: Vec<(TimeSeries, usize)>,
        test: Vec<(TimeSeries, usize)>,
        labels: Vec<ClassLabel>,
    ) -> Result<Self, SeriesError> {
        if train.is_empty() {
            return Err(SeriesError::EmptyDataset);
        }
        let n = train.len() + test.len();
        if n < 2 {
            return Err(SeriesError::TooFewSamples { found: n });
        }
        for (i, label) in labels.iter().enumerate() {
            if label.index != i {
                return Err(SeriesError::LabelOutOfRange {
                    index: label.index,
                    count: labels.len(),
                });
            }
            if labels[..i].iter().any(|other| other.name == label.name) {
                return Err(SeriesError::DuplicateLabel {
                    name: label.name.clone(),
                });
            }
        }
        let shape = train[0].0.shape();
        for (series, label) in train.iter().chain(test.iter()) {
            if series.shape() != shape {
                return Err(SeriesError::ShapeMismatch {
                    a: shape,
                    b: series.shape(),
                });
            }
            if *label >= labels.len() {
                return Err(SeriesError::LabelOutOfRange {
                    index: *label,
                    count: labels.len(),
                });
            }
        }
        let mut seen = vec![false; labels.len()];
        for (_, label) in &train {
            seen[*label] = true;
        }
        let distinct = seen.iter().filter(|s| **s).count();
        if distinct < 2 {
            return Err(SeriesError::SingleClass { found: distinct });
        }
        Ok(Self {
            train,
            test,
            labels,
            stats: None,
        })
    }

    pub fn train(&self) -> &[(TimeSeries, usize)] {
        &self.train
    }

    pub fn test(&self) -> &[(TimeSeries, usize)] {
        &self.test
    }

    pub fn labels(&self) -> &[ClassLabel] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn label_name(&self, index: usize) -> &str {
        &self.labels[index].name
    }

    /// Index of a label by display name.
    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l.name == name)
    }

    /// Shared `(T, d)` of every series in the dataset.
    pub fn shape(&self) -> (usize, usize) {
        self.train[0].0.shape()
    }

    /// Normalization stats, present once the dataset has been normalized.
    pub fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    /// Apply externally supplied stats to both splits (e.g. stats stored with
    /// a trained model). Does not recompute anything.
    pub fn normalized_with(&self, stats: &NormStats) -> Result<Dataset, SeriesError> {
        let map = |split: &[(TimeSeries, usize)]| -> Result<Vec<_>, SeriesError> {
            split
                .iter()
                .map(|(s, y)| Ok((normalize_series(s, stats)?, *y)))
                .collect()
        };
        Ok(Dataset {
            train: map(&self.train)?,
            test: map(&self.test)?,
            labels: self.labels.clone(),
            stats: Some(stats.clone()),
        })
    }
}

/// Compute per-channel mean and population standard deviation over every
/// value in the train split.
pub fn train_stats(dataset: &Dataset) -> NormStats {
    let (_, d) = dataset.shape();
    let mut sums = vec![0.0; d];
    let mut count = 0usize;
    for (series, _) in dataset.train() {
        for t in 0..series.t_len() {
            for (ch, sum) in sums.iter_mut().enumerate() {
                *sum += series.value(t, ch);
            }
        }
        count += series.t_len();
    }
    let means: Vec<f64> = sums.iter().map(|s| s / count as f64).collect();
    let mut sq = vec![0.0; d];
    for (series, _) in dataset.train() {
        for t in 0..series.t_len() {
            for (ch, acc) in sq.iter_mut().enumerate() {
                let delta = series.value(t, ch) - means[ch];
                *acc += delta * delta;
            }
        }
    }
    let channels = means
        .iter()
        .zip(sq.iter())
        .map(|(&mean, &acc)| {
            let sigma = (acc / count as f64).sqrt();
            let scale = if sigma < DEGENERATE_SIGMA { 1.0 } else { sigma };
            (mean, scale)
        })
        .collect();
    NormStats::new(channels)
}

/// Apply `(v - mean) / scale` per channel.
pub fn normalize_series(series: &TimeSeries, stats: &NormStats) -> Result<TimeSeries, SeriesError> {
    if series.channels() != stats.num_channels() {
        return Err(SeriesError::ChannelMismatch {
            series: series.channels(),
            stats: stats.num_channels(),
        });
    }
    let d = series.channels();
    let values = series
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (mean, scale) = stats.channel(i % d);
            (v - mean) / scale
        })
        .collect();
    TimeSeries::new(values, series.t_len(), d)
}

/// Z-normalize both splits with per-channel stats computed on the train
/// split, storing the stats for the inverse map.
pub fn z_normalize(dataset: &Dataset) -> Result<Dataset, SeriesError> {
    if dataset.train().is_empty() {
        return Err(SeriesError::EmptyDataset);
    }
    let stats = train_stats(dataset);
    dataset.normalized_with(&stats)
}

/// Exact inverse of [`z_normalize`] for one series: `v * scale + mean`.
pub fn denormalize(series: &TimeSeries, stats: &NormStats) -> Result<TimeSeries, SeriesError> {
    if series.channels() != stats.num_channels() {
        return Err(SeriesError::ChannelMismatch {
            series: series.channels(),
            stats: stats.num_channels(),
        });
    }
    let d = series.channels();
    let values = series
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (mean, scale) = stats.channel(i % d);
            v * scale + mean
        })
        .collect();
    TimeSeries::new(values, series.t_len(), d)
}
