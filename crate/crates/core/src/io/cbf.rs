//! Seeded cylinder-bell-funnel generator for desk-scale experiments.
//!
//! Each sample places an event window `[a, b]` inside the series: onset
//! `a ~ U{⌊T/8⌋..⌊T/4⌋}`, duration `b−a ~ U{⌊T/4⌋..⌊3T/4⌋}`, amplitude
//! `6+η` with `η ~ N(0,1)`, plus `N(0,1)` noise at every step. The cylinder
//! holds the amplitude flat over the window, the bell ramps up from zero,
//! the funnel ramps down to zero. Parameter ranges scale with `T` instead of
//! hardcoding the classic `T=128` constants.

use super::index_labels;
use crate::series::{Dataset, SeriesError, TimeSeries};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Smallest supported series length: the event window needs room for its
/// onset and duration ranges to stay nondegenerate.
pub const MIN_CBF_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum CbfError {
    #[error("series length must be at least {MIN_CBF_LEN}, got {0}")]
    TooShort(usize),
    #[error("per-class sample count must be at least 1")]
    EmptyClass,
    #[error("all class specs must share one series length, found {0} and {1}")]
    MixedLengths(usize, usize),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

/// The three CBF shape families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbfKind {
    Cylinder,
    Bell,
    Funnel,
}

impl CbfKind {
    pub const ALL: [CbfKind; 3] = [CbfKind::Cylinder, CbfKind::Bell, CbfKind::Funnel];

    pub fn name(&self) -> &'static str {
        match self {
            CbfKind::Cylinder => "cylinder",
            CbfKind::Bell => "bell",
            CbfKind::Funnel => "funnel",
        }
    }

    /// Shape factor at step `t` for window `[a, b]`: 0 outside, and inside
    /// either flat 1, an up-ramp, or a down-ramp.
    fn factor(&self, t: usize, a: usize, b: usize) -> f64 {
        if t < a || t > b {
            return 0.0;
        }
        let span = (b - a) as f64;
        match self {
            CbfKind::Cylinder => 1.0,
            CbfKind::Bell => (t - a) as f64 / span,
            CbfKind::Funnel => (b - t) as f64 / span,
        }
    }
}

/// One class's generation request.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub kind: CbfKind,
    pub t_len: usize,
    pub count: usize,
}

/// The random parameters behind one sample — exposed so tests can verify
/// shape structure without reverse-engineering the noise.
#[derive(Debug, Clone, Copy)]
pub struct CbfDraw {
    pub onset: usize,
    /// Window end `b = onset + duration`; may land on `T` itself, in which
    /// case the event runs to the end of the series.
    pub end: usize,
    /// `6 + η`.
    pub amplitude: f64,
}

/// Low-level sampler: one series of the given kind, with the noise term
/// scaled by `noise_scale` (1 for real data; 0 isolates the event shape in
/// tests). Consumes the same RNG stream regardless of the scale.
pub fn sample_cbf<R: Rng>(
    kind: CbfKind,
    t_len: usize,
    noise_scale: f64,
    rng: &mut R,
) -> Result<(TimeSeries, CbfDraw), CbfError> {
    if t_len < MIN_CBF_LEN {
        return Err(CbfError::TooShort(t_len));
    }
    let onset = rng.gen_range(t_len / 8..=t_len / 4);
    let duration = rng.gen_range(t_len / 4..=(3 * t_len) / 4);
    let end = onset + duration;
    let eta: f64 = rng.sample(StandardNormal);
    let amplitude = 6.0 + eta;
    let values = (0..t_len)
        .map(|t| {
            let eps: f64 = rng.sample(StandardNormal);
            amplitude * kind.factor(t, onset, end) + noise_scale * eps
        })
        .collect();
    let series = TimeSeries::univariate(values)?;
    Ok((
        series,
        CbfDraw {
            onset,
            end,
            amplitude,
        },
    ))
}

fn generate_split<R: Rng>(
    specs: &[SyntheticSpec],
    label_of: impl Fn(CbfKind) -> usize,
    rng: &mut R,
) -> Result<Vec<(TimeSeries, usize)>, CbfError> {
    let mut samples = Vec::new();
    for spec in specs {
        if spec.count == 0 {
            return Err(CbfError::EmptyClass);
        }
        for _ in 0..spec.count {
            let (series, _) = sample_cbf(spec.kind, spec.t_len, 1.0, rng)?;
            samples.push((series, label_of(spec.kind)));
        }
    }
    Ok(samples)
}

/// Generate a labeled dataset from per-class specs, deterministically for a
/// given seed. The label vocabulary is the distinct kind names, sorted.
pub fn generate_cbf(
    train: &[SyntheticSpec],
    test: &[SyntheticSpec],
    seed: u64,
) -> Result<Dataset, CbfError> {
    if let Some(first) = train.first().or(test.first()) {
        for spec in train.iter().chain(test.iter()) {
            if spec.t_len != first.t_len {
                return Err(CbfError::MixedLengths(first.t_len, spec.t_len));
            }
        }
    }
    let names: Vec<String> = train
        .iter()
        .chain(test.iter())
        .map(|s| s.kind.name().to_string())
        .collect();
    let labels = index_labels(&names);
    let label_of = |kind: CbfKind| {
        labels
            .iter()
            .position(|l| l.name == kind.name())
            .expect("every spec kind is in the vocabulary")
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = generate_split(train, label_of, &mut rng)?;
    let test = generate_split(test, label_of, &mut rng)?;
    Ok(Dataset::new(train, test, labels)?)
}

/// Balanced three-class specs: `count` samples of each kind at length `t_len`.
pub fn balanced_specs(t_len: usize, count: usize) -> Vec<SyntheticSpec> {
    CbfKind::ALL
        .iter()
        .map(|&kind| SyntheticSpec { kind, t_len, count })
        .collect()
}
