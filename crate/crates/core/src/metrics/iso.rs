//! Isolation forest over flattened series, used to judge whether a
//! counterfactual looks like a member of its target class: 100 trees,
//! subsamples of up to 256 points, uniform feature/threshold splits, and
//! the standard average-path-length normalization.

use crate::metrics::MetricsError;
use crate::series::TimeSeries;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TREE_COUNT: usize = 100;
pub const MAX_SUBSAMPLE: usize = 256;
/// Queries scoring below this are nominal.
pub const NOMINAL_THRESHOLD: f64 = 0.5;
const EULER_MASCHERONI: f64 = 0.577_215_664_9;

/// Expected unsuccessful-search path length in a binary search tree over
/// `n` points; the `s(x)` normalizer and the leaf-size correction.
/// Exact for n ≤ 2, harmonic-number approximation above.
pub fn average_path_length(n: usize) -> f64 {
    match n {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let nf = n as f64;
            2.0 * ((nf - 1.0).ln() + EULER_MASCHERONI) - 2.0 * (nf - 1.0) / nf
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        below: usize,
        above: usize,
    },
    Leaf {
        count: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn grow<R: Rng>(
        points: &[Vec<f64>],
        subset: &mut [usize],
        depth_limit: usize,
        rng: &mut R,
    ) -> Self {
        let mut nodes = Vec::new();
        Self::grow_node(points, subset, 0, depth_limit, rng, &mut nodes);
        Self { nodes }
    }

    /// Appends the subtree for `subset` and returns its root index.
    fn grow_node<R: Rng>(
        points: &[Vec<f64>],
        subset: &mut [usize],
        depth: usize,
        depth_limit: usize,
        rng: &mut R,
        nodes: &mut Vec<Node>,
    ) -> usize {
        if depth >= depth_limit || subset.len() <= 1 {
            nodes.push(Node::Leaf {
                count: subset.len(),
            });
            return nodes.len() - 1;
        }
        // only features that actually vary on this subset can split it
        let features = points[subset[0]].len();
        let candidates: Vec<(usize, f64, f64)> = (0..features)
            .filter_map(|f| {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for &i in subset.iter() {
                    lo = lo.min(points[i][f]);
                    hi = hi.max(points[i][f]);
                }
                (lo < hi).then_some((f, lo, hi))
            })
            .collect();
        if candidates.is_empty() {
            nodes.push(Node::Leaf {
                count: subset.len(),
            });
            return nodes.len() - 1;
        }
        let (feature, lo, hi) = candidates[rng.gen_range(0..candidates.len())];
        let threshold = rng.gen_range(lo..hi);
        let split = partition(subset, |i| points[i][feature] < threshold);
        let (below_set, above_set) = subset.split_at_mut(split);

        let slot = nodes.len();
        nodes.push(Node::Leaf { count: 0 }); // placeholder until children exist
        let below = Self::grow_node(points, below_set, depth + 1, depth_limit, rng, nodes);
        let above = Self::grow_node(points, above_set, depth + 1, depth_limit, rng, nodes);
        nodes[slot] = Node::Split {
            feature,
            threshold,
            below,
            above,
        };
        slot
    }

    fn path_length(&self, query: &[f64]) -> f64 {
        let mut index = 0;
        let mut depth = 0.0;
        loop {
            match &self.nodes[index] {
                Node::Leaf { count } => return depth + average_path_length(*count),
                Node::Split {
                    feature,
                    threshold,
                    below,
                    above,
                } => {
                    index = if query[*feature] < *threshold {
                        *below
                    } else {
                        *above
                    };
                    depth += 1.0;
                }
            }
        }
    }
}

/// Reorders `subset` so items satisfying `pred` come first; returns the
/// boundary.
fn partition(subset: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut split = 0;
    for i in 0..subset.len() {
        if pred(subset[i]) {
            subset.swap(split, i);
            split += 1;
        }
    }
    split
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest {
    trees: Vec<Tree>,
    subsample: usize,
    features: usize,
}

impl IsolationForest {
    /// Fit on a reference set of equal-shape series (flattened to length
    /// T·d). Deterministic for a fixed seed.
    pub fn fit(reference: &[&TimeSeries], seed: u64) -> Result<Self, MetricsError> {
        let first = reference.first().ok_or(MetricsError::EmptyReference)?;
        let features = first.numel();
        let mut points = Vec::with_capacity(reference.len());
        for series in reference {
            if series.numel() != features {
                return Err(MetricsError::ShapeMismatch {
                    expected: features,
                    found: series.numel(),
                });
            }
            points.push(series.values().to_vec());
        }

        let subsample = points.len().min(MAX_SUBSAMPLE);
        let depth_limit = (subsample as f64).log2().ceil() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trees = (0..TREE_COUNT)
            .map(|_| {
                let mut subset: Vec<usize> = if points.len() > subsample {
                    sample(&mut rng, points.len(), subsample).into_vec()
                } else {
                    (0..points.len()).collect()
                };
                Tree::grow(&points, &mut subset, depth_limit, &mut rng)
            })
            .collect();
        Ok(Self {
            trees,
            subsample,
            features,
        })
    }

    pub fn features(&self) -> usize {
        self.features
    }

    /// Anomaly score `s(x) = 2^(-E[h(x)] / c(ψ))` in (0, 1]. With a
    /// single-point reference, `c(ψ) = 0` and the score degenerates to 1.
    pub fn anomaly_score(&self, query: &TimeSeries) -> Result<f64, MetricsError> {
        if query.numel() != self.features {
            return Err(MetricsError::ShapeMismatch {
                expected: self.features,
                found: query.numel(),
            });
        }
        let normalizer = average_path_length(self.subsample);
        if normalizer == 0.0 {
            return Ok(1.0);
        }
        let mean_path: f64 = self
            .trees
            .iter()
            .map(|t| t.path_length(query.values()))
            .sum::<f64>()
            / self.trees.len() as f64;
        Ok(2f64.powf(-mean_path / normalizer))
    }

    /// Nominal (in-distribution) iff the anomaly score stays below 0.5.
    pub fn is_nominal(&self, query: &TimeSeries) -> Result<bool, MetricsError> {
        Ok(self.anomaly_score(query)? < NOMINAL_THRESHOLD)
    }
}
