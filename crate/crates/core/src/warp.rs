//! Dynamic time warping: the hard distance with traceback, the soft-minimum
//! operator, the smoothed (soft-DTW) forward and backward dynamic programs,
//! and a brute-force alignment-path oracle for small instances.
//!
//! Conventions: series are compared with the dependent multivariate cost
//! `delta(i, j) = sum_ch (X[i,ch] - Y[j,ch])^2`, alignment paths are monotone
//! staircases of (1,0)/(0,1)/(1,1) steps, and the smoothed distance is the
//! soft-minimum of all path costs, which the quadratic recursion computes
//! exactly.

use crate::series::TimeSeries;
use thiserror::Error;

/// Brute-force enumeration guard: the path count is the Delannoy number,
/// which passes one million shortly beyond this.
pub const MAX_BRUTE_FORCE: usize = 8;

/// Boundary sentinel for the smoothed recursion. Large-finite instead of IEEE
/// infinity: it must underflow to zero weight inside `exp`, not poison the
/// max-shift arithmetic with `inf - inf`.
const BIG: f64 = 1e30;

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("channel count mismatch: one series has {x} channels, the other {y}")]
    ChannelMismatch { x: usize, y: usize },
    #[error("soft-min needs at least one value")]
    EmptyValues,
    #[error("smoothing gamma must be positive, got {0}")]
    BadGamma(f64),
    #[error("path enumeration is limited to lengths <= {MAX_BRUTE_FORCE}, got ({0}, {1})")]
    PathGuard(usize, usize),
    #[error("workspace was built for a different series pair")]
    WorkspaceMismatch,
}

/// Pairwise squared-Euclidean costs between the timesteps of two series.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    entries: Vec<f64>, // row-major rows x cols
    rows: usize,
    cols: usize,
}

impl CostMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }
}

/// `entry(i, j) = sum_ch (X[i,ch] - Y[j,ch])^2`.
pub fn cost_matrix(x: &TimeSeries, y: &TimeSeries) -> Result<CostMatrix, WarpError> {
    if x.channels() != y.channels() {
        return Err(WarpError::ChannelMismatch {
            x: x.channels(),
            y: y.channels(),
        });
    }
    let (rows, cols) = (x.t_len(), y.t_len());
    let mut entries = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let xi = x.row(i);
        for j in 0..cols {
            let cost: f64 = xi
                .iter()
                .zip(y.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            entries.push(cost);
        }
    }
    Ok(CostMatrix {
        entries,
        rows,
        cols,
    })
}

/// Monotone alignment between two series: 0-based index pairs from `(0, 0)`
/// to `(m-1, m'-1)`, consecutive steps differing by (1,0), (0,1), or (1,1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentPath(Vec<(usize, usize)>);

impl AlignmentPath {
    pub fn steps(&self) -> &[(usize, usize)] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Total cost of the matrix entries the path visits.
    pub fn cost(&self, costs: &CostMatrix) -> f64 {
        self.0.iter().map(|&(i, j)| costs.get(i, j)).sum()
    }

    /// Structural validity against a pair of series lengths.
    pub fn is_valid(&self, m: usize, mp: usize) -> bool {
        if self.0.first() != Some(&(0, 0)) || self.0.last() != Some(&(m - 1, mp - 1)) {
            return false;
        }
        self.0.windows(2).all(|w| {
            let (di, dj) = (w[1].0 as i64 - w[0].0 as i64, w[1].1 as i64 - w[0].1 as i64);
            matches!((di, dj), (1, 0) | (0, 1) | (1, 1))
        })
    }
}

/// Classic DTW: minimum path cost plus one path achieving it, via the
/// quadratic dynamic program. Traceback ties prefer the diagonal step, then
/// the vertical, then the horizontal.
pub fn dtw(x: &TimeSeries, y: &TimeSeries) -> Result<(f64, AlignmentPath), WarpError> {
    let costs = cost_matrix(x, y)?;
    let (m, mp) = (costs.rows(), costs.cols());
    let cols = mp + 1;
    let mut table = vec![f64::INFINITY; (m + 1) * cols];
    table[0] = 0.0;
    for i in 1..=m {
        for j in 1..=mp {
            let best = table[(i - 1) * cols + (j - 1)]
                .min(table[(i - 1) * cols + j])
                .min(table[i * cols + (j - 1)]);
            table[i * cols + j] = costs.get(i - 1, j - 1) + best;
        }
    }
    let distance = table[m * cols + mp];

    let mut path = vec![(m - 1, mp - 1)];
    let (mut i, mut j) = (m, mp);
    while (i, j) != (1, 1) {
        let diag = if i > 1 && j > 1 {
            table[(i - 1) * cols + (j - 1)]
        } else {
            f64::INFINITY
        };
        let vert = if i > 1 {
            table[(i - 1) * cols + j]
        } else {
            f64::INFINITY
        };
        let horiz = if j > 1 {
            table[i * cols + (j - 1)]
        } else {
            f64::INFINITY
        };
        let best = diag.min(vert).min(horiz);
        if diag == best {
            i -= 1;
            j -= 1;
        } else if vert == best {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i - 1, j - 1));
    }
    path.reverse();
    Ok((distance, AlignmentPath(path)))
}

/// `-gamma * ln(sum_i exp(-a_i / gamma))`, computed by factoring out the
/// minimum so that arbitrarily small `gamma` cannot overflow. Always at most
/// `min(values)`.
pub fn soft_min(values: &[f64], gamma: f64) -> Result<f64, WarpError> {
    if values.is_empty() {
        return Err(WarpError::EmptyValues);
    }
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(WarpError::BadGamma(gamma));
    }
    let lowest = values.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = values.iter().map(|v| ((lowest - v) / gamma).exp()).sum();
    Ok(lowest - gamma * sum.ln())
}

fn soft_min3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let lowest = a.min(b).min(c);
    let sum =
        ((lowest - a) / gamma).exp() + ((lowest - b) / gamma).exp() + ((lowest - c) / gamma).exp();
    lowest - gamma * sum.ln()
}

/// Forward table and cost matrix retained by [`soft_dtw`] for the gradient
/// pass. Single-owner; rebuild rather than share.
#[derive(Debug, Clone)]
pub struct SoftDtwWorkspace {
    /// `(m+2) x (m'+2)` forward table, 1-based interior, sentinel borders.
    r: Vec<f64>,
    costs: CostMatrix,
    gamma: f64,
    channels: usize,
}

impl SoftDtwWorkspace {
    fn r_cols(&self) -> usize {
        self.costs.cols() + 2
    }

    fn r_at(&self, i: usize, j: usize) -> f64 {
        self.r[i * self.r_cols() + j]
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Smoothed DTW: the soft-minimum of all alignment-path costs, via
/// `r(i,j) = delta(i,j) + soft_min3(r(i-1,j-1), r(i-1,j), r(i,j-1))`.
/// Always at most `dtw(x, y)`, and converges to it as `gamma` shrinks.
pub fn soft_dtw(
    x: &TimeSeries,
    y: &TimeSeries,
    gamma: f64,
) -> Result<(f64, SoftDtwWorkspace), WarpError> {
    if gamma.is_nan() || gamma <= 0.0 {
        return Err(WarpError::BadGamma(gamma));
    }
    let costs = cost_matrix(x, y)?;
    let (m, mp) = (costs.rows(), costs.cols());
    let cols = mp + 2;
    let mut r = vec![BIG; (m + 2) * cols];
    r[0] = 0.0; // r(0,0); the rest of row 0 / column 0 stay at the sentinel
    for i in 1..=m {
        for j in 1..=mp {
            let smin = soft_min3(
                r[(i - 1) * cols + (j - 1)],
                r[(i - 1) * cols + j],
                r[i * cols + (j - 1)],
                gamma,
            );
            r[i * cols + j] = costs.get(i - 1, j - 1) + smin;
        }
    }
    let value = r[m * cols + mp];
    Ok((
        value,
        SoftDtwWorkspace {
            r,
            costs,
            gamma,
            channels: x.channels(),
        },
    ))
}

/// Gradient of the smoothed distance with respect to the first series, as a
/// row-major `m x d` buffer. Runs the reverse recursion
/// `e(i,j) = sum over successor cells of e * exp((r_succ - r(i,j) - delta_succ)/gamma)`
/// seeded at the terminal cell, then chains through
/// `d delta(i,j)/d X[i] = 2(X[i] - Y[j])`.
pub fn soft_dtw_grad(
    workspace: &SoftDtwWorkspace,
    x: &TimeSeries,
    y: &TimeSeries,
) -> Result<Vec<f64>, WarpError> {
    let fresh = cost_matrix(x, y)?;
    if fresh != workspace.costs || x.channels() != workspace.channels {
        return Err(WarpError::WorkspaceMismatch);
    }
    let (m, mp) = (fresh.rows(), fresh.cols());
    let gamma = workspace.gamma;
    let cols = mp + 2;

    // Padded-border views: past-the-end row/column carry a -inf-like
    // sentinel (no path continues there) and zero cost, and the corner
    // aliases r(m, m') so the terminal cell seeds with weight one.
    let r_at = |i: usize, j: usize| -> f64 {
        if i == m + 1 && j == mp + 1 {
            workspace.r_at(m, mp)
        } else if i == m + 1 || j == mp + 1 {
            -BIG
        } else {
            workspace.r_at(i, j)
        }
    };
    let delta_at = |i: usize, j: usize| -> f64 {
        if i > m || j > mp {
            0.0
        } else {
            fresh.get(i - 1, j - 1)
        }
    };

    let mut e = vec![0.0; (m + 2) * cols];
    e[(m + 1) * cols + (mp + 1)] = 1.0;
    for i in (1..=m).rev() {
        for j in (1..=mp).rev() {
            let here = workspace.r_at(i, j);
            let down = e[(i + 1) * cols + j]
                * ((r_at(i + 1, j) - here - delta_at(i + 1, j)) / gamma).exp();
            let right = e[i * cols + (j + 1)]
                * ((r_at(i, j + 1) - here - delta_at(i, j + 1)) / gamma).exp();
            let diag = e[(i + 1) * cols + (j + 1)]
                * ((r_at(i + 1, j + 1) - here - delta_at(i + 1, j + 1)) / gamma).exp();
            e[i * cols + j] = down + right + diag;
        }
    }

    let d = x.channels();
    let mut grad = vec![0.0; m * d];
    for i in 0..m {
        for j in 0..mp {
            let weight = e[(i + 1) * cols + (j + 1)];
            if weight == 0.0 {
                continue;
            }
            for ch in 0..d {
                grad[i * d + ch] += weight * 2.0 * (x.value(i, ch) - y.value(j, ch));
            }
        }
    }
    Ok(grad)
}

/// Every monotone alignment path for a pair of series lengths. The count is
/// the Delannoy number `D(m-1, m'-1)`, hence the size guard.
pub fn brute_force_paths(m: usize, mp: usize) -> Result<Vec<AlignmentPath>, WarpError> {
    if m == 0 || mp == 0 || m > MAX_BRUTE_FORCE || mp > MAX_BRUTE_FORCE {
        return Err(WarpError::PathGuard(m, mp));
    }
    let mut paths = Vec::new();
    let mut prefix = vec![(0usize, 0usize)];
    extend_paths(&mut prefix, m - 1, mp - 1, &mut paths);
    Ok(paths)
}

fn extend_paths(
    prefix: &mut Vec<(usize, usize)>,
    goal_i: usize,
    goal_j: usize,
    out: &mut Vec<AlignmentPath>,
) {
    let &(i, j) = prefix.last().unwrap();
    if (i, j) == (goal_i, goal_j) {
        out.push(AlignmentPath(prefix.clone()));
        return;
    }
    let mut moves = Vec::with_capacity(3);
    if i < goal_i && j < goal_j {
        moves.push((i + 1, j + 1));
    }
    if i < goal_i {
        moves.push((i + 1, j));
    }
    if j < goal_j {
        moves.push((i, j + 1));
    }
    for next in moves {
        prefix.push(next);
        extend_paths(prefix, goal_i, goal_j, out);
        prefix.pop();
    }
}
