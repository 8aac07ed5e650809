//! Core library for `cfx`: time series types and IO, a small reverse-mode
//! autodiff engine with the 1D CNN classifier built on it, hard and soft
//! dynamic time warping, the counterfactual-explanation optimizer, and the
//! evaluation metrics (validity, L1/L2, DTW plausibility, isolation-forest
//! nominality).

pub mod cfe;
pub mod gradcheck;
pub mod io;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod series;
pub mod tape;
pub mod warp;
