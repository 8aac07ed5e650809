//! JSON shapes written by the pipeline. Field order is fixed by declaration,
//! and nothing here embeds timestamps, so identical runs serialize
//! identically byte for byte.

use cfx_core::cfe::LossTerms;
use cfx_core::metrics::MetricsReport;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub prox: f64,
    pub sparse: f64,
    pub valid: f64,
    pub dtw: f64,
    pub total: f64,
}

impl From<LossTerms> for LossBreakdown {
    fn from(terms: LossTerms) -> Self {
        LossBreakdown {
            prox: terms.prox,
            sparse: terms.sparse,
            valid: terms.valid,
            dtw: terms.dtw,
            total: terms.total,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct TrainReportJson {
    pub dataset: String,
    pub model: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub test_accuracy: Option<f64>,
    pub config: serde_json::Value,
}

/// One explained (or skipped) test instance, as stored in both the explain
/// report and the results-directory index.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: usize,
    /// File stem of this instance's CSVs inside the results directory;
    /// empty for skipped instances, which have no files.
    pub stem: String,
    /// Class the classifier assigned to the original.
    pub source: String,
    pub target: String,
    pub skipped: bool,
    pub valid: bool,
    pub iterations_used: usize,
    pub neighbor_ids: Vec<usize>,
    pub final_loss: Option<LossBreakdown>,
}

/// Manifest written into the results directory so downstream commands can
/// reconstruct the run without re-deriving anything.
#[derive(Debug, Serialize, Deserialize)]
pub struct ResultsIndex {
    pub dataset: String,
    pub model: String,
    pub k: usize,
    pub target_policy: String,
    pub instances: Vec<InstanceRecord>,
}

#[derive(Debug, Serialize)]
pub struct ExplainReportJson {
    pub dataset: String,
    pub model: String,
    pub n_considered: usize,
    pub n_explained: usize,
    pub n_skipped: usize,
    /// Fraction of explained instances whose counterfactual flips the
    /// classifier to the target class.
    pub validity: f64,
    /// Loss terms of the returned counterfactuals, averaged over explained
    /// instances.
    pub mean_final_loss: Option<LossBreakdown>,
    pub instances: Vec<InstanceRecord>,
    pub config: serde_json::Value,
}

#[derive(Debug, Serialize)]
pub struct MetricsJson {
    pub dataset: String,
    pub n: usize,
    pub mode: MetricsReport,
    pub config: serde_json::Value,
}
