use crate::commands::{check_compatibility, load_bundle};
use crate::config::load_settings;
use crate::dataio::{create_dir, resolve_dataset, series_to_csv, write_atomic, write_json};
use crate::reports::{ExplainReportJson, InstanceRecord, LossBreakdown, ResultsIndex};
use crate::CliError;
use cfx_core::cfe::{composite_loss, generate, pick_target, CfeConfig, CfeError, TargetPolicy};
use cfx_core::nn::ModelBundle;
use cfx_core::series::{Dataset, TimeSeries};
use clap::Args;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Args)]
pub struct ExplainArgs {
    /// Model file written by `cfx train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory or two files (train, then test); the train split
    /// supplies the target-class neighbors.
    #[arg(long, required = true, num_args = 1..=2)]
    pub data: Vec<PathBuf>,
    /// `second` (second most probable class) or `fixed:LABEL`.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Explain only the first N test instances (0 = all).
    #[arg(long)]
    pub limit: Option<usize>,
    /// Report JSON output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for per-instance CSVs and the results index.
    #[arg(long)]
    pub series_out: PathBuf,
    /// Optional `[section] key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: ExplainArgs) -> Result<(), CliError> {
    let (_, mut settings) = load_settings(args.config.as_deref())?;
    if let Some(v) = args.lambda {
        settings.lambda = v;
    }
    if let Some(v) = args.k {
        settings.k = v;
    }
    if let Some(v) = args.gamma {
        settings.gamma = v;
    }
    if let Some(v) = args.tau {
        settings.tau = v;
    }
    if let Some(v) = args.iters {
        settings.iters = v;
    }
    if let Some(v) = args.lr {
        settings.lr = v;
    }
    if let Some(v) = args.seed {
        settings.seed = v;
    }
    if let Some(v) = args.limit {
        settings.limit = v;
    }
    if let Some(v) = args.target.clone() {
        settings.target = v;
    }
    let policy = settings.target_policy()?;
    let cfe_config = settings.to_core()?;

    let bundle = load_bundle(&args.model)?;
    let (name, raw) = resolve_dataset(&args.data)?;
    check_compatibility(&bundle, &raw)?;
    let normalized = raw
        .normalized_with(&bundle.stats)
        .map_err(CliError::domain)?;

    let mut instances: Vec<(usize, &TimeSeries)> = normalized
        .test()
        .iter()
        .enumerate()
        .map(|(i, (series, _))| (i, series))
        .collect();
    if settings.limit > 0 {
        instances.truncate(settings.limit);
    }
    if instances.is_empty() {
        return Err(CliError::domain("the test split has no instances"));
    }
    create_dir(&args.series_out)?;

    log::info!(
        "explaining {} instances of {name} (lambda={}, k={}, gamma={}, tau={})",
        instances.len(),
        settings.lambda,
        settings.k,
        settings.gamma,
        settings.tau
    );
    let pool = build_pool()?;
    let outcomes: Vec<Result<InstanceRecord, CliError>> = pool.install(|| {
        instances
            .par_iter()
            .map(|(idx, series)| {
                explain_one(
                    *idx,
                    series,
                    &bundle,
                    &normalized,
                    &policy,
                    &cfe_config,
                    &args.series_out,
                )
            })
            .collect()
    });
    let mut records = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        records.push(outcome?);
    }

    let explained: Vec<&InstanceRecord> = records.iter().filter(|r| !r.skipped).collect();
    let n_skipped = records.len() - explained.len();
    let validity = if explained.is_empty() {
        0.0
    } else {
        explained.iter().filter(|r| r.valid).count() as f64 / explained.len() as f64
    };
    let mean_final_loss = mean_loss(&explained);

    let config_echo = serde_json::json!({
        "explain": settings,
        "model": args.model.display().to_string(),
        "data": args.data.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
    });
    let index = ResultsIndex {
        dataset: name.clone(),
        model: args.model.display().to_string(),
        k: settings.k,
        target_policy: settings.target.clone(),
        instances: records.clone(),
    };
    write_json(&args.series_out.join("index.json"), &index)?;

    let report = ExplainReportJson {
        dataset: name,
        model: args.model.display().to_string(),
        n_considered: records.len(),
        n_explained: explained.len(),
        n_skipped,
        validity,
        mean_final_loss,
        instances: records,
        config: config_echo,
    };
    write_json(&args.out, &report)?;
    log::info!(
        "explained {} instances ({} skipped), validity {:.4}; results in {}",
        report.n_explained,
        report.n_skipped,
        report.validity,
        args.series_out.display()
    );
    Ok(())
}

/// Worker pool sized by CFX_THREADS when set (and nonzero).
fn build_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("CFX_THREADS") {
        let count: usize = raw
            .parse()
            .map_err(|_| CliError::Config(format!("CFX_THREADS: cannot parse {raw:?}")))?;
        if count > 0 {
            builder = builder.num_threads(count);
        }
    }
    builder
        .build()
        .map_err(|e| CliError::domain(format!("worker pool: {e}")))
}

fn explain_one(
    idx: usize,
    series: &TimeSeries,
    bundle: &ModelBundle,
    dataset: &Dataset,
    policy: &TargetPolicy,
    config: &CfeConfig,
    out_dir: &Path,
) -> Result<InstanceRecord, CliError> {
    let target = match pick_target(series, &bundle.classifier, &bundle.labels, policy) {
        Ok(label) => label,
        Err(CfeError::TargetEqualsPrediction(label)) => {
            log::warn!(
                "instance {idx}: prediction already equals the fixed target {label:?}; skipped"
            );
            return Ok(InstanceRecord {
                index: idx,
                stem: String::new(),
                source: label.clone(),
                target: label,
                skipped: true,
                valid: false,
                iterations_used: 0,
                neighbor_ids: Vec::new(),
                final_loss: None,
            });
        }
        Err(other) => return Err(CliError::domain(format!("instance {idx}: {other}"))),
    };

    let result = generate(
        series,
        target.index,
        &bundle.classifier,
        dataset.train(),
        &bundle.labels,
        config,
    )
    .map_err(|e| CliError::domain(format!("instance {idx}: {e}")))?;

    // loss terms at the returned iterate (the trajectory logs every iterate,
    // but the best valid one is what gets written out)
    let neighbors: Vec<&TimeSeries> = result
        .neighbor_ids
        .iter()
        .map(|&id| &dataset.train()[id].0)
        .collect();
    let (final_terms, _, _) = composite_loss(
        &result.counterfactual,
        &result.original,
        &neighbors,
        target.index,
        &bundle.classifier,
        config,
    )
    .map_err(|e| CliError::domain(format!("instance {idx}: {e}")))?;

    let stem = format!("instance_{idx:04}");
    write_atomic(
        &out_dir.join(format!("{stem}_original.csv")),
        series_to_csv(&result.original).as_bytes(),
    )?;
    write_atomic(
        &out_dir.join(format!("{stem}_counterfactual.csv")),
        series_to_csv(&result.counterfactual).as_bytes(),
    )?;
    write_atomic(
        &out_dir.join(format!("{stem}_loss.csv")),
        trajectory_csv(&result.trajectory).as_bytes(),
    )?;

    log::debug!(
        "instance {idx}: {} -> {} valid={} iterations={}",
        result.source_class.name,
        result.target_class.name,
        result.valid,
        result.iterations_used
    );
    Ok(InstanceRecord {
        index: idx,
        stem,
        source: result.source_class.name,
        target: result.target_class.name,
        skipped: false,
        valid: result.valid,
        iterations_used: result.iterations_used,
        neighbor_ids: result.neighbor_ids,
        final_loss: Some(final_terms.into()),
    })
}

fn trajectory_csv(trajectory: &[cfx_core::cfe::LossTerms]) -> String {
    let mut out = String::from("iteration,prox,sparse,valid,dtw,total\n");
    for (i, terms) in trajectory.iter().enumerate() {
        writeln!(
            out,
            "{i},{},{},{},{},{}",
            terms.prox, terms.sparse, terms.valid, terms.dtw, terms.total
        )
        .unwrap();
    }
    out
}

fn mean_loss(explained: &[&InstanceRecord]) -> Option<LossBreakdown> {
    let losses: Vec<LossBreakdown> = explained.iter().filter_map(|r| r.final_loss).collect();
    if losses.is_empty() {
        return None;
    }
    let n = losses.len() as f64;
    Some(LossBreakdown {
        prox: losses.iter().map(|l| l.prox).sum::<f64>() / n,
        sparse: losses.iter().map(|l| l.sparse).sum::<f64>() / n,
        valid: losses.iter().map(|l| l.valid).sum::<f64>() / n,
        dtw: losses.iter().map(|l| l.dtw).sum::<f64>() / n,
        total: losses.iter().map(|l| l.total).sum::<f64>() / n,
    })
}
