use crate::commands::{check_compatibility, load_bundle};
use crate::config::load_settings;
use crate::dataio::{read_json, resolve_dataset, series_from_csv, write_json};
use crate::reports::{MetricsJson, ResultsIndex};
use crate::CliError;
use cfx_core::cfe::CfeResult;
use cfx_core::metrics::evaluate;
use clap::Args;
use std::path::PathBuf;

#[derive(Args)]
pub struct EvaluateArgs {
    /// Model file written by `cfx train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory or two files (train, then test); the train split
    /// supplies neighbor pools and isolation-forest references.
    #[arg(long, required = true, num_args = 1..=2)]
    pub data: Vec<PathBuf>,
    /// Results directory written by `cfx explain --series-out`.
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Metrics JSON output path.
    #[arg(long)]
    pub out: PathBuf,
    /// Optional `[section] key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: EvaluateArgs) -> Result<(), CliError> {
    let (_, explain_settings) = load_settings(args.config.as_deref())?;
    let seed = args.seed.unwrap_or(explain_settings.seed);

    let bundle = load_bundle(&args.model)?;
    let (name, raw) = resolve_dataset(&args.data)?;
    check_compatibility(&bundle, &raw)?;
    let normalized = raw
        .normalized_with(&bundle.stats)
        .map_err(CliError::domain)?;

    let index: ResultsIndex = read_json(&args.results.join("index.json"))?;
    let mut results: Vec<CfeResult> = Vec::new();
    for record in index.instances.iter().filter(|r| !r.skipped) {
        let original =
            series_from_csv(&args.results.join(format!("{}_original.csv", record.stem)))?;
        let counterfactual = series_from_csv(
            &args
                .results
                .join(format!("{}_counterfactual.csv", record.stem)),
        )?;
        let source = normalized.label_index(&record.source).ok_or_else(|| {
            CliError::domain(format!("unknown class {:?} in results", record.source))
        })?;
        let target = normalized.label_index(&record.target).ok_or_else(|| {
            CliError::domain(format!("unknown class {:?} in results", record.target))
        })?;
        results.push(CfeResult {
            original,
            counterfactual,
            source_class: normalized.labels()[source].clone(),
            target_class: normalized.labels()[target].clone(),
            valid: record.valid,
            trivial: false,
            trajectory: Vec::new(),
            neighbor_ids: record.neighbor_ids.clone(),
            iterations_used: record.iterations_used,
        });
    }
    if results.is_empty() {
        return Err(CliError::domain(format!(
            "{}: no explained instances to evaluate",
            args.results.display()
        )));
    }

    let report = evaluate(&results, &bundle.classifier, normalized.train(), seed)
        .map_err(CliError::domain)?;
    log::info!(
        "evaluated {} results: validity {:.4}, L1 {:.4}, L2 {:.4}, alignment {:.4} (originals {:.4}), nominal {:.4}",
        results.len(),
        report.all.validity,
        report.all.l1,
        report.all.l2,
        report.all.dtw_plausibility,
        report.all.originals_dtw_plausibility,
        report.all.iso_nominal_fraction
    );

    let json = MetricsJson {
        dataset: name,
        n: results.len(),
        mode: report,
        config: serde_json::json!({
            "seed": seed,
            "model": args.model.display().to_string(),
            "data": args.data.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
            "results": args.results.display().to_string(),
        }),
    };
    write_json(&args.out, &json)?;
    log::info!("metrics written to {}", args.out.display());
    Ok(())
}
