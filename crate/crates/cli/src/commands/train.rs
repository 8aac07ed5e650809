use crate::config::load_settings;
use crate::dataio::{resolve_dataset, write_atomic, write_json};
use crate::reports::TrainReportJson;
use crate::CliError;
use cfx_core::nn::{encode_model, train, ModelBundle};
use cfx_core::series::z_normalize;
use clap::Args;
use std::path::PathBuf;

#[derive(Args)]
pub struct TrainArgs {
    /// Dataset directory (containing *TRAIN*/*TEST* files) or two files
    /// (train, then test).
    #[arg(long, required = true, num_args = 1..=2)]
    pub data: Vec<PathBuf>,
    /// Model output path, e.g. model.cfxm; train_report.json lands next to it.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Optional `[section] key = value` config file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

pub fn run(args: TrainArgs) -> Result<(), CliError> {
    let (mut settings, _) = load_settings(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        settings.seed = seed;
    }
    if let Some(epochs) = args.epochs {
        settings.epochs = epochs;
    }
    if let Some(lr) = args.lr {
        settings.lr = lr;
    }
    if let Some(batch) = args.batch {
        settings.batch = batch;
    }

    let (name, raw) = resolve_dataset(&args.data)?;
    let normalized = z_normalize(&raw).map_err(CliError::domain)?;
    let stats = normalized
        .stats()
        .expect("z_normalize always attaches stats")
        .clone();

    log::info!(
        "training on {name}: {} train / {} test series, shape (T={}, d={}), {} classes",
        normalized.train().len(),
        normalized.test().len(),
        normalized.shape().0,
        normalized.shape().1,
        normalized.num_classes()
    );
    let (classifier, report) = train(&normalized, &settings.to_core()).map_err(CliError::domain)?;

    let bundle = ModelBundle {
        classifier,
        input_len: normalized.shape().0,
        labels: normalized.labels().to_vec(),
        stats,
    };
    let bytes = encode_model(&bundle).map_err(CliError::domain)?;
    write_atomic(&args.out, &bytes)?;

    let report_path = args
        .out
        .parent()
        .map(|p| p.join("train_report.json"))
        .unwrap_or_else(|| PathBuf::from("train_report.json"));
    let json = TrainReportJson {
        dataset: name,
        model: args.out.display().to_string(),
        epochs_run: report.epochs_run,
        best_epoch: report.best_epoch,
        best_val_loss: report.best_val_loss,
        train_accuracy: report.train_accuracy,
        val_accuracy: report.val_accuracy,
        test_accuracy: report.test_accuracy,
        config: serde_json::json!({ "train": settings }),
    };
    write_json(&report_path, &json)?;

    log::info!(
        "model saved to {}; test accuracy {}",
        args.out.display(),
        json.test_accuracy
            .map(|a| format!("{a:.4}"))
            .unwrap_or_else(|| "n/a".to_string())
    );
    Ok(())
}
