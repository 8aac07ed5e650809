use crate::dataio::{create_dir, write_atomic};
use crate::CliError;
use cfx_core::io::cbf::{balanced_specs, generate_cbf};
use cfx_core::io::ucr::format_ucr_tsv;
use clap::Args;
use std::path::PathBuf;

#[derive(Args)]
pub struct GenCbfArgs {
    /// Series length T (at least 16).
    #[arg(long)]
    pub length: usize,
    /// Training samples per class.
    #[arg(long)]
    pub per_class: usize,
    /// Test samples per class; defaults to half the training count.
    #[arg(long)]
    pub test_per_class: Option<usize>,
    #[arg(long)]
    pub seed: u64,
    /// Output directory; receives CBF_TRAIN.tsv and CBF_TEST.tsv.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: GenCbfArgs) -> Result<(), CliError> {
    if args.per_class == 0 {
        return Err(CliError::Config(
            "--per-class must be at least 1".to_string(),
        ));
    }
    let test_per_class = args.test_per_class.unwrap_or((args.per_class / 2).max(1));
    if test_per_class == 0 {
        return Err(CliError::Config(
            "--test-per-class must be at least 1".to_string(),
        ));
    }

    let train_specs = balanced_specs(args.length, args.per_class);
    let test_specs = balanced_specs(args.length, test_per_class);
    let dataset = generate_cbf(&train_specs, &test_specs, args.seed).map_err(CliError::domain)?;

    create_dir(&args.out)?;
    let train_path = args.out.join("CBF_TRAIN.tsv");
    let test_path = args.out.join("CBF_TEST.tsv");
    write_atomic(
        &train_path,
        format_ucr_tsv(dataset.train(), dataset.labels()).as_bytes(),
    )?;
    write_atomic(
        &test_path,
        format_ucr_tsv(dataset.test(), dataset.labels()).as_bytes(),
    )?;
    log::info!(
        "wrote {} train and {} test series (T={}) to {}",
        dataset.train().len(),
        dataset.test().len(),
        args.length,
        args.out.display()
    );
    Ok(())
}
