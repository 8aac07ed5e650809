use crate::commands::{check_compatibility, load_bundle};
use crate::dataio::{create_dir, read_json, resolve_dataset, series_from_csv, write_atomic};
use crate::reports::ResultsIndex;
use crate::CliError;
use cfx_core::series::TimeSeries;
use clap::Args;
use std::fmt::Write as _;
use std::path::PathBuf;

#[derive(Args)]
pub struct PlotDataArgs {
    /// Results directory written by `cfx explain --series-out`.
    #[arg(long)]
    pub results: PathBuf,
    /// Model file (for the normalization applied to neighbor series).
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory or two files (train, then test); neighbors are
    /// looked up in the train split.
    #[arg(long, required = true, num_args = 1..=2)]
    pub data: Vec<PathBuf>,
    /// Output directory for plot CSVs; defaults to the results directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

pub fn run(args: PlotDataArgs) -> Result<(), CliError> {
    let bundle = load_bundle(&args.model)?;
    let (_, raw) = resolve_dataset(&args.data)?;
    check_compatibility(&bundle, &raw)?;
    let normalized = raw
        .normalized_with(&bundle.stats)
        .map_err(CliError::domain)?;

    let index: ResultsIndex = read_json(&args.results.join("index.json"))?;
    let out_dir = args.out_dir.clone().unwrap_or_else(|| args.results.clone());
    create_dir(&out_dir)?;

    let mut written = 0usize;
    for record in index.instances.iter().filter(|r| !r.skipped) {
        let original =
            series_from_csv(&args.results.join(format!("{}_original.csv", record.stem)))?;
        let counterfactual = series_from_csv(
            &args
                .results
                .join(format!("{}_counterfactual.csv", record.stem)),
        )?;
        let mut roles: Vec<(String, &TimeSeries)> = vec![
            ("original".to_string(), &original),
            ("counterfactual".to_string(), &counterfactual),
        ];
        for (j, &id) in record.neighbor_ids.iter().enumerate() {
            let (series, _) = normalized.train().get(id).ok_or_else(|| {
                CliError::domain(format!(
                    "{}: neighbor id {id} is outside the train split",
                    record.stem
                ))
            })?;
            roles.push((format!("neighbor_{}", j + 1), series));
        }

        let mut csv = String::from("series_role,t,ch,value\n");
        for (role, series) in &roles {
            for t in 0..series.t_len() {
                for ch in 0..series.channels() {
                    writeln!(csv, "{role},{t},{ch},{}", series.value(t, ch)).unwrap();
                }
            }
        }
        write_atomic(
            &out_dir.join(format!("{}_plot.csv", record.stem)),
            csv.as_bytes(),
        )?;
        written += 1;
    }
    if written == 0 {
        return Err(CliError::domain(format!(
            "{}: no explained instances to plot",
            args.results.display()
        )));
    }
    log::info!("wrote {written} plot CSVs to {}", out_dir.display());
    Ok(())
}
