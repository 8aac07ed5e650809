pub mod evaluate;
pub mod explain;
pub mod gen_cbf;
pub mod plot_data;
pub mod train;

use crate::CliError;
use cfx_core::nn::ModelBundle;
use cfx_core::series::Dataset;

/// Load a model file, mapping the error to the right exit class.
pub fn load_bundle(path: &std::path::Path) -> Result<ModelBundle, CliError> {
    cfx_core::nn::load_model(path).map_err(|e| match e {
        cfx_core::nn::PersistError::Io(source) => CliError::io(path.to_path_buf(), source),
        other => CliError::domain(format!("{}: {other}", path.display())),
    })
}

/// The dataset must match the model's manifest before any pipeline step.
pub fn check_compatibility(bundle: &ModelBundle, dataset: &Dataset) -> Result<(), CliError> {
    let (t_len, channels) = dataset.shape();
    let expected = (
        bundle.input_len,
        bundle.classifier.in_channels(),
        bundle.classifier.num_classes(),
    );
    let found = (t_len, channels, dataset.num_classes());
    if expected != found {
        return Err(CliError::domain(format!(
            "model expects (T={}, d={}, c={}) but the dataset has (T={}, d={}, c={})",
            expected.0, expected.1, expected.2, found.0, found.1, found.2
        )));
    }
    let model_names: Vec<&str> = bundle.labels.iter().map(|l| l.name.as_str()).collect();
    let data_names: Vec<&str> = dataset.labels().iter().map(|l| l.name.as_str()).collect();
    if model_names != data_names {
        return Err(CliError::domain(format!(
            "model labels {model_names:?} do not match dataset labels {data_names:?}"
        )));
    }
    Ok(())
}
