//! Flat `[section] key = value` config files plus flag overrides. Flags win
//! over file values; the effective settings are echoed into every output
//! JSON so a run can be reproduced from its own report.

use crate::CliError;
use cfx_core::cfe::{CfeConfig, NeighborMetric, TargetPolicy};
use cfx_core::nn::TrainConfig;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

/// Raw key/value pairs grouped by section header.
#[derive(Debug, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::io(path.to_path_buf(), e))?;
        Self::parse(&text).map_err(|msg| CliError::Config(format!("{}: {msg}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| format!("line {}: unclosed section header", idx + 1))?;
                current = Some(name.trim().to_string());
                sections.entry(name.trim().to_string()).or_default();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", idx + 1))?;
            let section = current
                .clone()
                .ok_or_else(|| format!("line {}: key outside any [section]", idx + 1))?;
            sections
                .entry(section)
                .or_default()
                .insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(ConfigFile { sections })
    }

    /// Consume one section; leftover keys in it are reported as errors by
    /// `finish`.
    fn section(&mut self, name: &str) -> BTreeMap<String, String> {
        self.sections.remove(name).unwrap_or_default()
    }

    fn finish(self) -> Result<(), CliError> {
        if let Some((section, keys)) = self.sections.iter().find(|(_, keys)| !keys.is_empty()) {
            let key = keys.keys().next().expect("nonempty");
            return Err(CliError::Config(format!(
                "unknown config section or key: [{section}] {key}"
            )));
        }
        Ok(())
    }
}

fn take_parsed<T: FromStr>(
    section: &mut BTreeMap<String, String>,
    section_name: &str,
    key: &str,
    into: &mut T,
) -> Result<(), CliError> {
    if let Some(raw) = section.remove(key) {
        *into = raw.parse::<T>().map_err(|_| {
            CliError::Config(format!("[{section_name}] {key}: cannot parse {raw:?}"))
        })?;
    }
    Ok(())
}

/// Training hyperparameters as they appear in config files and reports.
#[derive(Debug, Clone, Serialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let base = TrainConfig::default();
        TrainSettings {
            epochs: base.max_epochs,
            patience: base.patience,
            lr: base.learning_rate,
            weight_decay: base.weight_decay,
            dropout: base.dropout,
            batch: base.batch_size,
            seed: base.seed,
        }
    }
}

impl TrainSettings {
    pub fn from_file(file: &mut ConfigFile) -> Result<Self, CliError> {
        let mut out = TrainSettings::default();
        let mut section = file.section("train");
        take_parsed(&mut section, "train", "epochs", &mut out.epochs)?;
        take_parsed(&mut section, "train", "patience", &mut out.patience)?;
        take_parsed(&mut section, "train", "lr", &mut out.lr)?;
        take_parsed(&mut section, "train", "weight_decay", &mut out.weight_decay)?;
        take_parsed(&mut section, "train", "dropout", &mut out.dropout)?;
        take_parsed(&mut section, "train", "batch", &mut out.batch)?;
        if let Some((key, _)) = section.iter().next() {
            return Err(CliError::Config(format!("unknown key in [train]: {key}")));
        }
        Ok(out)
    }

    pub fn to_core(&self) -> TrainConfig {
        TrainConfig {
            max_epochs: self.epochs,
            patience: self.patience,
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            dropout: self.dropout,
            batch_size: self.batch,
            seed: self.seed,
        }
    }
}

/// Explanation hyperparameters as they appear in config files and reports.
#[derive(Debug, Clone, Serialize)]
pub struct ExplainSettings {
    pub lambda: f64,
    pub k: usize,
    pub gamma: f64,
    pub tau: f64,
    pub iters: usize,
    pub lr: f64,
    pub seed: u64,
    pub target: String,
    pub neighbor_metric: String,
    /// 0 explains every test instance.
    pub limit: usize,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        let base = CfeConfig::default();
        ExplainSettings {
            lambda: base.lambda,
            k: base.k,
            gamma: base.gamma,
            tau: base.tau,
            iters: base.iterations,
            lr: base.learning_rate,
            seed: base.seed,
            target: "second".to_string(),
            neighbor_metric: "euclidean".to_string(),
            limit: 0,
        }
    }
}

impl ExplainSettings {
    pub fn from_file(file: &mut ConfigFile) -> Result<Self, CliError> {
        let mut out = ExplainSettings::default();
        let mut section = file.section("explain");
        take_parsed(&mut section, "explain", "lambda", &mut out.lambda)?;
        take_parsed(&mut section, "explain", "k", &mut out.k)?;
        take_parsed(&mut section, "explain", "gamma", &mut out.gamma)?;
        take_parsed(&mut section, "explain", "tau", &mut out.tau)?;
        take_parsed(&mut section, "explain", "iters", &mut out.iters)?;
        take_parsed(&mut section, "explain", "lr", &mut out.lr)?;
        take_parsed(&mut section, "explain", "target", &mut out.target)?;
        take_parsed(
            &mut section,
            "explain",
            "neighbor_metric",
            &mut out.neighbor_metric,
        )?;
        take_parsed(&mut section, "explain", "limit", &mut out.limit)?;
        if let Some((key, _)) = section.iter().next() {
            return Err(CliError::Config(format!("unknown key in [explain]: {key}")));
        }
        Ok(out)
    }

    pub fn to_core(&self) -> Result<CfeConfig, CliError> {
        let neighbor_metric = match self.neighbor_metric.as_str() {
            "euclidean" => NeighborMetric::Euclidean,
            "dtw" => NeighborMetric::Dtw,
            other => {
                return Err(CliError::Config(format!(
                    "neighbor_metric must be `euclidean` or `dtw`, got {other:?}"
                )))
            }
        };
        Ok(CfeConfig {
            lambda: self.lambda,
            k: self.k,
            gamma: self.gamma,
            tau: self.tau,
            iterations: self.iters,
            learning_rate: self.lr,
            seed: self.seed,
            neighbor_metric,
        })
    }

    pub fn target_policy(&self) -> Result<TargetPolicy, CliError> {
        self.target
            .parse::<TargetPolicy>()
            .map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Load the optional config file, pull both known sections, and reject
/// anything unrecognized.
pub fn load_settings(
    config_path: Option<&Path>,
) -> Result<(TrainSettings, ExplainSettings), CliError> {
    let mut file = match config_path {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let mut run = file.section("run");
    let mut run_seed: Option<u64> = None;
    if let Some(raw) = run.remove("seed") {
        run_seed = Some(
            raw.parse::<u64>()
                .map_err(|_| CliError::Config(format!("[run] seed: cannot parse {raw:?}")))?,
        );
    }
    if let Some((key, _)) = run.iter().next() {
        return Err(CliError::Config(format!("unknown key in [run]: {key}")));
    }
    let mut train = TrainSettings::from_file(&mut file)?;
    let mut explain = ExplainSettings::from_file(&mut file)?;
    file.finish()?;
    if let Some(seed) = run_seed {
        train.seed = seed;
        explain.seed = seed;
    }
    Ok((train, explain))
}
