//! Dataset file resolution and the small CSV formats the pipeline emits.

use crate::CliError;
use cfx_core::io::ts::parse_uea_ts;
use cfx_core::io::ucr::parse_ucr_tsv;
use cfx_core::io::LabeledSplit;
use cfx_core::series::{Dataset, TimeSeries};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Resolve `--data` into a named dataset: either one directory holding a
/// TRAIN and a TEST file, or the two files given explicitly (train first).
pub fn resolve_dataset(paths: &[PathBuf]) -> Result<(String, Dataset), CliError> {
    let (train_path, test_path) = match paths {
        [dir] if dir.is_dir() => locate_splits(dir)?,
        [train, test] => (train.clone(), test.clone()),
        [single] if !single.exists() => {
            return Err(CliError::io(
                single.clone(),
                std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
            ))
        }
        [single] => {
            return Err(CliError::Config(format!(
                "--data {}: not a directory; pass a directory or two files (train, test)",
                single.display()
            )))
        }
        _ => {
            return Err(CliError::Config(
                "--data expects one directory or exactly two files (train, test)".to_string(),
            ))
        }
    };
    let name = dataset_name(&train_path);
    let train = parse_split(&train_path)?;
    let test = parse_split(&test_path)?;
    let dataset = cfx_core::io::into_dataset(train, test)
        .map_err(|e| CliError::domain(format!("{}: {e}", train_path.display())))?;
    Ok((name, dataset))
}

fn locate_splits(dir: &Path) -> Result<(PathBuf, PathBuf), CliError> {
    let mut train: Vec<PathBuf> = Vec::new();
    let mut test: Vec<PathBuf> = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir.to_path_buf(), e))?;
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir.to_path_buf(), e))?;
        let path = entry.path();
        let ext_ok = matches!(
            path.extension().and_then(|e| e.to_str()),
            Some("tsv") | Some("txt") | Some("ts")
        );
        if !ext_ok {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_uppercase();
        if stem.ends_with("TRAIN") {
            train.push(path);
        } else if stem.ends_with("TEST") {
            test.push(path);
        }
    }
    train.sort();
    test.sort();
    match (train.as_slice(), test.as_slice()) {
        ([t], [e]) => Ok((t.clone(), e.clone())),
        ([], _) | (_, []) => Err(CliError::Config(format!(
            "{}: need exactly one *TRAIN* and one *TEST* file (.tsv/.txt/.ts), found {} and {}",
            dir.display(),
            train.len(),
            test.len()
        ))),
        _ => Err(CliError::Config(format!(
            "{}: ambiguous splits; found {} TRAIN and {} TEST files",
            dir.display(),
            train.len(),
            test.len()
        ))),
    }
}

/// Dataset display name: file stem with a trailing `_TRAIN`/`_TEST` removed.
fn dataset_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset");
    for suffix in ["_TRAIN", "_TEST", "-TRAIN", "-TEST"] {
        if stem.to_uppercase().ends_with(suffix) && stem.len() > suffix.len() {
            if let Some(trimmed) = stem.get(..stem.len() - suffix.len()) {
                return trimmed.to_string();
            }
        }
    }
    stem.to_string()
}

fn parse_split(path: &Path) -> Result<LabeledSplit, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.to_path_buf(), e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let parsed = if ext.eq_ignore_ascii_case("ts") {
        parse_uea_ts(&text).map(|(_, split)| split)
    } else {
        parse_ucr_tsv(&text)
    };
    parsed.map_err(|e| CliError::domain(format!("{}: {e}", path.display())))
}

/// Write through a temp file in the same directory, then rename into place,
/// so readers never observe a half-written output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| CliError::Config(format!("{}: not a file path", path.display())))?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    std::fs::write(&tmp, bytes).map_err(|e| CliError::io(tmp.clone(), e))?;
    std::fs::rename(&tmp, path).map_err(|e| CliError::io(path.to_path_buf(), e))
}

pub fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path.to_path_buf(), e))
}

/// One series as CSV: header `t,ch0,ch1,...`, one row per timestep,
/// shortest round-trip decimals.
pub fn series_to_csv(series: &TimeSeries) -> String {
    let mut out = String::from("t");
    for ch in 0..series.channels() {
        write!(out, ",ch{ch}").unwrap();
    }
    out.push('\n');
    for t in 0..series.t_len() {
        write!(out, "{t}").unwrap();
        for ch in 0..series.channels() {
            write!(out, ",{}", series.value(t, ch)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn series_from_csv(path: &Path) -> Result<TimeSeries, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.to_path_buf(), e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::domain(format!("{}: empty series CSV", path.display())))?;
    let channels = header.split(',').count().saturating_sub(1);
    if channels == 0 || !header.starts_with('t') {
        return Err(CliError::domain(format!(
            "{}: expected header `t,ch0,...`, got {header:?}",
            path.display()
        )));
    }
    let mut values = Vec::new();
    let mut t_len = 0usize;
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != channels + 1 {
            return Err(CliError::domain(format!(
                "{}: row {} has {} fields, expected {}",
                path.display(),
                idx + 2,
                fields.len(),
                channels + 1
            )));
        }
        for field in &fields[1..] {
            let value: f64 = field.parse().map_err(|_| {
                CliError::domain(format!(
                    "{}: row {}: cannot parse {field:?} as a number",
                    path.display(),
                    idx + 2
                ))
            })?;
            values.push(value);
        }
        t_len += 1;
    }
    TimeSeries::new(values, t_len, channels)
        .map_err(|e| CliError::domain(format!("{}: {e}", path.display())))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path.to_path_buf(), e))?;
    serde_json::from_str(&text).map_err(|e| CliError::domain(format!("{}: {e}", path.display())))
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::domain(format!("{}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}
