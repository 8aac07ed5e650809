//! Model files: a `CFXM` magic, a format version, a shape manifest
//! (series length, channels, classes, block widths, dropout, label names,
//! normalization statistics), then every parameter and running statistic
//! as raw little-endian f64 blocks in a fixed order. Round trips are
//! bit-exact.

use crate::nn::{Classifier, Conv1dBlock, BLOCK_CHANNELS, HEAD_FEATURES, MIN_INPUT_LEN};
use crate::series::{ClassLabel, NormStats};
use crate::tape::Tensor;
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"CFXM";
/// Current file format version.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a model file (bad magic)")]
    BadMagic,
    #[error("unsupported model format version {found} (this build reads version {expected})")]
    Version { expected: u32, found: u32 },
    #[error("truncated model file")]
    Truncated,
    #[error("shape manifest inconsistency: {0}")]
    Manifest(String),
}

/// A trained classifier plus everything needed to run it on raw data:
/// the series length it was trained for, the label vocabulary, and the
/// train-split normalization statistics.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub classifier: Classifier,
    pub input_len: usize,
    pub labels: Vec<ClassLabel>,
    pub stats: NormStats,
}

pub fn save_model(path: impl AsRef<Path>, bundle: &ModelBundle) -> Result<(), PersistError> {
    let bytes = encode_model(bundle)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle, PersistError> {
    decode_model(&std::fs::read(path)?)
}

pub fn encode_model(bundle: &ModelBundle) -> Result<Vec<u8>, PersistError> {
    let clf = &bundle.classifier;
    if bundle.labels.len() != clf.num_classes() {
        return Err(PersistError::Manifest(format!(
            "{} labels for {} classes",
            bundle.labels.len(),
            clf.num_classes()
        )));
    }
    if bundle.stats.num_channels() != clf.in_channels() {
        return Err(PersistError::Manifest(format!(
            "normalization stats cover {} channels, classifier reads {}",
            bundle.stats.num_channels(),
            clf.in_channels()
        )));
    }
    if bundle.input_len < MIN_INPUT_LEN {
        return Err(PersistError::Manifest(format!(
            "input length {} below the classifier minimum {MIN_INPUT_LEN}",
            bundle.input_len
        )));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    push_u32(&mut out, FORMAT_VERSION);
    push_u32(&mut out, bundle.input_len as u32);
    push_u32(&mut out, clf.in_channels() as u32);
    push_u32(&mut out, clf.num_classes() as u32);
    push_f64(&mut out, clf.dropout());
    push_u32(&mut out, BLOCK_CHANNELS.len() as u32);
    for &c in &BLOCK_CHANNELS {
        push_u32(&mut out, c as u32);
    }
    for label in &bundle.labels {
        push_u32(&mut out, label.name.len() as u32);
        out.extend_from_slice(label.name.as_bytes());
    }
    for &(mean, scale) in bundle.stats.channels() {
        push_f64(&mut out, mean);
        push_f64(&mut out, scale);
    }
    for block in clf.blocks() {
        push_f64_slice(&mut out, block.kernel.values());
        push_f64_slice(&mut out, block.bias.values());
        push_f64_slice(&mut out, block.gamma.values());
        push_f64_slice(&mut out, block.beta.values());
        push_f64_slice(&mut out, &block.running_mean);
        push_f64_slice(&mut out, &block.running_var);
    }
    push_f64_slice(&mut out, clf.head_weight().values());
    push_f64_slice(&mut out, clf.head_bias().values());
    Ok(out)
}

pub fn decode_model(bytes: &[u8]) -> Result<ModelBundle, PersistError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(PersistError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(PersistError::Version {
            expected: FORMAT_VERSION,
            found: version,
        });
    }
    let input_len = r.u32()? as usize;
    let in_channels = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let dropout = r.f64()?;
    if input_len < MIN_INPUT_LEN {
        return Err(PersistError::Manifest(format!(
            "input length {input_len} below the classifier minimum {MIN_INPUT_LEN}"
        )));
    }
    if in_channels == 0 {
        return Err(PersistError::Manifest("zero input channels".into()));
    }
    if num_classes < 2 {
        return Err(PersistError::Manifest(format!(
            "{num_classes} classes (need at least 2)"
        )));
    }
    if !dropout.is_finite() || !(0.0..1.0).contains(&dropout) {
        return Err(PersistError::Manifest(format!("dropout rate {dropout}")));
    }
    let num_blocks = r.u32()? as usize;
    if num_blocks != BLOCK_CHANNELS.len() {
        return Err(PersistError::Manifest(format!(
            "{num_blocks} conv blocks (this architecture has {})",
            BLOCK_CHANNELS.len()
        )));
    }
    for &expected in &BLOCK_CHANNELS {
        let found = r.u32()? as usize;
        if found != expected {
            return Err(PersistError::Manifest(format!(
                "block width {found}, architecture fixes {expected}"
            )));
        }
    }
    let mut labels = Vec::with_capacity(num_classes);
    for index in 0..num_classes {
        let len = r.u32()? as usize;
        let raw = r.take(len)?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| PersistError::Manifest("label name is not utf-8".into()))?
            .to_string();
        labels.push(ClassLabel { index, name });
    }
    let mut stat_channels = Vec::with_capacity(in_channels);
    for _ in 0..in_channels {
        stat_channels.push((r.f64()?, r.f64()?));
    }

    let mut blocks = Vec::with_capacity(num_blocks);
    let mut c_in = in_channels;
    for &c_out in &BLOCK_CHANNELS {
        blocks.push(Conv1dBlock {
            kernel: Tensor::new(vec![c_out, c_in, 3], r.f64_vec(c_out * c_in * 3)?),
            bias: Tensor::new(vec![c_out], r.f64_vec(c_out)?),
            gamma: Tensor::new(vec![c_out], r.f64_vec(c_out)?),
            beta: Tensor::new(vec![c_out], r.f64_vec(c_out)?),
            running_mean: r.f64_vec(c_out)?,
            running_var: r.f64_vec(c_out)?,
        });
        c_in = c_out;
    }
    let head_weight = Tensor::new(
        vec![num_classes, HEAD_FEATURES],
        r.f64_vec(num_classes * HEAD_FEATURES)?,
    );
    let head_bias = Tensor::new(vec![num_classes], r.f64_vec(num_classes)?);
    if r.pos != bytes.len() {
        return Err(PersistError::Manifest(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.pos
        )));
    }
    for block in &blocks {
        for values in [
            block.kernel.values(),
            block.bias.values(),
            block.gamma.values(),
            block.beta.values(),
            &block.running_mean,
            &block.running_var,
        ] {
            check_finite(values)?;
        }
    }
    check_finite(head_weight.values())?;
    check_finite(head_bias.values())?;

    Ok(ModelBundle {
        classifier: Classifier::from_parts(
            blocks,
            head_weight,
            head_bias,
            dropout,
            in_channels,
            num_classes,
        ),
        input_len,
        labels,
        stats: NormStats::new(stat_channels),
    })
}

fn check_finite(values: &[f64]) -> Result<(), PersistError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(PersistError::Manifest("non-finite parameter".into()));
    }
    Ok(())
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64_slice(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        push_f64(out, v);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        let end = self.pos.checked_add(n).ok_or(PersistError::Truncated)?;
        if end > self.bytes.len() {
            return Err(PersistError::Truncated);
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, PersistError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, PersistError> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}
