//! Training loop: mini-batch Adam on mean cross-entropy, a seeded 20%
//! validation holdout, early stopping on validation loss, and best-epoch
//! parameter restore.

use crate::nn::{Adam, Classifier, Mode, NnError};
use crate::series::{Dataset, TimeSeries};
use crate::tape::{Tape, TapeError};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("bad training config: {0}")]
    BadConfig(&'static str),
    #[error("train split must contain at least two classes")]
    SingleClass,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Epochs without a strict validation-loss improvement before stopping.
    pub patience: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 80,
            patience: 10,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            dropout: 0.2,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<(), TrainError> {
        if self.max_epochs < 1 {
            return Err(TrainError::BadConfig("max_epochs must be at least 1"));
        }
        if self.patience < 1 {
            return Err(TrainError::BadConfig("patience must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(TrainError::BadConfig("batch_size must be at least 1"));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(TrainError::BadConfig(
                "learning_rate must be finite and >= 0",
            ));
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(TrainError::BadConfig(
                "weight_decay must be finite and >= 0",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::BadConfig("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// 1-based epoch whose parameters the returned classifier carries.
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    /// Absent when the dataset has no test split.
    pub test_accuracy: Option<f64>,
}

struct Snapshot {
    params: Vec<Vec<f64>>,
    running: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Snapshot {
    fn capture(clf: &Classifier) -> Self {
        Self {
            params: clf
                .parameters()
                .iter()
                .map(|p| p.values().to_vec())
                .collect(),
            running: clf
                .blocks()
                .iter()
                .map(|b| (b.running_mean.clone(), b.running_var.clone()))
                .collect(),
        }
    }

    fn restore(&self, clf: &mut Classifier) {
        for (param, saved) in clf.parameters_mut().into_iter().zip(&self.params) {
            param.values_mut().copy_from_slice(saved);
        }
        for (block, (mean, var)) in clf.blocks_mut().iter_mut().zip(&self.running) {
            block.running_mean.copy_from_slice(mean);
            block.running_var.copy_from_slice(var);
        }
    }
}

/// Fit a classifier on the dataset's train split. 20% of it (seeded,
/// at least one sample) is held out; training stops once validation loss
/// has gone `patience` epochs without a strict improvement, and the
/// best-validation parameters and running statistics are restored.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<(Classifier, TrainReport), TrainError> {
    config.validate()?;
    let samples = dataset.train();
    let mut distinct: Vec<usize> = samples.iter().map(|(_, y)| *y).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(TrainError::SingleClass);
    }

    let (_, channels) = dataset.shape();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut clf = Classifier::new(channels, dataset.num_classes(), config.dropout, &mut rng)?;

    // seeded 20% holdout (at least one sample each side)
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut rng);
    let val_count = (samples.len() / 5).max(1);
    let (val_idx, fit_idx) = order.split_at(val_count);
    let val_idx = val_idx.to_vec();
    let mut fit_idx = fit_idx.to_vec();

    let group_sizes: Vec<usize> = clf.parameters().iter().map(|p| p.numel()).collect();
    let mut adam = Adam::new(config.learning_rate, config.weight_decay, &group_sizes);

    let mut best = Snapshot::capture(&clf);
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale_epochs = 0;
    let mut epochs_run = 0;

    for epoch in 1..=config.max_epochs {
        epochs_run = epoch;
        fit_idx.shuffle(&mut rng);
        for chunk in fit_idx.chunks(config.batch_size) {
            let (items, labels) = gather(samples, chunk);
            let batch = clf.batch_from_series(&items)?;
            let mut tape = Tape::new();
            let graph = clf.forward_train_tape(&mut tape, batch, Some(&mut rng))?;
            let loss = tape.cross_entropy_mean(graph.logits, &labels)?;
            let mut store = tape.backward(loss)?;
            let grads: Vec<Vec<f64>> = graph
                .params
                .iter()
                .zip(&group_sizes)
                .map(|(&node, &n)| store.take(node).unwrap_or_else(|| vec![0.0; n]))
                .collect();
            for (block, stats) in clf.blocks_mut().iter_mut().zip(&graph.bn_stats) {
                block.update_running(stats);
            }
            let mut params = clf.parameters_mut();
            let mut views: Vec<&mut [f64]> = params.iter_mut().map(|p| p.values_mut()).collect();
            adam.step(&mut views, &grads);
        }

        let val_loss = validation_loss(&clf, samples, &val_idx, config.batch_size)?;
        log::debug!("epoch {epoch}: validation loss {val_loss:.6}");
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best = Snapshot::capture(&clf);
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                break;
            }
        }
    }

    best.restore(&mut clf);
    clf.set_mode(Mode::Inference);

    let report = TrainReport {
        epochs_run,
        best_epoch,
        best_val_loss: best_val,
        train_accuracy: split_accuracy(&clf, samples, &fit_idx)?,
        val_accuracy: split_accuracy(&clf, samples, &val_idx)?,
        test_accuracy: if dataset.test().is_empty() {
            None
        } else {
            let all: Vec<usize> = (0..dataset.test().len()).collect();
            Some(split_accuracy(&clf, dataset.test(), &all)?)
        },
    };
    Ok((clf, report))
}

fn gather<'a>(
    samples: &'a [(TimeSeries, usize)],
    idx: &[usize],
) -> (Vec<&'a TimeSeries>, Vec<usize>) {
    let items = idx.iter().map(|&i| &samples[i].0).collect();
    let labels = idx.iter().map(|&i| samples[i].1).collect();
    (items, labels)
}

/// Mean cross-entropy over the holdout, on training-mode graphs (batch
/// statistics, no dropout) in a fixed batch order. Mirrors the optimized
/// objective and is fully deterministic for a frozen network; running
/// statistics are left untouched.
fn validation_loss(
    clf: &Classifier,
    samples: &[(TimeSeries, usize)],
    idx: &[usize],
    batch_size: usize,
) -> Result<f64, NnError> {
    let mut total = 0.0;
    for chunk in idx.chunks(batch_size) {
        let (items, labels) = gather(samples, chunk);
        let batch = clf.batch_from_series(&items)?;
        let mut tape = Tape::new();
        let graph = clf.forward_train_tape(&mut tape, batch, None)?;
        let loss = tape.cross_entropy_mean(graph.logits, &labels)?;
        total += tape.value(loss).item() * chunk.len() as f64;
    }
    Ok(total / idx.len() as f64)
}

/// Fraction of `idx` the classifier labels correctly (inference path).
fn split_accuracy(
    clf: &Classifier,
    samples: &[(TimeSeries, usize)],
    idx: &[usize],
) -> Result<f64, NnError> {
    if idx.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for chunk in idx.chunks(64) {
        let (items, labels) = gather(samples, chunk);
        let predicted = clf.predict(&items)?;
        hits += predicted
            .iter()
            .zip(&labels)
            .filter(|(p, y)| p == y)
            .count();
    }
    Ok(hits as f64 / idx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::cbf::{generate_cbf, CbfKind, SyntheticSpec};
    use crate::series::z_normalize;
    use crate::tape::Tensor;
    use rand::Rng;

    fn tiny_dataset(per_class: usize, t_len: usize, seed: u64) -> Dataset {
        let train: Vec<SyntheticSpec> = CbfKind::ALL
            .iter()
            .map(|&kind| SyntheticSpec {
                kind,
                t_len,
                count: per_class,
            })
            .collect();
        let test: Vec<SyntheticSpec> = CbfKind::ALL
            .iter()
            .map(|&kind| SyntheticSpec {
                kind,
                t_len,
                count: 2,
            })
            .collect();
        let raw = generate_cbf(&train, &test, seed).unwrap();
        z_normalize(&raw).unwrap()
    }

    #[test]
    fn zero_learning_rate_stops_at_patience_with_parameters_untouched() {
        let dataset = tiny_dataset(5, 16, 11);
        let config = TrainConfig {
            max_epochs: 50,
            patience: 1,
            learning_rate: 0.0,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        // re-derive the initialization the trainer will see
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let fresh = Classifier::new(1, 3, config.dropout, &mut rng).unwrap();
        let init: Vec<Vec<f64>> = fresh
            .parameters()
            .iter()
            .map(|p| p.values().to_vec())
            .collect();

        let (clf, report) = train(&dataset, &config).unwrap();
        // epoch 1 improves on +inf, epoch 2 repeats the same loss exactly
        assert_eq!(report.epochs_run, 2);
        assert_eq!(report.best_epoch, 1);
        let after: Vec<Vec<f64>> = clf
            .parameters()
            .iter()
            .map(|p| p.values().to_vec())
            .collect();
        assert_eq!(init, after);
    }

    #[test]
    fn learns_a_linearly_separable_toy_problem() {
        // class 0: strong negative mean; class 1: strong positive mean
        let mut fit = Vec::new();
        let mut held_out = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..40 {
            let label = i % 2;
            let offset = if label == 0 { -2.0 } else { 2.0 };
            let values: Vec<f64> = (0..16)
                .map(|_| offset + 0.3 * rng.gen_range(-1.0..1.0))
                .collect();
            let series = TimeSeries::univariate(values).unwrap();
            if i < 30 {
                fit.push((series, label));
            } else {
                held_out.push((series, label));
            }
        }
        let labels = vec![
            crate::series::ClassLabel {
                index: 0,
                name: "low".into(),
            },
            crate::series::ClassLabel {
                index: 1,
                name: "high".into(),
            },
        ];
        let dataset = Dataset::new(fit, held_out, labels).unwrap();
        let config = TrainConfig {
            max_epochs: 30,
            seed: 5,
            ..TrainConfig::default()
        };
        let (_, report) = train(&dataset, &config).unwrap();
        assert!(
            report.test_accuracy.unwrap() >= 0.9,
            "test accuracy {:?}",
            report.test_accuracy
        );
    }

    #[test]
    fn one_small_step_does_not_increase_batch_loss() {
        // a single tiny-lr Adam step on one fixed batch should not make that
        // batch's loss worse (allowing a rare violation across seeds)
        let dataset = tiny_dataset(4, 16, 21);
        let samples = dataset.train();
        let mut violations = 0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut clf = Classifier::new(1, 3, 0.0, &mut rng).unwrap();
            let idx: Vec<usize> = (0..samples.len()).collect();
            let (items, labels) = gather(samples, &idx);
            let batch = clf.batch_from_series(&items).unwrap();

            let loss_of = |clf: &Classifier, batch: Tensor| {
                let mut tape = Tape::new();
                let graph = clf.forward_train_tape(&mut tape, batch, None).unwrap();
                let loss = tape.cross_entropy_mean(graph.logits, &labels).unwrap();
                tape.value(loss).item()
            };
            let before = loss_of(&clf, batch.clone());

            let group_sizes: Vec<usize> = clf.parameters().iter().map(|p| p.numel()).collect();
            let mut adam = Adam::new(1e-4, 0.0, &group_sizes);
            let mut tape = Tape::new();
            let graph = clf
                .forward_train_tape(&mut tape, batch.clone(), None)
                .unwrap();
            let loss = tape.cross_entropy_mean(graph.logits, &labels).unwrap();
            let mut store = tape.backward(loss).unwrap();
            let grads: Vec<Vec<f64>> = graph
                .params
                .iter()
                .zip(&group_sizes)
                .map(|(&node, &n)| store.take(node).unwrap_or_else(|| vec![0.0; n]))
                .collect();
            let mut params = clf.parameters_mut();
            let mut views: Vec<&mut [f64]> = params.iter_mut().map(|p| p.values_mut()).collect();
            adam.step(&mut views, &grads);

            let after = loss_of(&clf, batch);
            if after > before {
                violations += 1;
            }
        }
        assert!(violations <= 1, "{violations} of 10 seeds increased loss");
    }

    #[test]
    fn rejects_degenerate_configs() {
        let dataset = tiny_dataset(3, 16, 31);
        for (config, what) in [
            (
                TrainConfig {
                    max_epochs: 0,
                    ..TrainConfig::default()
                },
                "max_epochs",
            ),
            (
                TrainConfig {
                    patience: 0,
                    ..TrainConfig::default()
                },
                "patience",
            ),
            (
                TrainConfig {
                    dropout: 1.0,
                    ..TrainConfig::default()
                },
                "dropout",
            ),
        ] {
            assert!(
                matches!(train(&dataset, &config), Err(TrainError::BadConfig(_))),
                "{what} accepted"
            );
        }
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let dataset = tiny_dataset(4, 16, 41);
        let config = TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let (a, _) = train(&dataset, &config).unwrap();
        let (b, _) = train(&dataset, &config).unwrap();
        for (pa, pb) in a.parameters().iter().zip(b.parameters()) {
            assert_eq!(pa.values(), pb.values());
        }
    }
}
