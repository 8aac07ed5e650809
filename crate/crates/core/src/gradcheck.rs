//! Central-difference verification of every differentiable operation —
//! shared test support for the unit, integration, and acceptance suites.
//! Each check rebuilds the computation from scratch at perturbed inputs,
//! so nothing is reused from the tape under test.

use crate::cfe::{composite_loss, CfeConfig};
use crate::nn::Classifier;
use crate::seed::derive_seed;
use crate::series::TimeSeries;
use crate::tape::{NodeId, Tape, TapeError, Tensor};
use crate::warp::{soft_dtw, soft_dtw_grad};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Op-level gradients must match central differences this tightly.
pub const OP_TOLERANCE: f64 = 1e-4;
/// The composite counterfactual loss gets a looser bound (it stacks a CNN,
/// a hinge, and soft alignment, checked off their kinks).
pub const COMPOSITE_TOLERANCE: f64 = 1e-3;

const FD_STEP: f64 = 1e-5;
/// Denominator floor: below this magnitude, errors are measured absolutely.
const ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default)]
pub struct GradCheckReport {
    pub checks: usize,
    pub worst_relative_error: f64,
}

impl GradCheckReport {
    fn absorb(&mut self, err: f64) {
        self.checks += 1;
        if err > self.worst_relative_error {
            self.worst_relative_error = err;
        }
    }
}

/// `|a - b|` over `max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(ERROR_FLOOR)
}

fn rng_for(section: &str, instance: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(0x67AD_C4EC, &format!("{section}:{instance}")))
}

/// Uniform draw kept `margin` away from zero (to dodge relu/l1 kinks).
fn draw_off_zero<R: Rng>(rng: &mut R, margin: f64) -> f64 {
    let magnitude = rng.gen_range(margin..1.0);
    if rng.gen_bool(0.5) {
        magnitude
    } else {
        -magnitude
    }
}

/// One gradient-vs-finite-difference sweep for a scalar-valued graph.
///
/// `build` must deterministically reconstruct the same computation for any
/// input values: it receives a tensor and returns the leaf to differentiate
/// and the scalar output node.
fn check_graph(
    what: &str,
    values: Vec<f64>,
    shape: Vec<usize>,
    coords: usize,
    tolerance: f64,
    report: &mut GradCheckReport,
    build: impl Fn(&mut Tape, Tensor) -> Result<(NodeId, NodeId), TapeError>,
) -> Result<(), String> {
    let numel = values.len();
    let eval = |vals: &[f64]| -> Result<f64, String> {
        let mut tape = Tape::new();
        let (_, out) = build(&mut tape, Tensor::new(shape.clone(), vals.to_vec()))
            .map_err(|e| format!("{what}: {e}"))?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let (leaf, out) = build(&mut tape, Tensor::new(shape.clone(), values.clone()))
        .map_err(|e| format!("{what}: {e}"))?;
    let mut grads = tape.backward(out).map_err(|e| format!("{what}: {e}"))?;
    let grad = grads.take(leaf).unwrap_or_else(|| vec![0.0; numel]);

    let stride = (numel / coords).max(1);
    for idx in (0..numel).step_by(stride) {
        let mut plus = values.clone();
        plus[idx] += FD_STEP;
        let mut minus = values.clone();
        minus[idx] -= FD_STEP;
        let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_STEP);
        let err = relative_error(grad[idx], fd);
        if err > tolerance {
            return Err(format!(
                "{what}: coordinate {idx} has gradient {} vs finite difference {fd} (relative error {err:.3e})",
                grad[idx]
            ));
        }
        report.absorb(err);
    }
    Ok(())
}

/// Elementwise weights plus a sum — turns any tensor node into a scalar
/// with a non-degenerate gradient path.
fn weighted_sum(tape: &mut Tape, node: NodeId, weights: &[f64]) -> NodeId {
    let weighted = tape.dropout_with_mask(node, weights.to_vec());
    tape.sum(weighted)
}

fn random_values<R: Rng>(rng: &mut R, n: usize, margin: f64) -> Vec<f64> {
    (0..n).map(|_| draw_off_zero(rng, margin)).collect()
}

/// Run central-difference checks over every tape operation plus the
/// soft-DTW gradient, `instances` random instances each.
pub fn verify_tape_ops(instances: usize) -> Result<GradCheckReport, String> {
    let mut report = GradCheckReport::default();
    let coords = 5;

    for i in 0..instances {
        // conv1d: input, kernel, and bias leaves
        {
            let mut rng = rng_for("conv1d", i);
            let (b, c_in, c_out, t) = (
                rng.gen_range(1..=2usize),
                rng.gen_range(1..=3usize),
                rng.gen_range(1..=3usize),
                rng.gen_range(8..=14usize),
            );
            let x = random_values(&mut rng, b * c_in * t, 1e-3);
            let w = random_values(&mut rng, c_out * c_in * 3, 1e-3);
            let bias = random_values(&mut rng, c_out, 1e-3);
            let weights = random_values(&mut rng, b * c_out * t, 1e-3);

            let (wc, bc, sc) = (w.clone(), bias.clone(), weights.clone());
            check_graph(
                "conv1d input",
                x.clone(),
                vec![b, c_in, t],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(tensor);
                    let kernel = tape.leaf(Tensor::new(vec![c_out, c_in, 3], wc.clone()));
                    let bias = tape.leaf(Tensor::new(vec![c_out], bc.clone()));
                    let out = tape.conv1d(input, kernel, bias)?;
                    Ok((input, weighted_sum(tape, out, &sc)))
                },
            )?;
            let (xc, bc, sc) = (x.clone(), bias.clone(), weights.clone());
            check_graph(
                "conv1d kernel",
                w.clone(),
                vec![c_out, c_in, 3],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(Tensor::new(vec![b, c_in, t], xc.clone()));
                    let kernel = tape.leaf(tensor);
                    let bias = tape.leaf(Tensor::new(vec![c_out], bc.clone()));
                    let out = tape.conv1d(input, kernel, bias)?;
                    Ok((kernel, weighted_sum(tape, out, &sc)))
                },
            )?;
            let (xc, wc, sc) = (x, w, weights);
            check_graph(
                "conv1d bias",
                bias,
                vec![c_out],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(Tensor::new(vec![b, c_in, t], xc.clone()));
                    let kernel = tape.leaf(Tensor::new(vec![c_out, c_in, 3], wc.clone()));
                    let bias = tape.leaf(tensor);
                    let out = tape.conv1d(input, kernel, bias)?;
                    Ok((bias, weighted_sum(tape, out, &sc)))
                },
            )?;
        }

        // batchnorm (training statistics): input and gamma leaves
        {
            let mut rng = rng_for("batchnorm", i);
            let (b, c, t) = (
                rng.gen_range(2..=3usize),
                rng.gen_range(1..=3usize),
                rng.gen_range(6..=10usize),
            );
            let x = random_values(&mut rng, b * c * t, 1e-3);
            let gamma = random_values(&mut rng, c, 0.2);
            let beta = random_values(&mut rng, c, 1e-3);
            let weights = random_values(&mut rng, b * c * t, 1e-3);

            let (gc, bc, sc) = (gamma.clone(), beta.clone(), weights.clone());
            check_graph(
                "batchnorm input",
                x.clone(),
                vec![b, c, t],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(tensor);
                    let gamma = tape.leaf(Tensor::new(vec![c], gc.clone()));
                    let beta = tape.leaf(Tensor::new(vec![c], bc.clone()));
                    let (out, _) = tape.batchnorm_train(input, gamma, beta, 1e-5)?;
                    Ok((input, weighted_sum(tape, out, &sc)))
                },
            )?;
            let (xc, bc, sc) = (x, beta, weights);
            check_graph(
                "batchnorm gamma",
                gamma,
                vec![c],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(Tensor::new(vec![b, c, t], xc.clone()));
                    let gamma = tape.leaf(tensor);
                    let beta = tape.leaf(Tensor::new(vec![c], bc.clone()));
                    let (out, _) = tape.batchnorm_train(input, gamma, beta, 1e-5)?;
                    Ok((gamma, weighted_sum(tape, out, &sc)))
                },
            )?;
        }

        // frozen-statistics affine
        {
            let mut rng = rng_for("channel_affine", i);
            let (b, c, t) = (2usize, rng.gen_range(1..=3usize), 8usize);
            let x = random_values(&mut rng, b * c * t, 1e-3);
            let scale = random_values(&mut rng, c, 0.2);
            let shift = random_values(&mut rng, c, 1e-3);
            let weights = random_values(&mut rng, b * c * t, 1e-3);
            check_graph(
                "channel_affine input",
                x,
                vec![b, c, t],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(tensor);
                    let out = tape.channel_affine(input, scale.clone(), shift.clone())?;
                    Ok((input, weighted_sum(tape, out, &weights)))
                },
            )?;
        }

        // relu, maxpool, global average pool (inputs nudged off their kinks)
        {
            let mut rng = rng_for("relu", i);
            let n = rng.gen_range(8..=24usize) * 2;
            let x = random_values(&mut rng, n, 1e-2);
            let weights = random_values(&mut rng, n, 1e-3);
            check_graph(
                "relu input",
                x,
                vec![1, 1, n],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(tensor);
                    let out = tape.relu(input);
                    Ok((input, weighted_sum(tape, out, &weights)))
                },
            )?;

            let mut rng = rng_for("maxpool2", i);
            let t = rng.gen_range(4..=9usize) * 2;
            // keep pooled pairs clearly separated so the argmax is stable
            let mut x = random_values(&mut rng, t, 1e-3);
            for pair in x.chunks_mut(2) {
                if (pair[0] - pair[1]).abs() < 1e-2 {
                    pair[0] += 0.05;
                }
            }
            let weights = random_values(&mut rng, t / 2, 1e-3);
            check_graph(
                "maxpool2 input",
                x,
                vec![1, 1, t],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(tensor);
                    let out = tape.maxpool2(input)?;
                    Ok((input, weighted_sum(tape, out, &weights)))
                },
            )?;

            let mut rng = rng_for("gap", i);
            let (b, c, t) = (2usize, rng.gen_range(1..=3usize), 10usize);
            let x = random_values(&mut rng, b * c * t, 1e-3);
            let weights = random_values(&mut rng, b * c, 1e-3);
            check_graph(
                "global_avg_pool input",
                x,
                vec![b, c, t],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(tensor);
                    let out = tape.global_avg_pool(input)?;
                    Ok((input, weighted_sum(tape, out, &weights)))
                },
            )?;
        }

        // linear: input, weight, bias
        {
            let mut rng = rng_for("linear", i);
            let (b, f, c) = (
                rng.gen_range(1..=3usize),
                rng.gen_range(2..=6usize),
                rng.gen_range(2..=4usize),
            );
            let x = random_values(&mut rng, b * f, 1e-3);
            let w = random_values(&mut rng, c * f, 1e-3);
            let bias = random_values(&mut rng, c, 1e-3);
            let weights = random_values(&mut rng, b * c, 1e-3);

            let (wc, bc, sc) = (w.clone(), bias.clone(), weights.clone());
            check_graph(
                "linear input",
                x.clone(),
                vec![b, f],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(tensor);
                    let weight = tape.leaf(Tensor::new(vec![c, f], wc.clone()));
                    let bias = tape.leaf(Tensor::new(vec![c], bc.clone()));
                    let out = tape.linear(input, weight, bias)?;
                    Ok((input, weighted_sum(tape, out, &sc)))
                },
            )?;
            let (xc, bc, sc) = (x.clone(), bias.clone(), weights.clone());
            check_graph(
                "linear weight",
                w.clone(),
                vec![c, f],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(Tensor::new(vec![b, f], xc.clone()));
                    let weight = tape.leaf(tensor);
                    let bias = tape.leaf(Tensor::new(vec![c], bc.clone()));
                    let out = tape.linear(input, weight, bias)?;
                    Ok((weight, weighted_sum(tape, out, &sc)))
                },
            )?;
            let (xc, wc, sc) = (x, w, weights);
            check_graph(
                "linear bias",
                bias,
                vec![c],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(Tensor::new(vec![b, f], xc.clone()));
                    let weight = tape.leaf(Tensor::new(vec![c, f], wc.clone()));
                    let bias = tape.leaf(tensor);
                    let out = tape.linear(input, weight, bias)?;
                    Ok((bias, weighted_sum(tape, out, &sc)))
                },
            )?;
        }

        // dropout with a fixed mask
        {
            let mut rng = rng_for("dropout", i);
            let n = rng.gen_range(6..=16usize);
            let x = random_values(&mut rng, n, 1e-3);
            let mask: Vec<f64> = (0..n)
                .map(|_| if rng.gen_bool(0.3) { 0.0 } else { 1.0 / 0.7 })
                .collect();
            check_graph(
                "dropout input",
                x,
                vec![1, n],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(tensor);
                    let out = tape.dropout_with_mask(input, mask.clone());
                    Ok((input, tape.sum(out)))
                },
            )?;
        }

        // softmax through a single selected element
        {
            let mut rng = rng_for("softmax", i);
            let (b, c) = (rng.gen_range(1..=2usize), rng.gen_range(2..=5usize));
            let x = random_values(&mut rng, b * c, 1e-3);
            let pick = rng.gen_range(0..b * c);
            check_graph(
                "softmax input",
                x,
                vec![b, c],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(tensor);
                    let out = tape.softmax(input)?;
                    let picked = tape.select(out, pick)?;
                    Ok((input, picked))
                },
            )?;
        }

        // cross-entropy over logits
        {
            let mut rng = rng_for("cross_entropy", i);
            let (b, c) = (rng.gen_range(1..=4usize), rng.gen_range(2..=5usize));
            let x = random_values(&mut rng, b * c, 1e-3);
            let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..c)).collect();
            check_graph(
                "cross_entropy logits",
                x,
                vec![b, c],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(tensor);
                    let out = tape.cross_entropy_mean(input, &labels)?;
                    Ok((input, out))
                },
            )?;
        }

        // select and sum
        {
            let mut rng = rng_for("select", i);
            let n = rng.gen_range(4..=12usize);
            let x = random_values(&mut rng, n, 1e-3);
            let pick = rng.gen_range(0..n);
            check_graph(
                "select input",
                x.clone(),
                vec![1, n],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(tensor);
                    let out = tape.select(input, pick)?;
                    Ok((input, out))
                },
            )?;
            check_graph(
                "sum input",
                x,
                vec![1, n],
                coords,
                OP_TOLERANCE,
                &mut report,
                move |tape, tensor| {
                    let input = tape.leaf(tensor);
                    let out = tape.sum(input);
                    Ok((input, out))
                },
            )?;
        }

        // soft alignment gradient (not a tape op; checked directly)
        {
            let mut rng = rng_for("soft_dtw", i);
            let d = rng.gen_range(1..=2usize);
            let m = rng.gen_range(5..=9usize);
            let mp = rng.gen_range(5..=9usize);
            let gamma = [1.0, 0.1][i % 2];
            let x = random_values(&mut rng, m * d, 1e-3);
            let y_series = TimeSeries::new(random_values(&mut rng, mp * d, 1e-3), mp, d).unwrap();

            let series_of = |vals: &[f64]| TimeSeries::new(vals.to_vec(), m, d).unwrap();
            let (_, workspace) =
                soft_dtw(&series_of(&x), &y_series, gamma).map_err(|e| format!("soft_dtw: {e}"))?;
            let grad = soft_dtw_grad(&workspace, &series_of(&x), &y_series)
                .map_err(|e| format!("soft_dtw_grad: {e}"))?;
            let stride = (x.len() / coords).max(1);
            for idx in (0..x.len()).step_by(stride) {
                let eval = |delta: f64| {
                    let mut v = x.clone();
                    v[idx] += delta;
                    soft_dtw(&series_of(&v), &y_series, gamma).unwrap().0
                };
                let fd = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
                let err = relative_error(grad[idx], fd);
                if err > OP_TOLERANCE {
                    return Err(format!(
                        "soft_dtw: coordinate {idx} gradient {} vs finite difference {fd} (relative error {err:.3e})",
                        grad[idx]
                    ));
                }
                report.absorb(err);
            }
        }
    }
    Ok(report)
}

/// Check the full counterfactual objective's gradient against central
/// differences at off-kink points, `instances` random instances.
pub fn verify_composite(instances: usize) -> Result<GradCheckReport, String> {
    let mut report = GradCheckReport::default();
    for i in 0..instances {
        let mut rng = rng_for("composite", i);
        let d = rng.gen_range(1..=2usize);
        let t = 16usize;
        let classes = rng.gen_range(2..=3usize);
        let classifier =
            Classifier::new(d, classes, 0.0, &mut rng).map_err(|e| format!("composite: {e}"))?;

        let original = TimeSeries::new(random_values(&mut rng, t * d, 1e-3), t, d).unwrap();
        // keep every perturbation coordinate far from the l1 kink
        let candidate_values: Vec<f64> = original
            .values()
            .iter()
            .map(|v| v + draw_off_zero(&mut rng, 0.25))
            .collect();
        let candidate = TimeSeries::new(candidate_values.clone(), t, d).unwrap();
        let neighbors: Vec<TimeSeries> = (0..2)
            .map(|_| TimeSeries::new(random_values(&mut rng, t * d, 1e-3), t, d).unwrap())
            .collect();
        let neighbor_refs: Vec<&TimeSeries> = neighbors.iter().collect();
        let target = rng.gen_range(0..classes);

        // place tau a comfortable margin from p so the hinge never flips
        // under the probe step; alternate between active and inactive
        let (probs, _) = classifier
            .probability_gradient(&candidate, target)
            .map_err(|e| format!("composite: {e}"))?;
        let p = probs[target];
        let tau = if p < 0.65 {
            (p + 0.3).min(1.0)
        } else {
            p - 0.3
        };
        let config = CfeConfig {
            tau,
            gamma: 1.0,
            ..CfeConfig::default()
        };

        let (_, grad, _) = composite_loss(
            &candidate,
            &original,
            &neighbor_refs,
            target,
            &classifier,
            &config,
        )
        .map_err(|e| format!("composite: {e}"))?;

        let eval = |vals: &[f64]| -> f64 {
            let c = TimeSeries::new(vals.to_vec(), t, d).unwrap();
            composite_loss(&c, &original, &neighbor_refs, target, &classifier, &config)
                .unwrap()
                .0
                .total
        };
        let stride = (candidate_values.len() / 4).max(1);
        for idx in (0..candidate_values.len()).step_by(stride) {
            let mut plus = candidate_values.clone();
            plus[idx] += FD_STEP;
            let mut minus = candidate_values.clone();
            minus[idx] -= FD_STEP;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let err = relative_error(grad[idx], fd);
            if err > COMPOSITE_TOLERANCE {
                return Err(format!(
                    "composite loss instance {i}: coordinate {idx} gradient {} vs finite difference {fd} (relative error {err:.3e})",
                    grad[idx]
                ));
            }
            report.absorb(err);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_sweep_of_all_ops() {
        let report = verify_tape_ops(3).unwrap();
        assert!(report.checks > 0);
        assert!(report.worst_relative_error < OP_TOLERANCE);
    }

    #[test]
    fn quick_composite_sweep() {
        let report = verify_composite(3).unwrap();
        assert!(report.checks > 0);
        assert!(report.worst_relative_error < COMPOSITE_TOLERANCE);
    }
}
