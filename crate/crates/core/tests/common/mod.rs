//! Oracles and harnesses shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;

use ample::feature_store::{load_bundle, FeatureBundle};
use ample::networks::Model;
use ample::numerics::Tensor;
use ample::trainer::{forward_backward, objective_value, Batch, TermWeights};

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny-synth")
}

pub fn tiny() -> FeatureBundle {
    load_bundle(&fixture_dir(), true).expect("shipped fixture loads")
}

/// Literal transcription of the conditional mutual information estimate:
/// an outer sum over samples, an inner sum over same-class samples for
/// the centering mean, and a sum over feature coordinates for the L1 norm.
pub fn cmi_literal(zr: &Tensor, zir: &Tensor, labels: &[usize]) -> f64 {
    let n = labels.len();
    let d = zr.row_len();
    let mut total = 0.0;
    for k in 0..d {
        let mut acc = 0.0;
        for i in 0..n {
            let mut count = 0usize;
            let mut sum = 0.0;
            for j in 0..n {
                if labels[j] == labels[i] {
                    count += 1;
                    sum += zir.row(j)[k];
                }
            }
            acc += zr.row(i)[k] * (zir.row(i)[k] - sum / count as f64);
        }
        total += (acc / n as f64).abs();
    }
    total
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone, Default)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates whose ±eps probe crossed a kink.
    pub skipped: usize,
    pub worst_relative: f64,
    pub worst_index: usize,
    pub worst_pair: (f64, f64),
}

/// Fourth-order central differences of the weighted objective,
/// `(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h`, against the analytic
/// gradient for every model parameter. A coordinate is skipped when any
/// probe changes a ReLU pre-activation sign or a CMI moment sign.
pub fn check_gradients(model: &Model, batch: &Batch<'_>, weights: TermWeights, eps: f64, floor: f64) -> GradCheck {
    let pass = forward_backward(model, batch, weights).expect("forward pass");
    let analytic = pass.grads.flat_params();
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut out = GradCheck::default();
    for p in 0..base.len() {
        let mut values = [0.0; 4];
        let mut crossed = false;
        for (slot, step) in [2.0, 1.0, -1.0, -2.0].into_iter().enumerate() {
            let mut x = base.clone();
            x[p] += step * eps;
            probe.set_flat_params(&x).unwrap();
            let (f, kinks) = objective_value(&probe, batch, weights).expect("objective");
            crossed |= kinks != pass.kinks;
            values[slot] = f;
        }
        if crossed {
            out.skipped += 1;
            continue;
        }
        let numeric = (-values[0] + 8.0 * values[1] - 8.0 * values[2] + values[3]) / (12.0 * eps);
        let rel = relative_error(analytic[p], numeric, floor);
        out.checked += 1;
        if rel > out.worst_relative {
            out.worst_relative = rel;
            out.worst_index = p;
            out.worst_pair = (analytic[p], numeric);
        }
    }
    out
}
