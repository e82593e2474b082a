//! μ construction and the weighted sum over ensemble slots.

use crate::error::{Error, Result};
use crate::networks::Model;
use crate::numerics::Tensor;

/// One batch through the ensemble head.
#[derive(Debug, Clone)]
pub struct EnsembleBatch {
    /// `N × 2M × C`, slot order backbone-major.
    pub slot_logits: Tensor,
    pub mu: Tensor,
    /// `N × 2M`.
    pub weights: Tensor,
    /// `N × C`.
    pub logit_en: Tensor,
}

/// Inference path: redundancy net, μ, generated weights, weighted sum.
pub fn forward(model: &Model, images: &[Tensor], slot_logits: Tensor) -> Result<EnsembleBatch> {
    if slot_logits.shape().len() != 3 || slot_logits.shape()[1] != model.num_slots() {
        return Err(Error::Shape(format!(
            "model has {} slots, logits are {:?}",
            model.num_slots(),
            slot_logits.shape()
        )));
    }
    let rd = model.rd.forward(images)?;
    let mu = build_mu(&rd.relevant)?;
    let weights = model.wg.forward(&mu)?;
    let logit_en = aggregate(&slot_logits, &weights)?;
    Ok(EnsembleBatch {
        slot_logits,
        mu,
        weights,
        logit_en,
    })
}

/// Row-wise concatenation of the per-backbone prompt-relevant features.
pub fn build_mu(relevant: &[Tensor]) -> Result<Tensor> {
    let first = relevant
        .first()
        .ok_or_else(|| Error::Shape("build_mu needs at least one backbone".into()))?;
    let n = first.rows();
    if let Some(bad) = relevant.iter().find(|t| t.rows() != n || t.shape().len() != 2) {
        return Err(Error::Shape(format!(
            "backbone blocks disagree on sample count: {n} vs {:?}",
            bad.shape()
        )));
    }
    let width: usize = relevant.iter().map(Tensor::row_len).sum();
    let mut data = Vec::with_capacity(n * width);
    for i in 0..n {
        for t in relevant {
            data.extend_from_slice(t.row(i));
        }
    }
    Tensor::new(vec![n, width], data)
}

/// Inverse of [`build_mu`]: cut each row back into per-backbone blocks.
pub fn split_mu(mu: &Tensor, dims: &[usize]) -> Result<Vec<Tensor>> {
    let total: usize = dims.iter().sum();
    if mu.shape().len() != 2 || mu.row_len() != total {
        return Err(Error::Shape(format!(
            "μ of shape {:?} cannot be split into {dims:?}",
            mu.shape()
        )));
    }
    let n = mu.rows();
    let mut out: Vec<Vec<f64>> = dims.iter().map(|&d| Vec::with_capacity(n * d)).collect();
    for i in 0..n {
        let row = mu.row(i);
        let mut at = 0;
        for (block, &d) in out.iter_mut().zip(dims) {
            block.extend_from_slice(&row[at..at + d]);
            at += d;
        }
    }
    out.into_iter()
        .zip(dims)
        .map(|(data, &d)| Tensor::new(vec![n, d], data))
        .collect()
}

fn check_pair(slot_logits: &Tensor, weights: &Tensor) -> Result<(usize, usize, usize)> {
    let s = slot_logits.shape();
    if s.len() != 3 || weights.shape() != [s[0], s[1]] {
        return Err(Error::Shape(format!(
            "slot logits {:?} and weights {:?} do not line up",
            s,
            weights.shape()
        )));
    }
    Ok((s[0], s[1], s[2]))
}

/// `logit_en[i][c] = Σ_s weights[i][s] · slot_logits[i][s][c]`.
pub fn aggregate(slot_logits: &Tensor, weights: &Tensor) -> Result<Tensor> {
    let (n, slots, c) = check_pair(slot_logits, weights)?;
    let mut out = vec![0.0; n * c];
    for i in 0..n {
        let l = slot_logits.row(i);
        let w = weights.row(i);
        let o = &mut out[i * c..(i + 1) * c];
        for s in 0..slots {
            for k in 0..c {
                o[k] += w[s] * l[s * c + k];
            }
        }
    }
    Tensor::new(vec![n, c], out)
}

/// `∂L/∂weights` from `∂L/∂logit_en`.
pub fn aggregate_backward(slot_logits: &Tensor, grad_en: &Tensor) -> Result<Tensor> {
    let s = slot_logits.shape();
    if s.len() != 3 || grad_en.shape() != [s[0], s[2]] {
        return Err(Error::Shape(format!(
            "slot logits {:?} and ensemble gradient {:?} do not line up",
            s,
            grad_en.shape()
        )));
    }
    let (n, slots, c) = (s[0], s[1], s[2]);
    let mut out = vec![0.0; n * slots];
    for i in 0..n {
        let l = slot_logits.row(i);
        let g = grad_en.row(i);
        for slot in 0..slots {
            out[i * slots + slot] = (0..c).map(|k| g[k] * l[slot * c + k]).sum();
        }
    }
    Tensor::new(vec![n, slots], out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

pub fn predict(logit_en: &Tensor) -> Vec<usize> {
    (0..logit_en.rows()).map(|i| argmax(logit_en.row(i))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn random(rng: &mut Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn mu_concatenates_in_backbone_order() {
        let a = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        assert_eq!(build_mu(&[a.clone(), b]).unwrap().data(), &[1.0, 2.0, 3.0]);
        assert_eq!(build_mu(std::slice::from_ref(&a)).unwrap(), a);
    }

    #[test]
    fn mu_matches_index_arithmetic() {
        let mut rng = Rng::new(1);
        let (n, d0, d1) = (3, 4, 2);
        let a = random(&mut rng, vec![n, d0]);
        let b = random(&mut rng, vec![n, d1]);
        let mu = build_mu(&[a.clone(), b.clone()]).unwrap();
        for i in 0..n {
            for j in 0..d0 + d1 {
                let expected = if j < d0 {
                    a.data()[i * d0 + j]
                } else {
                    b.data()[i * d1 + j - d0]
                };
                assert_eq!(mu.data()[i * (d0 + d1) + j], expected);
            }
        }
        let back = split_mu(&mu, &[d0, d1]).unwrap();
        assert_eq!(back, vec![a, b]);
    }

    #[test]
    fn mu_rejects_sample_mismatch() {
        let a = Tensor::zeros(vec![2, 2]);
        let b = Tensor::zeros(vec![3, 2]);
        assert!(matches!(build_mu(&[a, b]), Err(Error::Shape(_))));
    }

    #[test]
    fn aggregate_linearity_and_selection() {
        let n = 2;
        let (slots, c) = (4, 3);
        let slab = [0.5, -1.0, 2.0];
        let logits = Tensor::new(
            vec![n, slots, c],
            (0..n * slots).flat_map(|_| slab).collect(),
        )
        .unwrap();
        let ones = Tensor::filled(vec![n, slots], 1.0);
        let en = aggregate(&logits, &ones).unwrap();
        for i in 0..n {
            for k in 0..c {
                assert_eq!(en.row(i)[k], slots as f64 * slab[k]);
            }
        }

        let mut rng = Rng::new(2);
        let logits = random(&mut rng, vec![n, slots, c]);
        let mut onehot = Tensor::zeros(vec![n, slots]);
        onehot.row_mut(0)[2] = 1.0;
        onehot.row_mut(1)[2] = 1.0;
        let en = aggregate(&logits, &onehot).unwrap();
        for i in 0..n {
            assert_eq!(en.row(i), &logits.row(i)[2 * c..3 * c]);
        }
    }

    #[test]
    fn aggregate_matches_triple_loop() {
        let mut rng = Rng::new(3);
        let (n, m, c) = (2, 2, 3);
        let logits = random(&mut rng, vec![n, 2 * m, c]);
        let w = random(&mut rng, vec![n, 2 * m]);
        let en = aggregate(&logits, &w).unwrap();
        for i in 0..n {
            for k in 0..c {
                let mut acc = 0.0;
                for s in 0..2 * m {
                    acc += w.data()[i * 2 * m + s] * logits.data()[(i * 2 * m + s) * c + k];
                }
                assert!((en.data()[i * c + k] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn predict_breaks_ties_low() {
        let t = Tensor::new(vec![2, 3], vec![0.1, 0.9, 0.3, 1.0, 1.0, 1.0]).unwrap();
        assert_eq!(predict(&t), vec![1, 0]);
    }

    proptest! {
        #[test]
        fn aggregate_is_linear_in_weights(seed in 0u64..1000) {
            let mut rng = Rng::new(seed);
            let logits = random(&mut rng, vec![3, 4, 5]);
            let w1 = random(&mut rng, vec![3, 4]);
            let w2 = random(&mut rng, vec![3, 4]);
            let mut sum = w1.clone();
            sum.add_scaled(&w2, 1.0);
            let lhs = aggregate(&logits, &sum).unwrap();
            let mut rhs = aggregate(&logits, &w1).unwrap();
            rhs.add_scaled(&aggregate(&logits, &w2).unwrap(), 1.0);
            for (a, b) in lhs.data().iter().zip(rhs.data()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
        }

        #[test]
        fn positive_weight_scale_keeps_predictions(seed in 0u64..1000, lambda in 1e-3f64..1e3) {
            let mut rng = Rng::new(seed);
            let logits = random(&mut rng, vec![4, 6, 5]);
            let w = Tensor::new(vec![4, 6], (0..24).map(|_| rng.uniform()).collect()).unwrap();
            let mut scaled = w.clone();
            scaled.data_mut().iter_mut().for_each(|v| *v *= lambda);
            prop_assert_eq!(
                predict(&aggregate(&logits, &w).unwrap()),
                predict(&aggregate(&logits, &scaled).unwrap())
            );
        }

        #[test]
        fn constant_shift_keeps_prediction(row in prop::collection::vec(-10f64..10.0, 1..8), c in -100f64..100.0) {
            let shifted: Vec<f64> = row.iter().map(|v| v + c).collect();
            // a shift can flip the winner only between entries that were already tied up to rounding
            let a = argmax(&row);
            let b = argmax(&shifted);
            prop_assert!(a == b || (row[a] - row[b]).abs() < 1e-9);
        }
    }
}
