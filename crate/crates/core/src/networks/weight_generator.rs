use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

use super::linear::{relu, relu_backward, Linear};

/// Two-layer generator of per-sample ensemble weights:
/// `sigmoid(ReLU(μ·W1ᵀ + b1)·W2ᵀ + b2)`, one weight per slot.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightGenerator {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct WgCache {
    pub hidden_pre: Tensor,
    pub hidden: Tensor,
    pub weights: Tensor,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hidden width used when no override is given: a quarter of the input, at least 1.
pub fn default_hidden_dim(input_dim: usize) -> usize {
    (input_dim / 4).max(1)
}

impl WeightGenerator {
    pub fn zeros(input_dim: usize, hidden_dim: usize, num_slots: usize) -> Self {
        Self {
            fc1: Linear::zeros(input_dim, hidden_dim),
            fc2: Linear::zeros(hidden_dim, num_slots),
        }
    }

    pub fn init(input_dim: usize, hidden_dim: usize, num_slots: usize, rng: &mut Rng) -> Self {
        Self {
            fc1: Linear::init(input_dim, hidden_dim, rng),
            fc2: Linear::init(hidden_dim, num_slots, rng),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fc1.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.fc1.output_dim()
    }

    pub fn num_slots(&self) -> usize {
        self.fc2.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.fc1.weight, &self.fc1.bias, &self.fc2.weight, &self.fc2.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.fc1.weight,
            &mut self.fc1.bias,
            &mut self.fc2.weight,
            &mut self.fc2.bias,
        ]
    }

    pub fn forward_cached(&self, mu: &Tensor) -> Result<WgCache> {
        if mu.shape().len() != 2 || mu.shape()[1] != self.input_dim() {
            return Err(Error::Shape(format!(
                "weight generator expects N × {} input, got {:?}",
                self.input_dim(),
                mu.shape()
            )));
        }
        let hidden_pre = self.fc1.forward(mu)?;
        let hidden = relu(&hidden_pre);
        let mut weights = self.fc2.forward(&hidden)?;
        weights.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        Ok(WgCache {
            hidden_pre,
            hidden,
            weights,
        })
    }

    /// Per-sample ensemble weights, `N × 2M`, each strictly inside (0, 1)
    /// up to floating-point saturation.
    pub fn forward(&self, mu: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(mu)?.weights)
    }

    /// Parameter gradients (as a generator-shaped value) and `∂L/∂μ`.
    pub fn backward(
        &self,
        mu: &Tensor,
        cache: &WgCache,
        upstream: &Tensor,
    ) -> Result<(WeightGenerator, Tensor)> {
        upstream.expect_shape(cache.weights.shape(), "weight-generator upstream gradient")?;
        let grad_logit_data = upstream
            .data()
            .iter()
            .zip(cache.weights.data())
            .map(|(&g, &w)| g * w * (1.0 - w))
            .collect();
        let grad_logit = Tensor::new(upstream.shape().to_vec(), grad_logit_data)?;
        let (fc2, grad_hidden) = self.fc2.backward(&cache.hidden, &grad_logit);
        let grad_pre = relu_backward(&cache.hidden_pre, &grad_hidden);
        let (fc1, grad_mu) = self.fc1.backward(mu, &grad_pre);
        Ok((WeightGenerator { fc1, fc2 }, grad_mu))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;

    fn random_mu(rng: &mut Rng, n: usize, d: usize) -> Tensor {
        Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn zero_parameters_give_one_half() {
        let wg = WeightGenerator::zeros(5, 2, 6);
        let mu = random_mu(&mut Rng::new(0), 3, 5);
        assert!(wg.forward(&mu).unwrap().data().iter().all(|&w| w == 0.5));
    }

    #[test]
    fn large_bias_saturates() {
        let mut wg = WeightGenerator::zeros(5, 2, 4);
        wg.fc2.bias = Tensor::filled(vec![4], 50.0);
        let mu = random_mu(&mut Rng::new(0), 2, 5);
        assert!(wg.forward(&mu).unwrap().data().iter().all(|&w| (1.0 - w) < 1e-9));
    }

    #[test]
    fn matches_layer_by_layer_evaluation() {
        let mut rng = Rng::new(9);
        let (d, h, s) = (4, 3, 2);
        let wg = WeightGenerator::init(d, h, s, &mut rng);
        let mut wg = wg;
        for v in wg.fc1.bias.data_mut() {
            *v = rng.normal();
        }
        for v in wg.fc2.bias.data_mut() {
            *v = rng.normal();
        }
        let mu = random_mu(&mut rng, 3, d);
        let out = wg.forward(&mu).unwrap();
        let w1 = wg.fc1.weight.data();
        let w2 = wg.fc2.weight.data();
        for i in 0..3 {
            let x = mu.row(i);
            let mut hidden = [0.0; 3];
            for (j, hj) in hidden.iter_mut().enumerate() {
                let mut acc = wg.fc1.bias.data()[j];
                for k in 0..d {
                    acc += w1[j * d + k] * x[k];
                }
                *hj = if acc > 0.0 { acc } else { 0.0 };
            }
            for o in 0..s {
                let mut acc = wg.fc2.bias.data()[o];
                for j in 0..h {
                    acc += w2[o * h + j] * hidden[j];
                }
                let expected = 1.0 / (1.0 + (-acc).exp());
                assert!((out.row(i)[o] - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn param_count_formula() {
        let wg = WeightGenerator::zeros(32, 8, 6);
        assert_eq!(wg.param_count(), 8 * 32 + 8 + 6 * 8 + 6);
    }

    #[test]
    fn zero_upstream_zero_grads() {
        let mut rng = Rng::new(2);
        let wg = WeightGenerator::init(4, 2, 2, &mut rng);
        let mu = random_mu(&mut rng, 3, 4);
        let cache = wg.forward_cached(&mu).unwrap();
        let (g, gmu) = wg.backward(&mu, &cache, &Tensor::zeros(vec![3, 2])).unwrap();
        assert!(g.tensors().iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(gmu.data().iter().all(|&v| v == 0.0));
    }

    fn flatten(wg: &WeightGenerator) -> Vec<f64> {
        wg.tensors().iter().flat_map(|t| t.data().to_vec()).collect()
    }

    fn unflatten(wg: &mut WeightGenerator, flat: &[f64]) {
        let mut at = 0;
        for t in wg.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }

    #[test]
    fn single_sample_gradient_matches_finite_differences() {
        // One sample, hidden width 2, one backbone with a single prompt.
        let mut rng = Rng::new(4);
        let mut wg = WeightGenerator::init(3, 2, 2, &mut rng);
        wg.fc1.bias = Tensor::new(vec![2], vec![0.3, 0.2]).unwrap();
        let mu = Tensor::new(vec![1, 3], vec![0.9, -0.4, 1.3]).unwrap();
        let upstream = Tensor::new(vec![1, 2], vec![0.7, -1.1]).unwrap();
        let loss = |wg: &WeightGenerator, mu: &Tensor| -> f64 {
            let w = wg.forward(mu).unwrap();
            w.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum()
        };
        let cache = wg.forward_cached(&mu).unwrap();
        assert!(cache.hidden_pre.data().iter().all(|v| v.abs() > 1e-6));
        let (g, gmu) = wg.backward(&mu, &cache, &upstream).unwrap();

        let x0 = flatten(&wg);
        let numeric = finite_diff_grad(
            |x| {
                let mut probe = wg.clone();
                unflatten(&mut probe, x);
                loss(&probe, &mu)
            },
            &x0,
            1e-6,
        );
        for (a, n) in flatten(&g).iter().zip(&numeric) {
            let scale = a.abs().max(n.abs()).max(1e-6);
            assert!((a - n).abs() / scale < 1e-6, "{a} vs {n}");
        }
        let numeric_mu = finite_diff_grad(
            |x| loss(&wg, &Tensor::new(vec![1, 3], x.to_vec()).unwrap()),
            mu.data(),
            1e-6,
        );
        for (a, n) in gmu.data().iter().zip(&numeric_mu) {
            let scale = a.abs().max(n.abs()).max(1e-6);
            assert!((a - n).abs() / scale < 1e-6, "{a} vs {n}");
        }
    }

    #[test]
    fn rejects_wrong_width() {
        let wg = WeightGenerator::zeros(4, 1, 2);
        assert!(matches!(
            wg.forward(&Tensor::zeros(vec![2, 3])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn rows_are_independent_of_batch_order() {
        let mut rng = Rng::new(8);
        let wg = WeightGenerator::init(6, 3, 4, &mut rng);
        let mu = random_mu(&mut rng, 5, 6);
        let perm = [3, 0, 4, 1, 2];
        let a = wg.forward(&mu).unwrap();
        let b = wg.forward(&mu.select_rows(&perm)).unwrap();
        for (k, &p) in perm.iter().enumerate() {
            assert_eq!(b.row(k), a.row(p));
        }
    }
}
