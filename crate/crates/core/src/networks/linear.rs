use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Affine map `y = x·Wᵀ + b` applied row-wise, with `W: out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Tensor::zeros(vec![output, input]),
            bias: Tensor::zeros(vec![output]),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let data = (0..input * output)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        Self {
            weight: Tensor::new(vec![output, input], data).expect("weight shape"),
            bias: Tensor::zeros(vec![output]),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (inp, out) = (self.input_dim(), self.output_dim());
        if x.shape().len() != 2 || x.shape()[1] != inp {
            return Err(Error::Shape(format!(
                "linear layer expects N × {inp} input, got {:?}",
                x.shape()
            )));
        }
        let n = x.rows();
        let mut y = Vec::with_capacity(n * out);
        for i in 0..n {
            let xi = x.row(i);
            for o in 0..out {
                let w = self.weight.row(o);
                let mut acc = self.bias.data()[o];
                for k in 0..inp {
                    acc += w[k] * xi[k];
                }
                y.push(acc);
            }
        }
        Tensor::new(vec![n, out], y)
    }

    /// Gradients of the layer parameters and of the input, given `∂L/∂y`.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> (Linear, Tensor) {
        let (inp, out) = (self.input_dim(), self.output_dim());
        let n = x.rows();
        let mut grads = Linear::zeros(inp, out);
        let mut grad_in = Tensor::zeros(vec![n, inp]);
        for i in 0..n {
            let xi = x.row(i);
            let gi = grad_out.row(i);
            for o in 0..out {
                let g = gi[o];
                if g == 0.0 {
                    continue;
                }
                grads.bias.data_mut()[o] += g;
                let wrow = grads.weight.row_mut(o);
                for k in 0..inp {
                    wrow[k] += g * xi[k];
                }
                let w = self.weight.row(o);
                let gin = grad_in.row_mut(i);
                for k in 0..inp {
                    gin[k] += g * w[k];
                }
            }
        }
        (grads, grad_in)
    }
}

pub(crate) fn relu(x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Mask `grad` by the ReLU derivative at `pre` (zero at the kink).
pub(crate) fn relu_backward(pre: &Tensor, grad: &Tensor) -> Tensor {
    let data = pre
        .data()
        .iter()
        .zip(grad.data())
        .map(|(&p, &g)| if p > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(pre.shape().to_vec(), data).expect("same shape")
}
