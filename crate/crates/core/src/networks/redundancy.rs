use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

use super::linear::{relu, relu_backward, Linear};

/// One backbone's splitter: `A2·ReLU(A1·z + c1) + c2`, with the `2d`
/// output cut into prompt-relevant (first `d`) and prompt-irrelevant
/// (last `d`) halves.
#[derive(Debug, Clone, PartialEq)]
pub struct RedundancyBlock {
    pub fc1: Linear,
    pub fc2: Linear,
}

/// One [`RedundancyBlock`] per backbone, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct RedundancyNet {
    pub blocks: Vec<RedundancyBlock>,
}

#[derive(Debug, Clone)]
pub struct RdBlockCache {
    pub hidden_pre: Tensor,
    pub hidden: Tensor,
}

/// Forward outputs per backbone plus what backward needs.
#[derive(Debug, Clone)]
pub struct RdOutput {
    pub relevant: Vec<Tensor>,
    pub irrelevant: Vec<Tensor>,
    pub caches: Vec<RdBlockCache>,
}

impl RedundancyBlock {
    pub fn dim(&self) -> usize {
        self.fc1.input_dim()
    }
}

fn split_halves(out: &Tensor, d: usize) -> (Tensor, Tensor) {
    let n = out.rows();
    let mut r = Vec::with_capacity(n * d);
    let mut ir = Vec::with_capacity(n * d);
    for i in 0..n {
        let row = out.row(i);
        r.extend_from_slice(&row[..d]);
        ir.extend_from_slice(&row[d..]);
    }
    (
        Tensor::new(vec![n, d], r).expect("half shape"),
        Tensor::new(vec![n, d], ir).expect("half shape"),
    )
}

fn join_halves(r: &Tensor, ir: &Tensor) -> Tensor {
    let (n, d) = (r.rows(), r.row_len());
    let mut data = Vec::with_capacity(n * 2 * d);
    for i in 0..n {
        data.extend_from_slice(r.row(i));
        data.extend_from_slice(ir.row(i));
    }
    Tensor::new(vec![n, 2 * d], data).expect("joined shape")
}

impl RedundancyNet {
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            blocks: dims
                .iter()
                .map(|&d| RedundancyBlock {
                    fc1: Linear::zeros(d, d),
                    fc2: Linear::zeros(d, 2 * d),
                })
                .collect(),
        }
    }

    pub fn init(dims: &[usize], rng: &mut Rng) -> Self {
        Self {
            blocks: dims
                .iter()
                .map(|&d| RedundancyBlock {
                    fc1: Linear::init(d, d, rng),
                    fc2: Linear::init(d, 2 * d, rng),
                })
                .collect(),
        }
    }

    /// `A1 = I`, `A2 = [I; 0]`, zero biases: passes nonnegative input
    /// through as the relevant half and zeroes the irrelevant half.
    pub fn identity(dims: &[usize]) -> Self {
        let mut net = Self::zeros(dims);
        for (block, &d) in net.blocks.iter_mut().zip(dims) {
            for k in 0..d {
                block.fc1.weight.row_mut(k)[k] = 1.0;
                block.fc2.weight.row_mut(k)[k] = 1.0;
            }
        }
        net
    }

    pub fn dims(&self) -> Vec<usize> {
        self.blocks.iter().map(RedundancyBlock::dim).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.blocks
            .iter()
            .flat_map(|b| [&b.fc1.weight, &b.fc1.bias, &b.fc2.weight, &b.fc2.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.blocks
            .iter_mut()
            .flat_map(|b| {
                [
                    &mut b.fc1.weight,
                    &mut b.fc1.bias,
                    &mut b.fc2.weight,
                    &mut b.fc2.bias,
                ]
            })
            .collect()
    }

    pub fn forward(&self, images: &[Tensor]) -> Result<RdOutput> {
        if images.len() != self.blocks.len() {
            return Err(Error::Shape(format!(
                "redundancy net has {} backbone blocks, got {} inputs",
                self.blocks.len(),
                images.len()
            )));
        }
        let mut out = RdOutput {
            relevant: Vec::with_capacity(images.len()),
            irrelevant: Vec::with_capacity(images.len()),
            caches: Vec::with_capacity(images.len()),
        };
        for (block, z) in self.blocks.iter().zip(images) {
            let hidden_pre = block.fc1.forward(z)?;
            let hidden = relu(&hidden_pre);
            let y = block.fc2.forward(&hidden)?;
            let (r, ir) = split_halves(&y, block.dim());
            out.relevant.push(r);
            out.irrelevant.push(ir);
            out.caches.push(RdBlockCache { hidden_pre, hidden });
        }
        Ok(out)
    }

    /// Parameter gradients given `∂L/∂Z^r` and `∂L/∂Z^ir` per backbone.
    pub fn backward(
        &self,
        images: &[Tensor],
        output: &RdOutput,
        grad_relevant: &[Tensor],
        grad_irrelevant: &[Tensor],
    ) -> Result<RedundancyNet> {
        let nb = self.blocks.len();
        if images.len() != nb || grad_relevant.len() != nb || grad_irrelevant.len() != nb {
            return Err(Error::Shape(format!(
                "redundancy backward needs {nb} blocks of inputs and gradients"
            )));
        }
        let mut grads = Vec::with_capacity(nb);
        for b in 0..nb {
            let block = &self.blocks[b];
            grad_relevant[b].expect_shape(output.relevant[b].shape(), "relevant gradient")?;
            grad_irrelevant[b].expect_shape(output.irrelevant[b].shape(), "irrelevant gradient")?;
            let grad_out = join_halves(&grad_relevant[b], &grad_irrelevant[b]);
            let cache = &output.caches[b];
            let (fc2, grad_hidden) = block.fc2.backward(&cache.hidden, &grad_out);
            let grad_pre = relu_backward(&cache.hidden_pre, &grad_hidden);
            let (fc1, _) = block.fc1.backward(&images[b], &grad_pre);
            grads.push(RedundancyBlock { fc1, fc2 });
        }
        Ok(RedundancyNet { blocks: grads })
    }
}
