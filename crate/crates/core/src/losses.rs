//! The three terms of the training objective and their gradients with
//! respect to network outputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_norm, log_softmax, softmax_unchecked, Tensor};

/// Component losses and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub ce: f64,
    pub kl: f64,
    pub mutual: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
}

/// Mean cross-entropy of `logit_en` (`N × C`) against `labels`, and its
/// gradient `(softmax - onehot) / N`.
pub fn ce_ensemble(logit_en: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let n = logit_en.rows();
    if logit_en.shape().len() != 2 || labels.len() != n || n == 0 {
        return Err(Error::Shape(format!(
            "cross-entropy of {:?} logits against {} labels",
            logit_en.shape(),
            labels.len()
        )));
    }
    let c = logit_en.row_len();
    let mut grad = Tensor::zeros(vec![n, c]);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= c {
            return Err(Error::Shape(format!("label {y} out of range for {c} classes")));
        }
        let row = logit_en.row(i);
        let logp = log_softmax(row);
        loss -= logp[y];
        let g = grad.row_mut(i);
        for k in 0..c {
            g[k] = logp[k].exp() / n as f64;
        }
        g[y] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Divergence of the prediction made from prompt-irrelevant features
/// against the uniform distribution.
///
/// For each sample, backbone and prompt, `p = softmax(cos(z^ir, t_c) / τ)`
/// and the term is `Σ_c p_c log(p_c C)`. Terms are summed over samples and
/// averaged over (backbone, prompt). A zero `z^ir` row yields uniform `p`
/// and contributes nothing.
///
/// `irrelevant[b]` is `N × d_b`; `texts[b]` is `M × C × d_b`.
pub fn kl_uniform(irrelevant: &[Tensor], texts: &[Tensor], temperature: f64) -> Result<(f64, Vec<Tensor>)> {
    if irrelevant.len() != texts.len() || irrelevant.is_empty() {
        return Err(Error::Shape(format!(
            "{} irrelevant blocks for {} text blocks",
            irrelevant.len(),
            texts.len()
        )));
    }
    let m = texts[0].shape()[0];
    let pairs = (irrelevant.len() * m) as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(irrelevant.len());
    for (zir, text) in irrelevant.iter().zip(texts) {
        let (tm, c, d) = (text.shape()[0], text.shape()[1], text.shape()[2]);
        if tm != m || zir.shape().len() != 2 || zir.row_len() != d {
            return Err(Error::Shape(format!(
                "irrelevant features {:?} do not match text features {:?}",
                zir.shape(),
                text.shape()
            )));
        }
        let unit: Vec<Vec<f64>> = text
            .data()
            .chunks(d)
            .map(|t| {
                let norm = l2_norm(t);
                if norm == 0.0 {
                    return Err(Error::DegenerateVector {
                        context: "text feature in kl_uniform".into(),
                    });
                }
                Ok(t.iter().map(|v| v / norm).collect())
            })
            .collect::<Result<_>>()?;
        let log_c = (c as f64).ln();
        let mut grad = Tensor::zeros(zir.shape().to_vec());
        for i in 0..zir.rows() {
            let z = zir.row(i);
            let norm = l2_norm(z);
            if norm == 0.0 {
                continue;
            }
            let g = grad.row_mut(i);
            for p in 0..m {
                let cos: Vec<f64> = (0..c).map(|k| dot(z, &unit[p * c + k]) / norm).collect();
                let scores: Vec<f64> = cos.iter().map(|v| v / temperature).collect();
                let logp = log_softmax(&scores);
                let prob = softmax_unchecked(&scores);
                let neg_entropy: f64 = prob.iter().zip(&logp).map(|(a, b)| a * b).sum();
                loss += (neg_entropy + log_c) / pairs;
                // ∂/∂s_k = p_k (log p_k - Σ p log p); ∂s_k/∂z = (t̂_k - cos_k ẑ) / (τ |z|)
                for k in 0..c {
                    let ds = prob[k] * (logp[k] - neg_entropy) / pairs;
                    if ds == 0.0 {
                        continue;
                    }
                    let scale = ds / (temperature * norm);
                    let t = &unit[p * c + k];
                    for j in 0..d {
                        g[j] += scale * (t[j] - cos[k] * z[j] / norm);
                    }
                }
            }
        }
        grads.push(grad);
    }
    Ok((loss, grads))
}

/// Conditional mutual information estimate between prompt-relevant and
/// prompt-irrelevant features given the labels, with gradients.
#[derive(Debug, Clone)]
pub struct CmiTerm {
    pub loss: f64,
    /// `v = (1/N) Σ_i z^r_i ⊙ (z^ir_i - mean_{j: y_j = y_i} z^ir_j)`; the loss is `‖v‖₁`.
    pub moment: Vec<f64>,
    pub grad_relevant: Tensor,
    pub grad_irrelevant: Tensor,
}

fn class_means(x: &Tensor, labels: &[usize]) -> Vec<Vec<f64>> {
    let d = x.row_len();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = vec![vec![0.0; d]; classes];
    let mut counts = vec![0usize; classes];
    for (i, &y) in labels.iter().enumerate() {
        counts[y] += 1;
        for (s, v) in sums[y].iter_mut().zip(x.row(i)) {
            *s += v;
        }
    }
    for (s, &n) in sums.iter_mut().zip(&counts) {
        if n > 0 {
            s.iter_mut().for_each(|v| *v /= n as f64);
        }
    }
    sums
}

/// Class means are taken within the batch. Both inputs are `N × D`, the
/// per-backbone features concatenated in backbone order.
pub fn cmi(relevant: &Tensor, irrelevant: &Tensor, labels: &[usize]) -> Result<CmiTerm> {
    let n = relevant.rows();
    if relevant.shape().len() != 2 || relevant.shape() != irrelevant.shape() || labels.len() != n || n == 0 {
        return Err(Error::Shape(format!(
            "cmi needs matching N × D inputs and N labels, got {:?}, {:?}, {}",
            relevant.shape(),
            irrelevant.shape(),
            labels.len()
        )));
    }
    let d = relevant.row_len();
    let nf = n as f64;
    let mean_ir = class_means(irrelevant, labels);
    let mean_r = class_means(relevant, labels);
    let mut moment = vec![0.0; d];
    for (i, &y) in labels.iter().enumerate() {
        let (r, ir) = (relevant.row(i), irrelevant.row(i));
        for k in 0..d {
            moment[k] += r[k] * (ir[k] - mean_ir[y][k]) / nf;
        }
    }
    let loss = moment.iter().map(|v| v.abs()).sum();
    let sign: Vec<f64> = moment
        .iter()
        .map(|&v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 })
        .collect();
    // ∂v_k/∂z^r_{ik} = (z^ir_{ik} - m^ir_{y_i,k}) / N and, by the same
    // centering identity, ∂v_k/∂z^ir_{ik} = (z^r_{ik} - m^r_{y_i,k}) / N.
    let mut grad_relevant = Tensor::zeros(vec![n, d]);
    let mut grad_irrelevant = Tensor::zeros(vec![n, d]);
    for (i, &y) in labels.iter().enumerate() {
        let (r, ir) = (relevant.row(i), irrelevant.row(i));
        let gr = grad_relevant.row_mut(i);
        for k in 0..d {
            gr[k] = sign[k] * (ir[k] - mean_ir[y][k]) / nf;
        }
        let gir = grad_irrelevant.row_mut(i);
        for k in 0..d {
            gir[k] = sign[k] * (r[k] - mean_r[y][k]) / nf;
        }
    }
    Ok(CmiTerm {
        loss,
        moment,
        grad_relevant,
        grad_irrelevant,
    })
}

/// `ce + α·kl + β·mutual`.
pub fn total_loss(ce: f64, kl: f64, mutual: f64, alpha: f64, beta: f64) -> Result<LossReport> {
    if !(alpha >= 0.0 && beta >= 0.0) {
        return Err(Error::Config(format!(
            "loss weights must be nonnegative, got α={alpha}, β={beta}"
        )));
    }
    Ok(LossReport {
        ce,
        kl,
        mutual,
        total: ce + alpha * kl + beta * mutual,
        alpha,
        beta,
    })
}
