//! Mini-batch SGD over the weight generator and redundancy net on a
//! frozen bundle, with a constant warm-up epoch followed by a half-cosine
//! schedule stepped once per epoch.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ensemble::{aggregate, aggregate_backward, build_mu, split_mu};
use crate::error::{Error, Result};
use crate::feature_store::{split_base_new, FeatureBundle};
use crate::losses::{ce_ensemble, cmi, kl_uniform, total_loss, LossReport};
use crate::networks::Model;
use crate::numerics::{Rng, Tensor};

/// Which classes the training split is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassScope {
    /// Base classes only, with logits narrowed to base columns.
    #[default]
    Base,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub warmup_epochs: usize,
    pub warmup_lr: f64,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
    pub hidden_dim: Option<usize>,
    pub classes: ClassScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            epochs: 5,
            lr: 2e-2,
            warmup_epochs: 1,
            warmup_lr: 1e-5,
            alpha: 2e-1,
            beta: 1e-0,
            seed: 0,
            hidden_dim: None,
            classes: ClassScope::Base,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0 < self.warmup_epochs && self.warmup_epochs < self.epochs) {
            return Err(Error::Config(format!(
                "need 0 < warmup_epochs < epochs, got {} and {}",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.warmup_lr > 0.0 && self.lr > self.warmup_lr && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "need lr > warmup_lr > 0, got {} and {}",
                self.lr, self.warmup_lr
            )));
        }
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!(
                "α and β must be nonnegative, got {} and {}",
                self.alpha, self.beta
            )));
        }
        if self.hidden_dim == Some(0) {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        Ok(())
    }
}

/// Learning rate for `epoch`: `warmup_lr` during warm-up, then
/// `lr · ½(1 + cos(π t / T))` with `t` counted from the end of warm-up.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::Config(format!(
            "epoch {epoch} outside 0..{}",
            config.epochs
        )));
    }
    if epoch < config.warmup_epochs {
        return Ok(config.warmup_lr);
    }
    let t = (epoch - config.warmup_epochs) as f64;
    let total = (config.epochs - config.warmup_epochs) as f64;
    Ok(config.lr * 0.5 * (1.0 + (PI * t / total).cos()))
}

/// Everything one pass needs, gathered for a set of samples.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub images: Vec<Tensor>,
    pub texts: &'a [Tensor],
    pub slot_logits: Tensor,
    pub labels: Vec<usize>,
    pub temperature: f64,
}

impl<'a> Batch<'a> {
    pub fn from_bundle(bundle: &'a FeatureBundle, samples: &[usize]) -> Self {
        Self {
            images: bundle.images().iter().map(|t| t.select_rows(samples)).collect(),
            texts: bundle.texts(),
            slot_logits: bundle.slot_logits(samples),
            labels: samples.iter().map(|&i| bundle.labels()[i]).collect(),
            temperature: bundle.temperature(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Multipliers applied to each loss term before differentiation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TermWeights {
    pub ce: f64,
    pub kl: f64,
    pub mutual: f64,
}

impl TermWeights {
    /// The training objective: `ce + α·kl + β·mutual`.
    pub fn objective(alpha: f64, beta: f64) -> Self {
        Self {
            ce: 1.0,
            kl: alpha,
            mutual: beta,
        }
    }
}

/// Which side of every non-differentiable point the pass landed on:
/// ReLU pre-activations of both networks and the signs of the CMI moment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KinkPattern(Vec<i8>);

fn signs(values: &[f64]) -> impl Iterator<Item = i8> + '_ {
    values.iter().map(|&v| {
        if v > 0.0 {
            1
        } else if v < 0.0 {
            -1
        } else {
            0
        }
    })
}

/// Result of one forward and backward pass.
#[derive(Debug, Clone)]
pub struct Pass {
    pub ce: f64,
    pub kl: f64,
    pub mutual: f64,
    /// `Σ weight · term` for the requested [`TermWeights`].
    pub value: f64,
    /// Gradient-shaped copy of the model.
    pub grads: Model,
    pub kinks: KinkPattern,
}

pub fn forward_backward(model: &Model, batch: &Batch<'_>, weights: TermWeights) -> Result<Pass> {
    let dims = model.rd.dims();
    let rd = model.rd.forward(&batch.images)?;
    let (kl, kl_grads) = kl_uniform(&rd.irrelevant, batch.texts, batch.temperature)?;

    let mu = build_mu(&rd.relevant)?;
    let irrelevant = build_mu(&rd.irrelevant)?;
    let mutual = cmi(&mu, &irrelevant, &batch.labels)?;

    let wg_cache = model.wg.forward_cached(&mu)?;
    let logit_en = aggregate(&batch.slot_logits, &wg_cache.weights)?;
    let (ce, mut grad_en) = ce_ensemble(&logit_en, &batch.labels)?;
    grad_en.data_mut().iter_mut().for_each(|g| *g *= weights.ce);

    let grad_weights = aggregate_backward(&batch.slot_logits, &grad_en)?;
    let (wg_grads, mut grad_mu) = model.wg.backward(&mu, &wg_cache, &grad_weights)?;
    grad_mu.add_scaled(&mutual.grad_relevant, weights.mutual);
    let grad_relevant = split_mu(&grad_mu, &dims)?;
    let mut grad_irrelevant = split_mu(&mutual.grad_irrelevant, &dims)?;
    for (g, k) in grad_irrelevant.iter_mut().zip(&kl_grads) {
        g.data_mut().iter_mut().for_each(|v| *v *= weights.mutual);
        g.add_scaled(k, weights.kl);
    }
    let rd_grads = model.rd.backward(&batch.images, &rd, &grad_relevant, &grad_irrelevant)?;

    let mut kinks: Vec<i8> = Vec::new();
    for c in &rd.caches {
        kinks.extend(signs(c.hidden_pre.data()));
    }
    kinks.extend(signs(wg_cache.hidden_pre.data()));
    kinks.extend(signs(&mutual.moment));

    Ok(Pass {
        ce,
        kl,
        mutual: mutual.loss,
        value: weights.ce * ce + weights.kl * kl + weights.mutual * mutual.loss,
        grads: Model {
            backbones: model.backbones.clone(),
            num_prompts: model.num_prompts,
            wg: wg_grads,
            rd: rd_grads,
        },
        kinks: KinkPattern(kinks),
    })
}

/// Scalar value of the weighted objective only.
pub fn objective_value(model: &Model, batch: &Batch<'_>, weights: TermWeights) -> Result<(f64, KinkPattern)> {
    let p = forward_backward(model, batch, weights)?;
    Ok((p.value, p.kinks))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub ce: f64,
    pub kl: f64,
    pub mutual: f64,
    pub total: f64,
}

impl StepRecord {
    fn new(step: usize, epoch: usize, lr: f64, r: &LossReport) -> Self {
        Self {
            step,
            epoch,
            lr,
            ce: r.ce,
            kl: r.kl,
            mutual: r.mutual,
            total: r.total,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    /// Completed steps.
    pub step: usize,
    /// Completed epochs.
    pub epoch: usize,
    pub loss_history: Vec<StepRecord>,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            step: 0,
            epoch: 0,
            loss_history: Vec::new(),
        }
    }

    /// Mean total loss of each epoch, in order.
    pub fn epoch_means(&self) -> Vec<f64> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for r in &self.loss_history {
            if out.len() <= r.epoch {
                out.resize(r.epoch + 1, (0.0, 0));
            }
            out[r.epoch].0 += r.total;
            out[r.epoch].1 += 1;
        }
        out.into_iter().map(|(s, n)| s / n.max(1) as f64).collect()
    }
}

fn sgd(params: &mut Model, grads: &Model, lr: f64) {
    for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
        p.add_scaled(g, -lr);
    }
}

/// One full pipeline pass on `batch` followed by an SGD update at `lr`.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch<'_>,
    config: &TrainConfig,
    lr: f64,
) -> Result<LossReport> {
    let pass = forward_backward(
        &state.model,
        batch,
        TermWeights::objective(config.alpha, config.beta),
    )?;
    let report = total_loss(pass.ce, pass.kl, pass.mutual, config.alpha, config.beta)?;
    if !report.total.is_finite() {
        return Err(Error::Divergence {
            step: state.step,
            detail: format!("non-finite loss {report:?}"),
        });
    }
    sgd(&mut state.model, &pass.grads, lr);
    if state.model.tensors().iter().any(|t| !t.is_finite()) {
        return Err(Error::Divergence {
            step: state.step,
            detail: "non-finite parameters after update".into(),
        });
    }
    state
        .loss_history
        .push(StepRecord::new(state.step, state.epoch, lr, &report));
    state.step += 1;
    Ok(report)
}

/// The bundle actually trained on: the train split, narrowed to the
/// classes selected by `scope`.
pub fn training_view(bundle: &FeatureBundle, scope: ClassScope) -> Result<FeatureBundle> {
    let classes: Vec<usize> = match scope {
        ClassScope::Base => split_base_new(bundle.manifest())?.0,
        ClassScope::All => (0..bundle.num_classes()).collect(),
    };
    let mut keep = vec![false; bundle.num_classes()];
    classes.iter().for_each(|&c| keep[c] = true);
    let samples: Vec<usize> = bundle
        .splits()
        .train
        .iter()
        .copied()
        .filter(|&i| keep[bundle.labels()[i]])
        .collect();
    if samples.is_empty() {
        return Err(Error::Config("train split has no samples in the selected classes".into()));
    }
    bundle.subset(&samples, &classes)
}

/// Batches of sample indices, grouped by epoch.
pub type Schedule = Vec<Vec<Vec<usize>>>;

/// Training view, seeded initialization and, for every epoch, the
/// batches in visiting order. Initialization and shuffles draw from one
/// generator seeded by `config.seed`.
fn plan(bundle: &FeatureBundle, config: &TrainConfig) -> Result<(FeatureBundle, Model, Schedule)> {
    config.validate()?;
    let view = training_view(bundle, config.classes)?;
    let mut rng = Rng::new(config.seed);
    let model = Model::init(&view, config.hidden_dim, &mut rng)?;
    let mut order: Vec<usize> = (0..view.num_samples()).collect();
    let schedule = (0..config.epochs)
        .map(|_| {
            rng.shuffle(&mut order);
            order.chunks(config.batch_size).map(<[usize]>::to_vec).collect()
        })
        .collect();
    Ok((view, model, schedule))
}

/// Sample indices (into [`training_view`]) of every batch `fit` visits,
/// grouped by epoch.
pub fn batch_schedule(bundle: &FeatureBundle, config: &TrainConfig) -> Result<Schedule> {
    Ok(plan(bundle, config)?.2)
}

/// Train from a fresh seeded initialization for `config.epochs` epochs.
/// The run is bit-for-bit reproducible from `(bundle, config)`.
pub fn fit(bundle: &FeatureBundle, config: &TrainConfig) -> Result<TrainState> {
    let (view, model, schedule) = plan(bundle, config)?;
    let mut state = TrainState::new(model);
    for (epoch, batches) in schedule.iter().enumerate() {
        let lr = lr_at(config, epoch)?;
        for chunk in batches {
            let batch = Batch::from_bundle(&view, chunk);
            train_step(&mut state, &batch, config, lr)?;
        }
        state.epoch = epoch + 1;
        log::debug!(
            "epoch {epoch}: lr {lr:.3e}, mean loss {:.6}",
            state.epoch_means()[epoch]
        );
    }
    Ok(state)
}

/// Untrained model with the same initialization `fit` would start from.
pub fn initial_state(bundle: &FeatureBundle, config: &TrainConfig) -> Result<TrainState> {
    Ok(TrainState::new(plan(bundle, config)?.1))
}
