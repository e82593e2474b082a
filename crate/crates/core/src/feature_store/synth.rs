//! Desk-scale stand-in for CLIP features.
//!
//! Each backbone gets its own random class centroids scaled by
//! `class_separation`. Image features are centroid plus isotropic noise.
//! Text features sit at the class centroid plus a prompt-specific
//! perturbation whose size is drawn per (backbone, prompt), so the same
//! prompt is reliable under one backbone and noisy under another.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::io::quantize;
use crate::numerics::{cosine, Rng, Tensor};

use super::{BackboneDesc, FeatureBundle, Manifest, Splits, DEFAULT_TEMPERATURE};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub num_samples: usize,
    pub num_classes: usize,
    pub num_prompts: usize,
    /// One feature dimension per backbone.
    pub dims: Vec<usize>,
    pub class_separation: f64,
    /// Upper bound of the per-(backbone, prompt) text perturbation scale.
    pub prompt_noise: f64,
    /// Upper bound of the per-slot pull of each class text toward the
    /// centroid of another class (a fixed random permutation per slot).
    pub prompt_bias: f64,
    pub temperature: f64,
}

impl SynthSpec {
    pub fn new(
        num_samples: usize,
        num_classes: usize,
        num_prompts: usize,
        dims: Vec<usize>,
        class_separation: f64,
    ) -> Self {
        Self {
            num_samples,
            num_classes,
            num_prompts,
            dims,
            class_separation,
            prompt_noise: DEFAULT_PROMPT_NOISE,
            prompt_bias: DEFAULT_PROMPT_BIAS,
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    /// The `tiny-synth` fixture: N=64, C=4, M=3, two 16-dim backbones,
    /// with decoy prompts so that reweighting has something to fix.
    pub fn tiny() -> Self {
        Self {
            prompt_bias: 2.5,
            ..Self::new(64, 4, 3, vec![16, 16], 4.0)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_samples < self.num_classes {
            return Err(Error::Config(format!(
                "synthesis needs N >= C >= 1, got N={} C={}",
                self.num_samples, self.num_classes
            )));
        }
        if self.num_prompts == 0 || self.dims.is_empty() || self.dims.iter().any(|&d| d < 2) {
            return Err(Error::Config(
                "synthesis needs M >= 1 and every backbone dim >= 2".into(),
            ));
        }
        for (name, v) in [
            ("class_separation", self.class_separation),
            ("prompt_noise", self.prompt_noise),
            ("prompt_bias", self.prompt_bias),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }
}

pub const DEFAULT_PROMPT_NOISE: f64 = 1.0;
pub const DEFAULT_PROMPT_BIAS: f64 = 0.0;

const BACKBONE_IDS: [&str; 2] = ["vit-b-16", "vit-b-32"];

fn backbone_id(b: usize) -> String {
    BACKBONE_IDS
        .get(b)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("backbone-{b}"))
}

fn gaussian_vec(rng: &mut Rng, d: usize, scale: f64) -> Vec<f64> {
    let s = scale / (d as f64).sqrt();
    (0..d).map(|_| s * rng.normal()).collect()
}

/// Ensure a vector has nonzero norm after `f32` rounding.
fn nonzero(mut v: Vec<f64>) -> Vec<f64> {
    if v.iter().all(|x| *x == 0.0) {
        v[0] = 1.0;
    }
    v
}

/// `cos(image_i, text_{m,c}) / τ` for every sample, prompt and class, rounded to `f32`.
pub(crate) fn compute_logits(image: &Tensor, text: &Tensor, temperature: f64) -> Tensor {
    let (n, m, c, d) = (image.rows(), text.shape()[0], text.shape()[1], text.shape()[2]);
    let mut data = Vec::with_capacity(n * m * c);
    for i in 0..n {
        let z = image.row(i);
        for p in 0..m {
            let row = text.row(p);
            for k in 0..c {
                let cos = cosine(z, &row[k * d..(k + 1) * d]).expect("nonzero features");
                data.push(quantize(cos / temperature));
            }
        }
    }
    Tensor::new(vec![n, m, c], data).expect("logit shape")
}

pub fn synth_bundle(spec: &SynthSpec, seed: u64) -> Result<FeatureBundle> {
    spec.validate()?;
    let mut rng = Rng::new(seed);
    let (n, c, m) = (spec.num_samples, spec.num_classes, spec.num_prompts);

    let mut labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    rng.shuffle(&mut labels);

    let mut image = Vec::new();
    let mut text = Vec::new();
    let mut logits = Vec::new();
    for &d in &spec.dims {
        let mut brng = rng.fork();
        let centroids: Vec<Vec<f64>> = (0..c)
            .map(|_| gaussian_vec(&mut brng, d, spec.class_separation))
            .collect();

        let mut img = Vec::with_capacity(n * d);
        for &y in &labels {
            let noise = gaussian_vec(&mut brng, d, 1.0);
            let z: Vec<f64> = centroids[y].iter().zip(&noise).map(|(a, b)| a + b).collect();
            img.extend(nonzero(z).into_iter().map(quantize));
        }

        let mut txt = Vec::with_capacity(m * c * d);
        for _ in 0..m {
            let sigma = spec.prompt_noise * brng.uniform();
            let rho = spec.prompt_bias * brng.uniform();
            let mut decoy: Vec<usize> = (0..c).collect();
            brng.shuffle(&mut decoy);
            for (k, centroid) in centroids.iter().enumerate() {
                let eta = gaussian_vec(&mut brng, d, sigma);
                let t: Vec<f64> = centroid
                    .iter()
                    .zip(&centroids[decoy[k]])
                    .zip(&eta)
                    .map(|((a, w), e)| (1.0 - rho) * a + rho * w + e)
                    .collect();
                txt.extend(nonzero(t).into_iter().map(quantize));
            }
        }

        let img = Tensor::new(vec![n, d], img)?;
        let txt = Tensor::new(vec![m, c, d], txt)?;
        logits.push(compute_logits(&img, &txt, spec.temperature));
        image.push(img);
        text.push(txt);
    }

    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let n_train = n / 2;
    let n_val = n / 10;
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    let splits = Splits {
        train: sorted(&order[..n_train]),
        val: sorted(&order[n_train..n_train + n_val]),
        test: sorted(&order[n_train + n_val..]),
        base_classes: None,
        new_classes: None,
    };

    let class_names: Vec<String> = (0..c).map(|k| format!("class_{k}")).collect();
    let prompt_texts = class_names
        .iter()
        .map(|name| {
            (0..m)
                .map(|p| {
                    if p == 0 {
                        format!("A photo of a {name}.")
                    } else {
                        format!("A photo of a {name}, which has visual trait {p}.")
                    }
                })
                .collect()
        })
        .collect();
    let manifest = Manifest {
        dataset_name: format!("synth-n{n}-c{c}-m{m}-s{seed}"),
        num_classes: c,
        class_names,
        num_prompts: m,
        prompt_texts,
        general_prompt: 0,
        num_samples: n,
        backbones: spec
            .dims
            .iter()
            .enumerate()
            .map(|(b, &d)| BackboneDesc {
                id: backbone_id(b),
                feature_dim: d,
            })
            .collect(),
        splits,
        temperature: spec.temperature,
        arrays: BTreeMap::new(),
    };
    FeatureBundle::from_parts(manifest, image, text, logits, labels)
}

/// Copy of `bundle` with `N(0, sigma²)` added to every image coordinate
/// and logits recomputed from the noisy features.
pub fn add_feature_noise(bundle: &FeatureBundle, sigma: f64, seed: u64) -> Result<FeatureBundle> {
    let mut rng = Rng::new(seed);
    let mut image = Vec::new();
    let mut logits = Vec::new();
    for b in 0..bundle.num_backbones() {
        let mut img = bundle.image(b).clone();
        let d = img.row_len();
        for i in 0..img.rows() {
            let row: Vec<f64> = img
                .row(i)
                .iter()
                .map(|v| quantize(v + sigma * rng.normal()))
                .collect();
            img.row_mut(i).copy_from_slice(&nonzero(row));
        }
        debug_assert_eq!(d, bundle.backbone_dims()[b]);
        logits.push(compute_logits(&img, bundle.text(b), bundle.temperature()));
        image.push(img);
    }
    let mut out = bundle.clone();
    out.replace_features(image, logits);
    Ok(out)
}

/// Copy of `bundle` with one extra image coordinate per backbone, drawn
/// from `N(0, scale²)`. Every text feature is zero there, so the
/// coordinate carries no prompt information; logits are recomputed.
pub fn inject_nuisance(bundle: &FeatureBundle, scale: f64, seed: u64) -> Result<FeatureBundle> {
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(Error::Config("nuisance scale must be finite and >= 0".into()));
    }
    let mut rng = Rng::new(seed);
    let mut manifest = bundle.manifest().clone();
    let (mut image, mut text, mut logits) = (Vec::new(), Vec::new(), Vec::new());
    for b in 0..bundle.num_backbones() {
        let d = bundle.backbone_dims()[b];
        let old = bundle.image(b);
        let mut img = Vec::with_capacity(old.rows() * (d + 1));
        for i in 0..old.rows() {
            img.extend_from_slice(old.row(i));
            img.push(quantize(scale * rng.normal()));
        }
        let old = bundle.text(b);
        let (m, c) = (old.shape()[0], old.shape()[1]);
        let mut txt = Vec::with_capacity(m * c * (d + 1));
        for row in old.data().chunks(d) {
            txt.extend_from_slice(row);
            txt.push(0.0);
        }
        let img = Tensor::new(vec![bundle.num_samples(), d + 1], img)?;
        let txt = Tensor::new(vec![m, c, d + 1], txt)?;
        logits.push(compute_logits(&img, &txt, bundle.temperature()));
        image.push(img);
        text.push(txt);
        manifest.backbones[b].feature_dim = d + 1;
    }
    manifest.arrays.clear();
    manifest.dataset_name = format!("{}+nuisance", manifest.dataset_name);
    FeatureBundle::from_parts(manifest, image, text, logits, bundle.labels().to_vec())
}
