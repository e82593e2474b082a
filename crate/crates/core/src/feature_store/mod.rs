//! The frozen world the engine trains against: per-backbone image
//! features, per-(backbone, prompt, class) text features, precomputed
//! logits and labels, stored as a JSON manifest next to raw `f32` arrays.
//!
//! Ensemble slots are ordered backbone-major, prompt-minor: slot
//! `b * M + m` is prompt `m` under backbone `b`.

mod manifest;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

pub use manifest::{
    image_role, logits_role, split_base_new, text_role, BackboneDesc, Manifest, Splits,
    DEFAULT_TEMPERATURE, LABELS_ROLE,
};
pub use synth::{
    add_feature_noise, inject_nuisance, synth_bundle, SynthSpec, DEFAULT_PROMPT_BIAS, DEFAULT_PROMPT_NOISE,
};

use crate::error::{Error, Result};
use crate::io;
use crate::numerics::{cosine, l2_norm, Tensor};

/// Tolerance for agreement between stored logits and `cos / τ`.
pub const LOGIT_TOLERANCE: f64 = 1e-4;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBundle {
    manifest: Manifest,
    /// Per backbone, `N × d_b`.
    image: Vec<Tensor>,
    /// Per backbone, `M × C × d_b`.
    text: Vec<Tensor>,
    /// Per backbone, `N × M × C`.
    logits: Vec<Tensor>,
    labels: Vec<usize>,
}

/// Largest disagreement between stored logits and the cosine recomputation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LogitConsistency {
    pub max_abs_deviation: f64,
    /// `(backbone, sample, prompt, class)` of the worst entry.
    pub worst: Option<(usize, usize, usize, usize)>,
}

impl LogitConsistency {
    pub fn passes(&self) -> bool {
        self.max_abs_deviation <= LOGIT_TOLERANCE
    }
}

/// Resolve `path` to a manifest file: directories map to their `manifest.json`.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Load and validate a bundle. With `verify_logits`, every stored logit is
/// recomputed from the features and compared at [`LOGIT_TOLERANCE`].
pub fn load_bundle(path: &Path, verify_logits: bool) -> Result<FeatureBundle> {
    let manifest_file = manifest_path(path);
    let manifest: Manifest = io::read_json(&manifest_file)?;
    manifest.validate()?;
    let dir = manifest_file.parent().unwrap_or(Path::new("."));
    let read = |role: &str| -> Result<Tensor> {
        let entry = &manifest.arrays[role];
        Tensor::new(entry.shape.clone(), io::read_f32(dir, role, entry)?)
    };
    let mut image = Vec::new();
    let mut text = Vec::new();
    let mut logits = Vec::new();
    for b in &manifest.backbones {
        image.push(read(&image_role(&b.id))?);
        text.push(read(&text_role(&b.id))?);
        logits.push(read(&logits_role(&b.id))?);
    }
    let raw_labels = read(LABELS_ROLE)?;
    let labels = decode_labels(raw_labels.data(), manifest.num_classes)?;
    let bundle = FeatureBundle::from_parts(manifest, image, text, logits, labels)?;
    if verify_logits {
        bundle.verify_logits()?;
    }
    Ok(bundle)
}

fn decode_labels(raw: &[f64], num_classes: usize) -> Result<Vec<usize>> {
    raw.iter()
        .enumerate()
        .map(|(i, &v)| {
            if v.fract() != 0.0 || v < 0.0 || v >= num_classes as f64 {
                Err(Error::Format {
                    role: LABELS_ROLE.into(),
                    detail: format!("sample {i} has label {v}, expected an integer in [0, {num_classes})"),
                })
            } else {
                Ok(v as usize)
            }
        })
        .collect()
}

impl FeatureBundle {
    /// Assemble a bundle from in-memory arrays, checking every structural
    /// invariant except logit consistency.
    pub fn from_parts(
        mut manifest: Manifest,
        image: Vec<Tensor>,
        text: Vec<Tensor>,
        logits: Vec<Tensor>,
        labels: Vec<usize>,
    ) -> Result<Self> {
        if manifest.arrays.is_empty() {
            manifest.assign_default_arrays();
        }
        manifest.validate()?;
        let nb = manifest.backbones.len();
        if image.len() != nb || text.len() != nb || logits.len() != nb {
            return Err(Error::Shape(format!(
                "expected {nb} backbone blocks for image, text and logits"
            )));
        }
        let (n, m, c) = (
            manifest.num_samples,
            manifest.num_prompts,
            manifest.num_classes,
        );
        for (b, desc) in manifest.backbones.iter().enumerate() {
            let d = desc.feature_dim;
            image[b].expect_shape(&[n, d], &image_role(&desc.id))?;
            text[b].expect_shape(&[m, c, d], &text_role(&desc.id))?;
            logits[b].expect_shape(&[n, m, c], &logits_role(&desc.id))?;
            for (what, t) in [("image", &image[b]), ("text", &text[b]), ("logits", &logits[b])] {
                if !t.is_finite() {
                    return Err(Error::NumericDomain {
                        context: format!("{what} array of backbone `{}`", desc.id),
                    });
                }
            }
            for i in 0..n {
                if l2_norm(image[b].row(i)) <= 0.0 {
                    return Err(Error::Integrity(format!(
                        "image feature of sample {i} under `{}` has zero norm",
                        desc.id
                    )));
                }
            }
            for (r, row) in text[b].data().chunks(d).enumerate() {
                if l2_norm(row) <= 0.0 {
                    return Err(Error::Integrity(format!(
                        "text feature (prompt {}, class {}) under `{}` has zero norm",
                        r / c,
                        r % c,
                        desc.id
                    )));
                }
            }
        }
        if labels.len() != n {
            return Err(Error::Shape(format!("{} labels for {n} samples", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Integrity(format!("label {bad} out of range for {c} classes")));
        }
        Ok(Self {
            manifest,
            image,
            text,
            logits,
            labels,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn num_samples(&self) -> usize {
        self.manifest.num_samples
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes
    }

    pub fn num_prompts(&self) -> usize {
        self.manifest.num_prompts
    }

    pub fn num_backbones(&self) -> usize {
        self.manifest.backbones.len()
    }

    pub fn num_slots(&self) -> usize {
        self.manifest.num_slots()
    }

    pub fn backbone_dims(&self) -> Vec<usize> {
        self.manifest.backbones.iter().map(|b| b.feature_dim).collect()
    }

    pub fn temperature(&self) -> f64 {
        self.manifest.temperature
    }

    pub fn image(&self, backbone: usize) -> &Tensor {
        &self.image[backbone]
    }

    pub fn images(&self) -> &[Tensor] {
        &self.image
    }

    pub fn text(&self, backbone: usize) -> &Tensor {
        &self.text[backbone]
    }

    pub fn texts(&self) -> &[Tensor] {
        &self.text
    }

    pub fn logits(&self, backbone: usize) -> &Tensor {
        &self.logits[backbone]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn splits(&self) -> &Splits {
        &self.manifest.splits
    }

    /// Stack the per-backbone logits of `samples` into `N × 2M × C` in slot order.
    pub fn slot_logits(&self, samples: &[usize]) -> Tensor {
        let (m, c) = (self.num_prompts(), self.num_classes());
        let slots = self.num_slots();
        let mut data = Vec::with_capacity(samples.len() * slots * c);
        for &i in samples {
            for l in &self.logits {
                data.extend_from_slice(&l.row(i)[..m * c]);
            }
        }
        Tensor::new(vec![samples.len(), slots, c], data).expect("slot logits shape")
    }

    /// Compare stored logits against `cos(image, text) / τ`.
    pub fn logit_consistency(&self) -> LogitConsistency {
        let (m, c) = (self.num_prompts(), self.num_classes());
        let tau = self.temperature();
        let mut worst = LogitConsistency {
            max_abs_deviation: 0.0,
            worst: None,
        };
        for b in 0..self.num_backbones() {
            let d = self.manifest.backbones[b].feature_dim;
            for i in 0..self.num_samples() {
                let z = self.image[b].row(i);
                let row = self.logits[b].row(i);
                for p in 0..m {
                    for k in 0..c {
                        let t = &self.text[b].row(p)[k * d..(k + 1) * d];
                        let expected = cosine(z, t).expect("norms checked at construction") / tau;
                        let dev = (row[p * c + k] - expected).abs();
                        if worst.worst.is_none() || dev > worst.max_abs_deviation {
                            worst = LogitConsistency {
                                max_abs_deviation: dev,
                                worst: Some((b, i, p, k)),
                            };
                        }
                    }
                }
            }
        }
        worst
    }

    pub fn verify_logits(&self) -> Result<()> {
        let report = self.logit_consistency();
        if report.passes() {
            return Ok(());
        }
        let (b, i, m, c) = report.worst.expect("failing report names an entry");
        Err(Error::Integrity(format!(
            "logit of backbone `{}`, sample {i}, prompt {m}, class {c} deviates from cos/τ by {:.3e}",
            self.manifest.backbones[b].id, report.max_abs_deviation
        )))
    }

    /// Write the manifest and every array into `dir` (created if needed).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = self.manifest.clone();
        manifest.assign_default_arrays();
        for (b, desc) in manifest.backbones.iter().enumerate() {
            for (role, t) in [
                (image_role(&desc.id), &self.image[b]),
                (text_role(&desc.id), &self.text[b]),
                (logits_role(&desc.id), &self.logits[b]),
            ] {
                io::write_f32(&dir.join(&manifest.arrays[&role].file), t.data())?;
            }
        }
        let labels: Vec<f64> = self.labels.iter().map(|&y| y as f64).collect();
        io::write_f32(&dir.join(&manifest.arrays[LABELS_ROLE].file), &labels)?;
        io::write_json(&dir.join(MANIFEST_FILE), &manifest)
    }

    /// A bundle holding only `samples`, with the class axis narrowed to
    /// `classes` and labels renumbered to positions in `classes`. All kept
    /// samples land in the train split.
    pub fn subset(&self, samples: &[usize], classes: &[usize]) -> Result<FeatureBundle> {
        let mut position = vec![None; self.num_classes()];
        for (p, &c) in classes.iter().enumerate() {
            if c >= self.num_classes() || position[c].is_some() {
                return Err(Error::Config(format!("class list {classes:?} is invalid")));
            }
            position[c] = Some(p);
        }
        let labels = samples
            .iter()
            .map(|&i| {
                let y = *self.labels.get(i).ok_or_else(|| {
                    Error::Config(format!("sample {i} out of range"))
                })?;
                position[y].ok_or_else(|| {
                    Error::Config(format!("sample {i} has class {y}, outside {classes:?}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        let mut manifest = self.manifest.clone();
        manifest.num_classes = classes.len();
        manifest.class_names = classes.iter().map(|&c| self.manifest.class_names[c].clone()).collect();
        manifest.prompt_texts = classes.iter().map(|&c| self.manifest.prompt_texts[c].clone()).collect();
        manifest.num_samples = samples.len();
        manifest.splits = Splits {
            train: (0..samples.len()).collect(),
            ..Default::default()
        };
        manifest.assign_default_arrays();

        let image = self.image.iter().map(|t| t.select_rows(samples)).collect();
        let text = self.text.iter().map(|t| narrow_text(t, classes)).collect();
        let logits = self
            .logits
            .iter()
            .map(|t| t.select_rows(samples).select_last(classes))
            .collect();
        FeatureBundle::from_parts(manifest, image, text, logits, labels)
    }

    pub(crate) fn replace_features(&mut self, image: Vec<Tensor>, logits: Vec<Tensor>) {
        self.image = image;
        self.logits = logits;
    }
}

/// Keep the listed classes of an `M × C × d` text tensor.
fn narrow_text(t: &Tensor, classes: &[usize]) -> Tensor {
    let (m, d) = (t.shape()[0], t.shape()[2]);
    let mut data = Vec::with_capacity(m * classes.len() * d);
    for p in 0..m {
        let row = t.row(p);
        for &c in classes {
            data.extend_from_slice(&row[c * d..(c + 1) * d]);
        }
    }
    Tensor::new(vec![m, classes.len(), d], data).expect("narrowed text shape")
}
