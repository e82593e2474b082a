use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::ArrayEntry;

pub const DEFAULT_TEMPERATURE: f64 = 0.01;

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneDesc {
    pub id: String,
    pub feature_dim: usize,
}

/// Sample-index splits plus optional explicit base/new class sets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    #[serde(default)]
    pub val: Vec<usize>,
    #[serde(default)]
    pub test: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_classes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_classes: Option<Vec<usize>>,
}

/// The JSON document at the root of every bundle directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset_name: String,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub num_prompts: usize,
    /// `prompt_texts[c][m]` is prompt `m` of class `c`.
    pub prompt_texts: Vec<Vec<String>>,
    /// Index of the plain "A photo of a {class}." prompt within each class.
    pub general_prompt: usize,
    pub num_samples: usize,
    pub backbones: Vec<BackboneDesc>,
    pub splits: Splits,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    pub arrays: BTreeMap<String, ArrayEntry>,
}

pub fn image_role(backbone: &str) -> String {
    format!("image.{backbone}")
}

pub fn text_role(backbone: &str) -> String {
    format!("text.{backbone}")
}

pub fn logits_role(backbone: &str) -> String {
    format!("logits.{backbone}")
}

pub const LABELS_ROLE: &str = "labels";

impl Manifest {
    /// Total width of the concatenated per-backbone features.
    pub fn concat_dim(&self) -> usize {
        self.backbones.iter().map(|b| b.feature_dim).sum()
    }

    /// Number of ensemble slots: backbones times prompts.
    pub fn num_slots(&self) -> usize {
        self.backbones.len() * self.num_prompts
    }

    /// Expected shape of every array role.
    pub fn expected_arrays(&self) -> BTreeMap<String, Vec<usize>> {
        let (n, m, c) = (self.num_samples, self.num_prompts, self.num_classes);
        let mut out = BTreeMap::new();
        for b in &self.backbones {
            out.insert(image_role(&b.id), vec![n, b.feature_dim]);
            out.insert(text_role(&b.id), vec![m, c, b.feature_dim]);
            out.insert(logits_role(&b.id), vec![n, m, c]);
        }
        out.insert(LABELS_ROLE.to_string(), vec![n]);
        out
    }

    /// Fill `arrays` with the conventional `<role>.f32` file names.
    pub fn assign_default_arrays(&mut self) {
        self.arrays = self
            .expected_arrays()
            .into_iter()
            .map(|(role, shape)| {
                let entry = ArrayEntry::for_role(&role, shape);
                (role, entry)
            })
            .collect();
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Manifest(msg));
        if self.num_classes == 0 {
            return bad("num_classes must be positive".into());
        }
        if self.class_names.len() != self.num_classes {
            return bad(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            ));
        }
        if self.num_prompts == 0 {
            return bad("num_prompts must be at least 1".into());
        }
        if self.general_prompt >= self.num_prompts {
            return bad(format!(
                "general_prompt {} out of range for {} prompts",
                self.general_prompt, self.num_prompts
            ));
        }
        if self.prompt_texts.len() != self.num_classes {
            return bad(format!(
                "prompt_texts lists {} classes, expected {}",
                self.prompt_texts.len(),
                self.num_classes
            ));
        }
        if let Some((c, p)) = self
            .prompt_texts
            .iter()
            .enumerate()
            .find(|(_, p)| p.len() != self.num_prompts)
        {
            return bad(format!(
                "class {c} has {} prompts, expected {}",
                p.len(),
                self.num_prompts
            ));
        }
        if self.backbones.is_empty() {
            return bad("at least one backbone is required".into());
        }
        let mut ids = BTreeSet::new();
        for b in &self.backbones {
            if b.feature_dim == 0 {
                return bad(format!("backbone `{}` has feature_dim 0", b.id));
            }
            if b.id.is_empty() || b.id.contains(['/', '\\']) {
                return bad(format!("backbone id `{}` is not a valid file stem", b.id));
            }
            if !ids.insert(b.id.as_str()) {
                return bad(format!("duplicate backbone id `{}`", b.id));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        self.validate_splits()?;

        let expected = self.expected_arrays();
        for role in self.arrays.keys() {
            if !expected.contains_key(role) {
                return bad(format!("unknown array role `{role}`"));
            }
        }
        for (role, shape) in &expected {
            match self.arrays.get(role) {
                None => return bad(format!("missing array role `{role}`")),
                Some(entry) if &entry.shape != shape => {
                    return Err(Error::Format {
                        role: role.clone(),
                        detail: format!("declared shape {:?}, expected {shape:?}", entry.shape),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    fn validate_splits(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for (name, idx) in [
            ("train", &self.splits.train),
            ("val", &self.splits.val),
            ("test", &self.splits.test),
        ] {
            for &i in idx {
                if i >= self.num_samples {
                    return Err(Error::Manifest(format!(
                        "{name} split references sample {i} of {}",
                        self.num_samples
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Manifest(format!(
                        "sample {i} appears twice across splits"
                    )));
                }
            }
        }
        match (&self.splits.base_classes, &self.splits.new_classes) {
            (None, None) => Ok(()),
            (Some(base), Some(new)) => {
                let mut classes = BTreeSet::new();
                for &c in base.iter().chain(new) {
                    if c >= self.num_classes {
                        return Err(Error::Manifest(format!(
                            "class split references class {c} of {}",
                            self.num_classes
                        )));
                    }
                    if !classes.insert(c) {
                        return Err(Error::Manifest(format!(
                            "class {c} is both base and new, or listed twice"
                        )));
                    }
                }
                Ok(())
            }
            _ => Err(Error::Manifest(
                "base_classes and new_classes must be given together".into(),
            )),
        }
    }
}

/// Base and new class sets: the manifest's own when present, otherwise
/// the first `ceil(C/2)` classes are base and the rest new.
pub fn split_base_new(manifest: &Manifest) -> Result<(Vec<usize>, Vec<usize>)> {
    if let (Some(base), Some(new)) = (&manifest.splits.base_classes, &manifest.splits.new_classes)
    {
        return Ok((base.clone(), new.clone()));
    }
    let c = manifest.num_classes;
    if c < 2 {
        return Err(Error::Config(format!(
            "base/new split needs at least 2 classes, manifest has {c}"
        )));
    }
    let cut = c.div_ceil(2);
    Ok(((0..cut).collect(), (cut..c).collect()))
}
