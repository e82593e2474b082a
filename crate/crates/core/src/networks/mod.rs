//! The two trainable networks with explicit forward and backward passes,
//! and the checkpoint format that stores them.

mod linear;
mod redundancy;
mod weight_generator;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use linear::Linear;
pub use redundancy::{RdBlockCache, RdOutput, RedundancyBlock, RedundancyNet};
pub use weight_generator::{default_hidden_dim, WeightGenerator, WgCache};

use crate::error::{Error, Result};
use crate::feature_store::{BackboneDesc, FeatureBundle, MANIFEST_FILE};
use crate::io::{self, ArrayEntry};
use crate::numerics::{Rng, Tensor};


pub const CHECKPOINT_FORMAT: &str = "ample-checkpoint/1";

/// Weight generator and redundancy net, together with the bundle
/// structure they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub backbones: Vec<BackboneDesc>,
    pub num_prompts: usize,
    pub wg: WeightGenerator,
    pub rd: RedundancyNet,
}

impl Model {
    /// Same structure, every parameter zero. Used to accumulate gradients.
    pub fn zeros_like(&self) -> Model {
        Model {
            backbones: self.backbones.clone(),
            num_prompts: self.num_prompts,
            wg: WeightGenerator::zeros(self.wg.input_dim(), self.wg.hidden_dim(), self.wg.num_slots()),
            rd: RedundancyNet::zeros(&self.rd.dims()),
        }
    }

    /// Fresh parameters for the structure of `bundle`. The redundancy net is
    /// drawn first, then the generator, from the same stream.
    pub fn init(bundle: &FeatureBundle, hidden_dim: Option<usize>, rng: &mut Rng) -> Result<Self> {
        Self::init_for(
            bundle.manifest().backbones.clone(),
            bundle.num_prompts(),
            hidden_dim,
            rng,
        )
    }

    pub fn init_for(
        backbones: Vec<BackboneDesc>,
        num_prompts: usize,
        hidden_dim: Option<usize>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if backbones.is_empty() || num_prompts == 0 {
            return Err(Error::Config("model needs at least one backbone and prompt".into()));
        }
        let dims: Vec<usize> = backbones.iter().map(|b| b.feature_dim).collect();
        let input = dims.iter().sum();
        let hidden = hidden_dim.unwrap_or_else(|| default_hidden_dim(input));
        if hidden == 0 {
            return Err(Error::Config("hidden dimension must be positive".into()));
        }
        let rd = RedundancyNet::init(&dims, rng);
        let wg = WeightGenerator::init(input, hidden, backbones.len() * num_prompts, rng);
        Ok(Self {
            backbones,
            num_prompts,
            wg,
            rd,
        })
    }

    pub fn num_slots(&self) -> usize {
        self.backbones.len() * self.num_prompts
    }

    /// All parameter tensors: generator first, then each redundancy block.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.wg.tensors().into_iter().collect();
        v.extend(self.rd.tensors());
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.wg.tensors_mut().into_iter().collect();
        v.extend(self.rd.tensors_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.wg.param_count() + self.rd.param_count()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                flat.len(),
                self.param_count()
            )));
        }
        let mut at = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(())
    }

    /// Check that `bundle` has the backbones and prompt count this model expects.
    pub fn check_structure(&self, bundle: &FeatureBundle) -> Result<()> {
        if bundle.manifest().backbones != self.backbones {
            return Err(Error::Config(format!(
                "bundle backbones {:?} do not match model backbones {:?}",
                bundle.manifest().backbones,
                self.backbones
            )));
        }
        if bundle.num_prompts() != self.num_prompts {
            return Err(Error::Config(format!(
                "bundle has {} prompts, model was built for {}",
                bundle.num_prompts(),
                self.num_prompts
            )));
        }
        Ok(())
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("wg.W1".to_string(), &self.wg.fc1.weight),
            ("wg.b1".to_string(), &self.wg.fc1.bias),
            ("wg.W2".to_string(), &self.wg.fc2.weight),
            ("wg.b2".to_string(), &self.wg.fc2.bias),
        ];
        for (desc, block) in self.backbones.iter().zip(&self.rd.blocks) {
            out.push((format!("rd.{}.A1", desc.id), &block.fc1.weight));
            out.push((format!("rd.{}.c1", desc.id), &block.fc1.bias));
            out.push((format!("rd.{}.A2", desc.id), &block.fc2.weight));
            out.push((format!("rd.{}.c2", desc.id), &block.fc2.bias));
        }
        out
    }

    /// Write `manifest.json` plus one `<role>.f32` per parameter tensor.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut arrays = BTreeMap::new();
        for (role, t) in self.named_tensors() {
            let entry = ArrayEntry::for_role(&role, t.shape().to_vec());
            io::write_f32(&dir.join(&entry.file), t.data())?;
            arrays.insert(role, entry);
        }
        let manifest = CheckpointManifest {
            format: CHECKPOINT_FORMAT.to_string(),
            backbones: self.backbones.clone(),
            num_prompts: self.num_prompts,
            hidden_dim: self.wg.hidden_dim(),
            arrays,
        };
        io::write_json(&dir.join(MANIFEST_FILE), &manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: CheckpointManifest = io::read_json(&dir.join(MANIFEST_FILE))?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::Manifest(format!(
                "unsupported checkpoint format `{}`",
                manifest.format
            )));
        }
        let dims: Vec<usize> = manifest.backbones.iter().map(|b| b.feature_dim).collect();
        let input = dims.iter().sum();
        let mut model = Model {
            backbones: manifest.backbones.clone(),
            num_prompts: manifest.num_prompts,
            wg: WeightGenerator::zeros(input, manifest.hidden_dim, manifest.backbones.len() * manifest.num_prompts),
            rd: RedundancyNet::zeros(&dims),
        };
        let roles: Vec<(String, Vec<usize>)> = model
            .named_tensors()
            .into_iter()
            .map(|(r, t)| (r, t.shape().to_vec()))
            .collect();
        if manifest.arrays.len() != roles.len() {
            return Err(Error::Manifest(format!(
                "checkpoint lists {} arrays, expected {}",
                manifest.arrays.len(),
                roles.len()
            )));
        }
        let mut values = Vec::new();
        for (role, shape) in &roles {
            let entry = manifest
                .arrays
                .get(role)
                .ok_or_else(|| Error::Manifest(format!("checkpoint is missing `{role}`")))?;
            if &entry.shape != shape {
                return Err(Error::Format {
                    role: role.clone(),
                    detail: format!("declared shape {:?}, expected {shape:?}", entry.shape),
                });
            }
            values.extend(io::read_f32(dir, role, entry)?);
        }
        model.set_flat_params(&values)?;
        Ok(model)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointManifest {
    format: String,
    backbones: Vec<BackboneDesc>,
    num_prompts: usize,
    hidden_dim: usize,
    arrays: BTreeMap<String, ArrayEntry>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::{synth_bundle, SynthSpec};

    fn tiny() -> FeatureBundle {
        synth_bundle(&SynthSpec::tiny(), 7).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let b = tiny();
        let m1 = Model::init(&b, None, &mut Rng::new(5)).unwrap();
        let m2 = Model::init(&b, None, &mut Rng::new(5)).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.wg.hidden_dim(), 8);
        // every fan-in in the tiny model is 16 except the generator (32) and its output layer (8)
        for block in &m1.rd.blocks {
            assert!(block.fc1.weight.data().iter().all(|w| w.abs() <= 0.25));
            assert!(block.fc2.weight.data().iter().all(|w| w.abs() <= 0.25));
            assert!(block.fc1.bias.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_draws_have_zero_mean() {
        let mut rng = Rng::new(17);
        let layer = Linear::init(100, 100, &mut rng);
        let n = layer.weight.len() as f64;
        let mean: f64 = layer.weight.data().iter().sum::<f64>() / n;
        // uniform(-a, a) with a = 0.1 has sd a/sqrt(3)
        let sd = 0.1 / 3f64.sqrt();
        assert!(mean.abs() < 3.0 * sd / n.sqrt(), "mean {mean}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let b = tiny();
        let mut model = Model::init(&b, Some(3), &mut Rng::new(1)).unwrap();
        let mut flat = model.flat_params();
        crate::io::quantize_in_place(&mut flat);
        model.set_flat_params(&flat).unwrap();
        let dir = tempfile::tempdir().unwrap();
        model.save(dir.path()).unwrap();
        assert!(dir.path().join("wg.W1.f32").exists());
        assert!(dir.path().join("rd.vit-b-32.A2.f32").exists());
        assert_eq!(Model::load(dir.path()).unwrap(), model);
    }

    #[test]
    fn structure_mismatch_is_reported() {
        let b = tiny();
        let model = Model::init(&b, None, &mut Rng::new(1)).unwrap();
        model.check_structure(&b).unwrap();
        let other = synth_bundle(&SynthSpec::new(64, 4, 2, vec![16, 16], 4.0), 7).unwrap();
        assert!(matches!(model.check_structure(&other), Err(Error::Config(_))));
    }
}
