//! Accuracy, harmonic mean and the three transfer protocols.
//!
//! Base-to-novel scoring restricts the argmax to the columns of the
//! split's own class set, so a base sample is never scored against novel
//! columns and vice versa.

mod stats;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use stats::{ln_gamma, paired_t_test, regularized_incomplete_beta, student_t_two_tailed, PairedTTest};

use crate::ensemble::{self, argmax};
use crate::error::{Error, Result};
use crate::feature_store::{split_base_new, FeatureBundle};
use crate::networks::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    BaseToNovel,
    CrossDataset,
    DomainGen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub accuracy: f64,
    pub n_correct: usize,
    pub n_total: usize,
}

impl SplitScore {
    fn new(n_correct: usize, n_total: usize) -> Self {
        Self {
            accuracy: n_correct as f64 / n_total as f64,
            n_correct,
            n_total,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    #[serde(flatten)]
    pub splits: BTreeMap<String, SplitScore>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hm: Option<f64>,
}

pub const BASE: &str = "base";
pub const NEW: &str = "new";
pub const TARGET: &str = "target";

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::DegenerateInput("accuracy of an empty set".into()));
    }
    let correct = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

pub fn harmonic_mean(base: f64, new: f64) -> Result<f64> {
    if !(base >= 0.0 && new >= 0.0) {
        return Err(Error::DegenerateInput(format!(
            "harmonic mean of negative values {base}, {new}"
        )));
    }
    if base + new == 0.0 {
        return Err(Error::DegenerateInput("harmonic mean of two zeros".into()));
    }
    Ok(2.0 * base * new / (base + new))
}

/// Predict `samples` using only the logit columns in `classes`.
/// Returned predictions are original class indices.
pub fn predict_restricted(
    model: &Model,
    bundle: &FeatureBundle,
    samples: &[usize],
    classes: &[usize],
) -> Result<Vec<usize>> {
    model.check_structure(bundle)?;
    let images: Vec<_> = bundle.images().iter().map(|t| t.select_rows(samples)).collect();
    let slot_logits = bundle.slot_logits(samples).select_last(classes);
    let out = ensemble::forward(model, &images, slot_logits)?;
    Ok((0..samples.len())
        .map(|i| classes[argmax(out.logit_en.row(i))])
        .collect())
}

fn score(model: &Model, bundle: &FeatureBundle, samples: &[usize], classes: &[usize]) -> Result<SplitScore> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput("no samples to score".into()));
    }
    let preds = predict_restricted(model, bundle, samples, classes)?;
    let labels = bundle.labels();
    let correct = samples
        .iter()
        .zip(&preds)
        .filter(|(&i, &p)| labels[i] == p)
        .count();
    Ok(SplitScore::new(correct, samples.len()))
}

fn test_samples_in(bundle: &FeatureBundle, classes: &[usize]) -> Vec<usize> {
    let mut keep = vec![false; bundle.num_classes()];
    classes.iter().for_each(|&c| keep[c] = true);
    bundle
        .splits()
        .test
        .iter()
        .copied()
        .filter(|&i| keep[bundle.labels()[i]])
        .collect()
}

/// Accuracy on base-class and new-class test samples, each against its
/// own class columns, plus their harmonic mean.
pub fn eval_base_to_novel(model: &Model, bundle: &FeatureBundle) -> Result<EvalReport> {
    if bundle.splits().test.is_empty() {
        return Err(Error::Config("bundle has no test split".into()));
    }
    let (base, new) = split_base_new(bundle.manifest())?;
    let mut splits = BTreeMap::new();
    for (name, classes) in [(BASE, &base), (NEW, &new)] {
        let samples = test_samples_in(bundle, classes);
        if samples.is_empty() {
            return Err(Error::Config(format!("test split has no {name}-class samples")));
        }
        splits.insert(name.to_string(), score(model, bundle, &samples, classes)?);
    }
    let hm = harmonic_mean(splits[BASE].accuracy, splits[NEW].accuracy).ok();
    Ok(EvalReport {
        task: Task::BaseToNovel,
        splits,
        hm: Some(hm.unwrap_or(0.0)),
    })
}

/// Plain accuracy on the target bundle's test split over all its classes.
pub fn eval_transfer(model: &Model, target: &FeatureBundle, task: Task) -> Result<EvalReport> {
    if task == Task::BaseToNovel {
        return Err(Error::Config("eval_transfer is for cross-dataset or domain tasks".into()));
    }
    model.check_structure(target)?;
    let samples = target.splits().test.clone();
    if samples.is_empty() {
        return Err(Error::Config("target bundle has no test split".into()));
    }
    let classes: Vec<usize> = (0..target.num_classes()).collect();
    let mut splits = BTreeMap::new();
    splits.insert(TARGET.to_string(), score(model, target, &samples, &classes)?);
    Ok(EvalReport {
        task,
        splits,
        hm: None,
    })
}

/// Pool several runs of the same protocol: counts are summed, so each
/// split's accuracy is the run mean when runs share a test set.
pub fn average(reports: &[EvalReport]) -> Result<EvalReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::DegenerateInput("no reports to average".into()))?;
    let mut splits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in reports {
        if r.task != first.task || r.splits.keys().ne(first.splits.keys()) {
            return Err(Error::Config("reports describe different protocols".into()));
        }
        for (name, s) in &r.splits {
            let e = splits.entry(name.clone()).or_default();
            e.0 += s.n_correct;
            e.1 += s.n_total;
        }
    }
    let splits: BTreeMap<String, SplitScore> = splits
        .into_iter()
        .map(|(k, (c, t))| (k, SplitScore::new(c, t)))
        .collect();
    let hm = match (splits.get(BASE), splits.get(NEW)) {
        (Some(b), Some(n)) => Some(harmonic_mean(b.accuracy, n.accuracy).unwrap_or(0.0)),
        _ => None,
    };
    Ok(EvalReport {
        task: first.task,
        splits,
        hm,
    })
}

/// One table row per dataset, accuracies in percent with two decimals.
/// Base-to-novel rows fill `base,new,hm`; transfer rows fill `accuracy`.
pub fn write_table_csv<W: Write>(rows: &[(String, EvalReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "task", "base", "new", "hm", "accuracy"])?;
    let pct = |v: Option<f64>| v.map(|x| format!("{:.2}", 100.0 * x)).unwrap_or_default();
    for (name, r) in rows {
        let task = serde_json::to_value(r.task)?;
        w.write_record([
            name.clone(),
            task.as_str().unwrap_or_default().to_string(),
            pct(r.splits.get(BASE).map(|s| s.accuracy)),
            pct(r.splits.get(NEW).map(|s| s.accuracy)),
            pct(r.hm),
            pct(r.splits.get(TARGET).map(|s| s.accuracy)),
        ])?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::{synth_bundle, SynthSpec};
    use crate::numerics::Rng;

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0, 3, 0], &[1, 2, 3, 4]).unwrap(), 0.5);
        assert!(matches!(accuracy(&[], &[]), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn harmonic_mean_values() {
        assert!((harmonic_mean(83.85, 77.00).unwrap() - 80.28).abs() < 0.01);
        assert!((harmonic_mean(86.35, 79.08).unwrap() - 82.56).abs() < 0.01);
        assert!((harmonic_mean(0.4, 0.4).unwrap() - 0.4).abs() < 1e-15);
        assert!(harmonic_mean(0.0, 0.0).is_err());
        assert_eq!(harmonic_mean(0.0, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn harmonic_mean_below_arithmetic_mean() {
        for i in 1..40 {
            for j in 1..40 {
                let (a, b) = (i as f64 / 40.0, j as f64 / 40.0);
                let h = harmonic_mean(a, b).unwrap();
                if i == j {
                    assert!((h - a).abs() < 1e-15);
                } else {
                    assert!(h < 0.5 * (a + b));
                }
            }
        }
    }

    /// A model whose generator puts all weight on one slot and whose
    /// logits for that slot always favor class `k`.
    #[test]
    fn fixed_class_model_scores_class_frequency() {
        let spec = SynthSpec::tiny();
        let mut bundle = synth_bundle(&spec, 7).unwrap();
        let k = 1;
        let mut logits = Vec::new();
        for b in 0..bundle.num_backbones() {
            let mut l = bundle.logits(b).clone();
            for v in l.data_mut().chunks_mut(bundle.num_classes()) {
                v.fill(0.0);
                v[k] = 1.0;
            }
            logits.push(l);
        }
        let image = bundle.images().to_vec();
        bundle.replace_features(image, logits);
        let model = Model::init(&bundle, None, &mut Rng::new(0)).unwrap();
        let r = eval_base_to_novel(&model, &bundle).unwrap();

        let (base, _) = split_base_new(bundle.manifest()).unwrap();
        let base_samples = test_samples_in(&bundle, &base);
        let freq = base_samples.iter().filter(|&&i| bundle.labels()[i] == k).count() as f64
            / base_samples.len() as f64;
        assert!((r.splits[BASE].accuracy - freq).abs() < 1e-15);
        // new columns all tie at zero, so the lowest new class wins
        let new_samples = test_samples_in(&bundle, &[2, 3]);
        let freq2 = new_samples.iter().filter(|&&i| bundle.labels()[i] == 2).count() as f64
            / new_samples.len() as f64;
        assert!((r.splits[NEW].accuracy - freq2).abs() < 1e-15);
        let hm = r.hm.unwrap();
        assert!((hm - harmonic_mean(freq, freq2).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn restricted_predictions_stay_in_class_set() {
        let bundle = synth_bundle(&SynthSpec::tiny(), 7).unwrap();
        let model = Model::init(&bundle, None, &mut Rng::new(0)).unwrap();
        let all: Vec<usize> = (0..bundle.num_samples()).collect();
        let preds = predict_restricted(&model, &bundle, &all, &[2, 3]).unwrap();
        assert!(preds.iter().all(|p| [2, 3].contains(p)));
    }

    #[test]
    fn report_json_has_flat_keys() {
        let bundle = synth_bundle(&SynthSpec::tiny(), 7).unwrap();
        let model = Model::init(&bundle, None, &mut Rng::new(0)).unwrap();
        let r = eval_base_to_novel(&model, &bundle).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in ["task", "base", "new", "hm"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let s = &r.splits[BASE];
        assert_eq!(s.accuracy, s.n_correct as f64 / s.n_total as f64);
        let back: EvalReport = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn transfer_rejects_structure_mismatch() {
        let bundle = synth_bundle(&SynthSpec::tiny(), 7).unwrap();
        let model = Model::init(&bundle, None, &mut Rng::new(0)).unwrap();
        let other = synth_bundle(&SynthSpec::new(64, 4, 2, vec![16, 16], 4.0), 7).unwrap();
        assert!(matches!(
            eval_transfer(&model, &other, Task::CrossDataset),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn average_pools_counts() {
        let mk = |c: usize| EvalReport {
            task: Task::DomainGen,
            splits: [(TARGET.to_string(), SplitScore::new(c, 10))].into(),
            hm: None,
        };
        let avg = average(&[mk(5), mk(7), mk(9)]).unwrap();
        assert!((avg.splits[TARGET].accuracy - 0.7).abs() < 1e-15);
    }

    #[test]
    fn csv_layout() {
        let b2n = EvalReport {
            task: Task::BaseToNovel,
            splits: [
                (BASE.to_string(), SplitScore::new(8385, 10000)),
                (NEW.to_string(), SplitScore::new(77, 100)),
            ]
            .into(),
            hm: Some(harmonic_mean(0.8385, 0.77).unwrap()),
        };
        let mut buf = Vec::new();
        write_table_csv(&[("Average".into(), b2n)], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "dataset,task,base,new,hm,accuracy\nAverage,base_to_novel,83.85,77.00,80.28,\n"
        );
    }
}
