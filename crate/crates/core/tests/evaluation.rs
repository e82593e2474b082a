mod common;

use ample::evaluator::{eval_base_to_novel, eval_transfer, harmonic_mean, Task};
use ample::feature_store::{add_feature_noise, synth_bundle, SynthSpec};
use ample::networks::Model;
use ample::numerics::Rng;
use ample::trainer::{fit, initial_state, TrainConfig};

fn trained(bundle: &ample::feature_store::FeatureBundle) -> Model {
    fit(bundle, &TrainConfig::default()).unwrap().model
}

#[test]
fn separable_world_scores_high() {
    let b = synth_bundle(&SynthSpec::new(128, 4, 3, vec![16, 16], 10.0), 7).unwrap();
    let r = eval_base_to_novel(&trained(&b), &b).unwrap();
    assert!(r.splits["base"].accuracy >= 0.9 && r.splits["new"].accuracy >= 0.9, "{r:?}");
    let hm = harmonic_mean(r.splits["base"].accuracy, r.splits["new"].accuracy).unwrap();
    assert_eq!(r.hm, Some(hm));
}

#[test]
fn self_transfer_equals_in_domain_accuracy() {
    let b = common::tiny();
    let model = trained(&b);
    let transfer = eval_transfer(&model, &b, Task::CrossDataset).unwrap();
    let samples = b.splits().test.clone();
    let logits = ample::ensemble::forward(
        &model,
        &b.images().iter().map(|t| t.select_rows(&samples)).collect::<Vec<_>>(),
        b.slot_logits(&samples),
    )
    .unwrap()
    .logit_en;
    let predictions = ample::ensemble::predict(&logits);
    let labels: Vec<usize> = samples.iter().map(|&i| b.labels()[i]).collect();
    let in_domain = ample::evaluator::accuracy(&predictions, &labels).unwrap();
    assert_eq!(transfer.splits["target"].accuracy, in_domain);
}

#[test]
fn noisy_target_lands_between_chance_and_in_domain() {
    let mut spec = SynthSpec::new(400, 4, 3, vec![16, 16], 3.0);
    spec.prompt_bias = 1.5;
    let b = synth_bundle(&spec, 3).unwrap();
    let model = fit(&b, &TrainConfig { classes: ample::trainer::ClassScope::All, ..TrainConfig::default() }).unwrap().model;
    let clean = eval_transfer(&model, &b, Task::DomainGen).unwrap().splits["target"].accuracy;
    let noisy_bundle = add_feature_noise(&b, 0.5, 9).unwrap();
    let noisy = eval_transfer(&model, &noisy_bundle, Task::DomainGen).unwrap().splits["target"].accuracy;
    assert!(0.25 < noisy && noisy < clean, "chance 0.25, noisy {noisy}, clean {clean}");
}

#[test]
fn transfer_rejects_prompt_count_mismatch() {
    let model = trained(&common::tiny());
    let other = synth_bundle(&SynthSpec::new(64, 4, 2, vec![16, 16], 4.0), 7).unwrap();
    assert!(matches!(
        eval_transfer(&model, &other, Task::CrossDataset),
        Err(ample::Error::Config(_))
    ));
}

#[test]
fn untrained_model_is_a_valid_baseline() {
    let b = common::tiny();
    let model = initial_state(&b, &TrainConfig::default()).unwrap().model;
    let other = Model::init(&b, None, &mut Rng::new(99)).unwrap();
    for m in [&model, &other] {
        let r = eval_base_to_novel(m, &b).unwrap();
        assert!(r.hm.unwrap() <= 1.0);
    }
}
