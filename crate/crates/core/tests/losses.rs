mod common;

use ample::losses::cmi;
use ample::numerics::{Rng, Tensor};

fn random_batch(rng: &mut Rng) -> (Tensor, Tensor, Vec<usize>) {
    let n = 1 + rng.below(8);
    let d = 1 + rng.below(6);
    let c = 1 + rng.below(3);
    let zr = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap();
    let zir = Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap();
    let labels = (0..n).map(|_| rng.below(c)).collect();
    (zr, zir, labels)
}

#[test]
fn cmi_matches_literal_loops() {
    let mut rng = Rng::new(2024);
    for _ in 0..500 {
        let (zr, zir, labels) = random_batch(&mut rng);
        let fast = cmi(&zr, &zir, &labels).unwrap().loss;
        let slow = common::cmi_literal(&zr, &zir, &labels);
        assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}");
    }
}

#[test]
fn cmi_vanishes_for_class_constant_irrelevant_features() {
    let mut rng = Rng::new(5);
    let labels = vec![0, 1, 0, 1, 2, 2];
    let zr = Tensor::new(vec![6, 3], (0..18).map(|_| rng.normal()).collect()).unwrap();
    let per_class: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.normal()).collect()).collect();
    let zir = Tensor::new(vec![6, 3], labels.iter().flat_map(|&y| per_class[y].clone()).collect()).unwrap();
    assert!(cmi(&zr, &zir, &labels).unwrap().loss.abs() < 1e-15);
    assert!(common::cmi_literal(&zr, &zir, &labels).abs() < 1e-15);
}
