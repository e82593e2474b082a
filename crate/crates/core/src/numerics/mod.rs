//! Dense `f64` kernels shared by every other module.
//!
//! Everything here is a pure function over borrowed slices. Arrays are
//! row-major with no strided views; [`Tensor`] carries the shape.

mod rng;
mod tensor;

pub use rng::Rng;
pub use tensor::Tensor;

use crate::error::{Error, Result};

fn ensure_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericDomain {
            context: context.to_string(),
        })
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    ensure_finite(logits, "softmax")?;
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

/// `log(softmax(logits))`, evaluated through log-sum-exp.
pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| v - lse).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "cosine of vectors with lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    ensure_finite(a, "cosine")?;
    ensure_finite(b, "cosine")?;
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateVector {
            context: "cosine".into(),
        });
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn l1_norm(v: &[f64]) -> Result<f64> {
    ensure_finite(v, "l1_norm")?;
    Ok(v.iter().map(|x| x.abs()).sum())
}

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let plus = f(&probe);
            probe[i] = orig - eps;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    fn random_vec(rng: &mut Rng, len: usize) -> Vec<f64> {
        (0..len).map(|_| rng.normal()).collect()
    }

    #[test]
    fn softmax_fixed_points() {
        let p = softmax(&[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax(&[3f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn softmax_matches_naive_formula() {
        let mut rng = Rng::new(11);
        let x = random_vec(&mut rng, 5);
        let denom: f64 = x.iter().map(|v| v.exp()).sum();
        let naive: Vec<f64> = x.iter().map(|v| v.exp() / denom).collect();
        for (a, b) in softmax(&x).unwrap().iter().zip(&naive) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(
            softmax(&[0.0, f64::NAN]),
            Err(Error::NumericDomain { .. })
        ));
        assert!(softmax(&[f64::INFINITY]).is_err());
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[2.0, 0.0], &[5.0, 0.0]).unwrap(), 1.0);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateVector { .. })
        ));
        let mut rng = Rng::new(3);
        let a = random_vec(&mut rng, 8);
        let b = random_vec(&mut rng, 8);
        let mut d = 0.0;
        let (mut na, mut nb) = (0.0, 0.0);
        for i in 0..8 {
            d += a[i] * b[i];
            na += a[i] * a[i];
            nb += b[i] * b[i];
        }
        let oracle = d / (na.sqrt() * nb.sqrt());
        assert!((cosine(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn l1_cases() {
        assert_eq!(l1_norm(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(l1_norm(&[1.0, -2.0, 3.0]).unwrap(), 6.0);
        let mut rng = Rng::new(5);
        let v = random_vec(&mut rng, 16);
        let mut oracle = 0.0;
        for x in &v {
            oracle += if *x < 0.0 { -x } else { *x };
        }
        assert!((l1_norm(&v).unwrap() - oracle).abs() < 1e-12);
        assert!(l1_norm(&[f64::NAN]).is_err());
    }

    #[test]
    fn finite_diff_on_analytic_functions() {
        let g = finite_diff_grad(|x| x.iter().map(|v| v * v).sum(), &[1.0, 2.0], 1e-4);
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
        let g = finite_diff_grad(|x| x.iter().sum(), &[0.3, -7.0, 12.5], 1e-4);
        for v in g {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(x in prop::collection::vec(-1e4f64..1e4, 1..32)) {
            let s: f64 = softmax(&x).unwrap().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_shift_invariant(
            x in prop::collection::vec(-50f64..50.0, 1..16),
            c in -100f64..100.0,
        ) {
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let (a, b) = (softmax(&x).unwrap(), softmax(&shifted).unwrap());
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn cosine_scale_invariant(
            a in prop::collection::vec(0.1f64..10.0, 4),
            b in prop::collection::vec(-10f64..10.0, 4),
            lambda in 1e-3f64..1e3,
        ) {
            prop_assume!(l2_norm(&b) > 1e-6);
            let scaled: Vec<f64> = a.iter().map(|v| v * lambda).collect();
            let lhs = cosine(&a, &b).unwrap();
            let rhs = cosine(&scaled, &b).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
