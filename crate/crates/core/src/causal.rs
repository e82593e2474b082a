//! Exhaustive enumeration over finite structural causal models of the
//! form `T → S ← B`, `S → Z`, `S → Y`, `Z → Y`, with joint
//! `P(t) P(b) P(s|t,b) P(z|s) P(y|s,z)`.
//!
//! [`do_z`] is the interventional distribution obtained by truncating
//! `P(z|s)`. [`adjustment_formula`] is the observational estimand
//! `Σ_t Σ_b P(t) P(b) P(y|z,t,b)`. The two agree when `S` is a function
//! of `(T, B)`; with a stochastic `S` the path `Z ← S → Y` stays open
//! given `(T, B)` and they differ in general. [`backdoor_on_s`] adjusts
//! on `S` itself and always matches [`do_z`].

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::Rng;

const SLICE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Cardinalities {
    pub t: usize,
    pub b: usize,
    pub s: usize,
    pub z: usize,
    pub y: usize,
}

/// Conditional tables stored row-major with the conditioned variable last.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteScm {
    pub card: Cardinalities,
    pub p_t: Vec<f64>,
    pub p_b: Vec<f64>,
    /// `[t][b][s]`
    pub p_s_given_tb: Vec<f64>,
    /// `[s][z]`
    pub p_z_given_s: Vec<f64>,
    /// `[s][z][y]`
    pub p_y_given_sz: Vec<f64>,
}

fn random_simplex(rng: &mut Rng, k: usize) -> Vec<f64> {
    // strictly positive entries keep every conditional defined
    let raw: Vec<f64> = (0..k).map(|_| 0.05 + rng.uniform()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

fn random_table(rng: &mut Rng, rows: usize, k: usize) -> Vec<f64> {
    (0..rows).flat_map(|_| random_simplex(rng, k)).collect()
}

fn check_slices(name: &str, table: &[f64], rows: usize, k: usize) -> Result<()> {
    if table.len() != rows * k {
        return Err(Error::Integrity(format!(
            "{name} has {} entries, expected {}",
            table.len(),
            rows * k
        )));
    }
    for (r, slice) in table.chunks(k).enumerate() {
        if slice.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::Integrity(format!("{name} slice {r} has a negative or non-finite entry")));
        }
        let sum: f64 = slice.iter().sum();
        if (sum - 1.0).abs() > SLICE_TOLERANCE {
            return Err(Error::Integrity(format!("{name} slice {r} sums to {sum}")));
        }
    }
    Ok(())
}

/// Alternate spelling used by the CLI and FFI docs.
pub type DiscreteSCM = DiscreteScm;

impl DiscreteScm {
    /// Every table drawn from normalized positive uniforms.
    pub fn random(card: Cardinalities, rng: &mut Rng) -> Self {
        Self {
            card,
            p_t: random_simplex(rng, card.t),
            p_b: random_simplex(rng, card.b),
            p_s_given_tb: random_table(rng, card.t * card.b, card.s),
            p_z_given_s: random_table(rng, card.s, card.z),
            p_y_given_sz: random_table(rng, card.s * card.z, card.y),
        }
    }

    /// Random cardinalities in `2..=max_card` followed by [`Self::random`].
    pub fn random_with_max(max_card: usize, rng: &mut Rng) -> Self {
        let mut draw = || 2 + rng.below(max_card.max(2) - 1);
        let card = Cardinalities {
            t: draw(),
            b: draw(),
            s: draw(),
            z: draw(),
            y: draw(),
        };
        Self::random(card, rng)
    }

    /// Like [`Self::random`] but with `S` a deterministic function of `(T, B)`.
    pub fn random_deterministic_semantics(card: Cardinalities, rng: &mut Rng) -> Self {
        let mut scm = Self::random(card, rng);
        for row in scm.p_s_given_tb.chunks_mut(card.s) {
            let pick = rng.below(card.s);
            row.iter_mut().enumerate().for_each(|(s, p)| *p = f64::from(u8::from(s == pick)));
        }
        scm
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.card;
        if [c.t, c.b, c.s, c.z, c.y].contains(&0) {
            return Err(Error::Integrity("every cardinality must be positive".into()));
        }
        check_slices("P(t)", &self.p_t, 1, c.t)?;
        check_slices("P(b)", &self.p_b, 1, c.b)?;
        check_slices("P(s|t,b)", &self.p_s_given_tb, c.t * c.b, c.s)?;
        check_slices("P(z|s)", &self.p_z_given_s, c.s, c.z)?;
        check_slices("P(y|s,z)", &self.p_y_given_sz, c.s * c.z, c.y)
    }

    fn p_s(&self, t: usize, b: usize, s: usize) -> f64 {
        self.p_s_given_tb[(t * self.card.b + b) * self.card.s + s]
    }

    fn p_z(&self, s: usize, z: usize) -> f64 {
        self.p_z_given_s[s * self.card.z + z]
    }

    fn p_y(&self, s: usize, z: usize, y: usize) -> f64 {
        self.p_y_given_sz[(s * self.card.z + z) * self.card.y + y]
    }

    /// Full joint `P(t, b, s, z, y)`, indexed `[t][b][s][z][y]`.
    pub fn joint(&self) -> Vec<f64> {
        let c = self.card;
        let mut out = Vec::with_capacity(c.t * c.b * c.s * c.z * c.y);
        for t in 0..c.t {
            for b in 0..c.b {
                for s in 0..c.s {
                    for z in 0..c.z {
                        for y in 0..c.y {
                            out.push(self.p_t[t] * self.p_b[b] * self.p_s(t, b, s) * self.p_z(s, z) * self.p_y(s, z, y));
                        }
                    }
                }
            }
        }
        out
    }

    fn check_z(&self, z: usize) -> Result<()> {
        self.validate()?;
        if z >= self.card.z {
            return Err(Error::Integrity(format!("z = {z} out of range {}", self.card.z)));
        }
        Ok(())
    }
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-10 || p.iter().any(|&v| v < 0.0) {
        return Err(Error::Integrity(format!("result is not a distribution (sum {sum})")));
    }
    Ok(())
}

/// `P(y | do(z)) = Σ_t Σ_b Σ_s P(t) P(b) P(s|t,b) P(y|s,z)`.
pub fn do_z(scm: &DiscreteScm, z: usize) -> Result<Vec<f64>> {
    scm.check_z(z)?;
    let c = scm.card;
    let mut out = vec![0.0; c.y];
    for t in 0..c.t {
        for b in 0..c.b {
            for s in 0..c.s {
                let w = scm.p_t[t] * scm.p_b[b] * scm.p_s(t, b, s);
                for (y, o) in out.iter_mut().enumerate() {
                    *o += w * scm.p_y(s, z, y);
                }
            }
        }
    }
    check_distribution(&out)?;
    Ok(out)
}

/// `Σ_t Σ_b P(t) P(b) P(y | z, t, b)`, with the conditional read off the
/// observational joint.
pub fn adjustment_formula(scm: &DiscreteScm, z: usize) -> Result<Vec<f64>> {
    scm.check_z(z)?;
    let c = scm.card;
    let joint = scm.joint();
    let at = |t: usize, b: usize, s: usize, y: usize| joint[(((t * c.b + b) * c.s + s) * c.z + z) * c.y + y];
    let mut out = vec![0.0; c.y];
    for t in 0..c.t {
        for b in 0..c.b {
            let mut p_tbzy = vec![0.0; c.y];
            for s in 0..c.s {
                for (y, v) in p_tbzy.iter_mut().enumerate() {
                    *v += at(t, b, s, y);
                }
            }
            let p_tbz: f64 = p_tbzy.iter().sum();
            if p_tbz <= 0.0 {
                return Err(Error::UndefinedConditional(format!(
                    "P(z={z}, t={t}, b={b}) = 0"
                )));
            }
            for (o, v) in out.iter_mut().zip(&p_tbzy) {
                *o += scm.p_t[t] * scm.p_b[b] * v / p_tbz;
            }
        }
    }
    check_distribution(&out)?;
    Ok(out)
}

/// `Σ_s P(s) P(y | z, s)` from the observational joint.
pub fn backdoor_on_s(scm: &DiscreteScm, z: usize) -> Result<Vec<f64>> {
    scm.check_z(z)?;
    let c = scm.card;
    let joint = scm.joint();
    let mut p_s = vec![0.0; c.s];
    let mut p_szy = vec![0.0; c.s * c.y];
    for t in 0..c.t {
        for b in 0..c.b {
            for s in 0..c.s {
                for zz in 0..c.z {
                    for y in 0..c.y {
                        let v = joint[(((t * c.b + b) * c.s + s) * c.z + zz) * c.y + y];
                        p_s[s] += v;
                        if zz == z {
                            p_szy[s * c.y + y] += v;
                        }
                    }
                }
            }
        }
    }
    let mut out = vec![0.0; c.y];
    for s in 0..c.s {
        let p_sz: f64 = p_szy[s * c.y..(s + 1) * c.y].iter().sum();
        if p_sz <= 0.0 {
            return Err(Error::UndefinedConditional(format!("P(z={z}, s={s}) = 0")));
        }
        for (y, o) in out.iter_mut().enumerate() {
            *o += p_s[s] * p_szy[s * c.y + y] / p_sz;
        }
    }
    check_distribution(&out)?;
    Ok(out)
}

/// Observational `P(y | z)`.
pub fn conditional(scm: &DiscreteScm, z: usize) -> Result<Vec<f64>> {
    scm.check_z(z)?;
    let c = scm.card;
    let joint = scm.joint();
    let mut out = vec![0.0; c.y];
    for (idx, v) in joint.iter().enumerate() {
        if (idx / c.y) % c.z == z {
            out[idx % c.y] += v;
        }
    }
    let pz: f64 = out.iter().sum();
    if pz <= 0.0 {
        return Err(Error::UndefinedConditional(format!("P(z={z}) = 0")));
    }
    out.iter_mut().for_each(|v| *v /= pz);
    Ok(out)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Summary of a randomized comparison, as printed by `verify-causal`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityReport {
    pub trials: usize,
    pub seed: u64,
    pub max_card: usize,
    /// Largest `|do_z - adjustment_formula|` over every trial, z and y.
    pub max_deviation: f64,
    /// Largest `|do_z - backdoor_on_s|`.
    pub max_deviation_backdoor_s: f64,
    /// Largest `|do_z - P(y|z)|`.
    pub max_confounding_gap: f64,
}

pub fn verify_identity(trials: usize, max_card: usize, seed: u64) -> Result<IdentityReport> {
    let mut rng = Rng::new(seed);
    let mut report = IdentityReport {
        trials,
        seed,
        max_card,
        max_deviation: 0.0,
        max_deviation_backdoor_s: 0.0,
        max_confounding_gap: 0.0,
    };
    for _ in 0..trials {
        let scm = DiscreteScm::random_with_max(max_card, &mut rng);
        for z in 0..scm.card.z {
            let truth = do_z(&scm, z)?;
            report.max_deviation = report.max_deviation.max(max_abs_diff(&truth, &adjustment_formula(&scm, z)?));
            report.max_deviation_backdoor_s =
                report.max_deviation_backdoor_s.max(max_abs_diff(&truth, &backdoor_on_s(&scm, z)?));
            report.max_confounding_gap = report.max_confounding_gap.max(max_abs_diff(&truth, &conditional(&scm, z)?));
        }
    }
    Ok(report)
}

/// Search random binary SCMs for one where correlation and causal
/// effect differ by more than `gap` for some `(z, y)`.
pub fn find_confounded_witness(gap: f64, seed: u64, max_tries: usize) -> Option<(DiscreteScm, usize, f64)> {
    let mut rng = Rng::new(seed);
    let card = Cardinalities { t: 2, b: 2, s: 2, z: 2, y: 2 };
    for _ in 0..max_tries {
        let scm = DiscreteScm::random(card, &mut rng);
        for z in 0..2 {
            let d = max_abs_diff(&do_z(&scm, z).ok()?, &conditional(&scm, z).ok()?);
            if d > gap {
                return Some((scm, z, d));
            }
        }
    }
    None
}
