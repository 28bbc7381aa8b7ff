//! Derivative-free weight search on the capped simplex.
//!
//! F1 of a thresholded vote is piecewise constant in the weights, so the
//! search moves mass between pairs of models with shrinking step sizes and
//! keeps a move only when it strictly improves validation F1. It starts
//! from the projected uniform vector and from seeded Dirichlet draws, and
//! returns the best point found, which is never worse than the uniform start.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{blend, EnsembleWeights, ScoreVector};
use crate::data::Label;
use crate::error::{Error, Result};
use crate::eval::f1_score;

const STEPS: [f64; 7] = [0.5, 0.25, 0.1, 0.05, 0.02, 0.01, 0.005];
const RESTARTS: usize = 8;
const MAX_SWEEPS_PER_STEP: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizedWeights {
    pub weights: EnsembleWeights,
    pub val_f1: f64,
    /// F1 of the projected uniform starting point.
    pub uniform_f1: f64,
}

/// Euclidean projection onto `{w >= 0, sum w = 1, w[0] <= cap, w[i] <= 1}`.
///
/// The projection has the form `clip(v - theta, 0, upper)`; `theta` is
/// found by bisection on the monotone sum.
pub fn project_capped_simplex(v: &[f64], cap: f64) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::InvalidInput("cannot project an empty vector".into()));
    }
    if !(cap > 0.0 && cap <= 1.0) {
        return Err(Error::InvalidInput(format!("cap must lie in (0, 1], got {cap}")));
    }
    if v.len() == 1 && cap < 1.0 {
        return Err(Error::InvalidInput(format!(
            "a single-model roster cannot satisfy cap {cap}"
        )));
    }
    let upper = |i: usize| if i == 0 { cap } else { 1.0 };
    let mass = |theta: f64| -> f64 {
        v.iter()
            .enumerate()
            .map(|(i, x)| (x - theta).clamp(0.0, upper(i)))
            .sum()
    };
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let (mut lo, mut hi) = (min - 1.0, max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    let w: Vec<f64> = v
        .iter()
        .enumerate()
        .map(|(i, x)| (x - theta).clamp(0.0, upper(i)))
        .collect();
    Ok(w)
}

struct Objective<'a> {
    scores: &'a [ScoreVector],
    labels: &'a [Label],
}

impl Objective<'_> {
    fn f1(&self, w: &[f64]) -> f64 {
        let preds: Vec<Label> = self
            .scores
            .iter()
            .map(|s| Label::from_prob(blend(s.values(), w), 0.5))
            .collect();
        f1_score(&preds, self.labels).expect("lengths checked")
    }
}

fn search(obj: &Objective, start: Vec<f64>, cap: f64) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut w = start;
    let mut best = obj.f1(&w);
    for step in STEPS {
        for _ in 0..MAX_SWEEPS_PER_STEP {
            let mut improved = false;
            for from in 0..n {
                for to in 0..n {
                    if from == to {
                        continue;
                    }
                    let room = if to == 0 { cap - w[0] } else { 1.0 - w[to] };
                    let t = step.min(w[from]).min(room);
                    if t <= 0.0 {
                        continue;
                    }
                    let mut cand = w.clone();
                    cand[from] -= t;
                    cand[to] += t;
                    let f = obj.f1(&cand);
                    if f > best {
                        best = f;
                        w = cand;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
    (w, best)
}

fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// Maximizes validation F1 of [`super::ml_vote`] over feasible weights.
pub fn optimize_weights(val_scores: &[ScoreVector], val_labels: &[Label], cap: f64, seed: u64) -> Result<OptimizedWeights> {
    if val_scores.len() != val_labels.len() {
        return Err(Error::LengthMismatch {
            left: val_scores.len(),
            right: val_labels.len(),
        });
    }
    let positives = val_labels.iter().filter(|l| l.is_positive()).count();
    if positives == 0 || positives == val_labels.len() {
        return Err(Error::DegenerateData(format!(
            "weight search needs both classes in validation; got {positives} positive of {}",
            val_labels.len()
        )));
    }
    let n = val_scores[0].len();
    if let Some(bad) = val_scores.iter().find(|s| s.len() != n) {
        return Err(Error::Dimension {
            expected: n,
            got: bad.len(),
        });
    }
    let obj = Objective {
        scores: val_scores,
        labels: val_labels,
    };

    let uniform = project_capped_simplex(&vec![1.0 / n as f64; n], cap)?;
    let uniform_f1 = obj.f1(&uniform);
    let (mut best_w, mut best_f1) = search(&obj, uniform, cap);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RESTARTS {
        let start = project_capped_simplex(&dirichlet(&mut rng, n), cap)?;
        let (w, f) = search(&obj, start, cap);
        if f > best_f1 {
            best_w = w;
            best_f1 = f;
        }
    }
    debug_assert!(best_f1 >= uniform_f1);
    Ok(OptimizedWeights {
        weights: EnsembleWeights::new(best_w, cap)?,
        val_f1: best_f1,
        uniform_f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_respects_the_cap() {
        let w = project_capped_simplex(&[0.9, 0.05, 0.05], 0.5).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12);
        assert!((w[1] - 0.25).abs() < 1e-12 && (w[2] - 0.25).abs() < 1e-12);
        let w = project_capped_simplex(&[3.0, -1.0, 0.2], 1.0).unwrap();
        assert_eq!(w[1], 0.0);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(project_capped_simplex(&[1.0], 0.5).is_err());
        assert_eq!(project_capped_simplex(&[0.2], 1.0).unwrap(), vec![1.0]);
    }

    #[test]
    fn identical_models_give_the_single_model_f1() {
        let raw = [0.9, 0.2, 0.7, 0.4, 0.6, 0.1];
        let labels = [
            Label::Suicide,
            Label::NonSuicide,
            Label::NonSuicide,
            Label::Suicide,
            Label::Suicide,
            Label::NonSuicide,
        ];
        let scores: Vec<ScoreVector> = raw.iter().map(|p| ScoreVector::new(vec![*p; 3]).unwrap()).collect();
        let single: Vec<Label> = raw.iter().map(|p| Label::from_prob(*p, 0.5)).collect();
        let r = optimize_weights(&scores, &labels, 0.5, 4).unwrap();
        let expected = f1_score(&single, &labels).unwrap();
        assert!((r.val_f1 - expected).abs() < 1e-12);
        assert_eq!(r.val_f1, r.uniform_f1);
    }

    #[test]
    fn single_class_validation_is_degenerate() {
        let scores = vec![ScoreVector::new(vec![0.5, 0.5]).unwrap(); 3];
        assert!(matches!(
            optimize_weights(&scores, &[Label::Suicide; 3], 0.5, 0),
            Err(Error::DegenerateData(_))
        ));
    }

    #[test]
    fn finds_the_informative_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let labels: Vec<Label> = (0..120).map(|i| if i % 3 == 0 { Label::Suicide } else { Label::NonSuicide }).collect();
        let scores: Vec<ScoreVector> = labels
            .iter()
            .map(|l| {
                let good = if l.is_positive() { 0.9 } else { 0.1 };
                ScoreVector::new(vec![rng.random(), good, rng.random()]).unwrap()
            })
            .collect();
        let r = optimize_weights(&scores, &labels, 0.5, 1).unwrap();
        assert_eq!(r.val_f1, 1.0);
        assert!(r.val_f1 >= r.uniform_f1);
    }
}
