//! Stratified k-fold grid search.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{train, Hyperparams, ModelKind};
use crate::analysis::FeatureVector;
use crate::data::Label;
use crate::error::{Error, Result};
use crate::eval::f1_score;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub best: Hyperparams,
    pub mean_f1: f64,
    /// Mean validation F1 of every grid point, in grid order.
    pub grid_f1: Vec<f64>,
}

/// Fold index per sample. Each class is shuffled under `seed` and dealt
/// round-robin, so fold class counts differ by at most one.
pub fn stratified_folds(labels: &[Label], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; labels.len()];
    let mut next = 0;
    for class in [Label::Suicide, Label::NonSuicide] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        for i in idx {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    assignment
}

/// Returns the grid point with the highest mean validation F1; ties keep
/// the earliest point.
pub fn cross_validate(
    kind: ModelKind,
    rows: &[FeatureVector],
    labels: &[Label],
    folds: usize,
    grid: &[Hyperparams],
    seed: u64,
) -> Result<CvResult> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    if folds < 2 || folds > rows.len() {
        return Err(Error::InvalidInput(format!(
            "cross-validation needs 2 <= folds <= {} samples, got {folds}",
            rows.len()
        )));
    }
    if grid.is_empty() {
        return Err(Error::InvalidInput("empty hyperparameter grid".into()));
    }
    let assignment = stratified_folds(labels, folds, seed);
    let mut grid_f1 = Vec::with_capacity(grid.len());
    for hp in grid {
        let mut total = 0.0;
        for k in 0..folds {
            let (mut tx, mut ty, mut vx, mut vy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for (i, (x, y)) in rows.iter().zip(labels).enumerate() {
                if assignment[i] == k {
                    vx.push(x.clone());
                    vy.push(*y);
                } else {
                    tx.push(x.clone());
                    ty.push(*y);
                }
            }
            let model = train(kind, &tx, &ty, hp, seed)?;
            let preds = vx
                .iter()
                .map(|x| model.predict(x.as_ref()))
                .collect::<Result<Vec<_>>>()?;
            total += f1_score(&preds, &vy)?;
        }
        grid_f1.push(total / folds as f64);
    }
    let mut best = 0;
    for (i, f) in grid_f1.iter().enumerate() {
        if *f > grid_f1[best] {
            best = i;
        }
    }
    Ok(CvResult {
        best: grid[best].clone(),
        mean_f1: grid_f1[best],
        grid_f1,
    })
}
