//! Linear learners on standardized features.

use serde::{Deserialize, Serialize};

use crate::util::sigmoid;

/// Per-feature affine standardization fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let d = rows[0].as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r.as_ref()) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r.as_ref()).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let scale = var
            .into_iter()
            .map(|v| if v > 1e-24 { v.sqrt() } else { 1.0 })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    w.iter().zip(x).map(|(a, b)| a * b).sum()
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean logistic loss plus `l2/2 * |w|^2` (bias unregularized).
/// `ys` are 0/1 targets.
pub fn logistic_objective<R: AsRef<[f64]>>(w: &[f64], b: f64, xs: &[R], ys: &[f64], l2: f64) -> f64 {
    let n = xs.len() as f64;
    let data: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let z = dot(w, x.as_ref()) + b;
            softplus(z) - y * z
        })
        .sum::<f64>()
        / n;
    data + 0.5 * l2 * dot(w, w)
}

/// Analytic gradient of [`logistic_objective`]: `(dJ/dw, dJ/db)`.
pub fn logistic_gradient<R: AsRef<[f64]>>(w: &[f64], b: f64, xs: &[R], ys: &[f64], l2: f64) -> (Vec<f64>, f64) {
    let n = xs.len() as f64;
    let mut gw: Vec<f64> = w.iter().map(|wi| l2 * wi).collect();
    let mut gb = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let x = x.as_ref();
        let err = (sigmoid(dot(w, x) + b) - y) / n;
        gb += err;
        for (g, xi) in gw.iter_mut().zip(x) {
            *g += err * xi;
        }
    }
    (gw, gb)
}

/// Full-batch gradient descent from zero.
pub fn fit_logistic<R: AsRef<[f64]>>(xs: &[R], ys: &[f64], lr: f64, l2: f64, epochs: usize) -> (Vec<f64>, f64) {
    let d = xs[0].as_ref().len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for _ in 0..epochs {
        let (gw, gb) = logistic_gradient(&w, b, xs, ys, l2);
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= lr * gi;
        }
        b -= lr * gb;
    }
    (w, b)
}

/// Subgradient descent on `lambda/2 * |w|^2 + mean hinge` with step
/// `lr / sqrt(t + 1)`. Targets are mapped to {-1, +1} internally.
pub fn fit_linear_svm<R: AsRef<[f64]>>(xs: &[R], ys: &[f64], lr: f64, lambda: f64, epochs: usize) -> (Vec<f64>, f64) {
    let d = xs[0].as_ref().len();
    let n = xs.len() as f64;
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    for t in 0..epochs {
        let mut gw: Vec<f64> = w.iter().map(|wi| lambda * wi).collect();
        let mut gb = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let x = x.as_ref();
            let s = if *y > 0.5 { 1.0 } else { -1.0 };
            if s * (dot(&w, x) + b) < 1.0 {
                gb -= s / n;
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g -= s * xi / n;
                }
            }
        }
        let step = lr / ((t + 1) as f64).sqrt();
        for (wi, gi) in w.iter_mut().zip(&gw) {
            *wi -= step * gi;
        }
        b -= step * gb;
    }
    (w, b)
}

pub fn linear_margin(w: &[f64], b: f64, x: &[f64]) -> f64 {
    dot(w, x) + b
}
