//! Hashed-unigram logistic regression: the built-in Stage-1 scorer.
//!
//! Tokens are lowercased whitespace runs with leading/trailing punctuation
//! stripped, hashed (FNV-1a) into `2^buckets_log2` buckets. Per-post count
//! vectors are L2-normalized, which bounds the loss curvature so that
//! full-batch gradient descent with step halving never increases the loss.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Scorer;
use crate::data::{Dataset, Label, Probability};
use crate::error::{Error, Result};
use crate::model_io::{decode_model, encode_model, read_model_file, write_model_file};
use crate::util::{fnv1a64, sigmoid};

pub const BASELINE_KIND: &str = "hashed_unigram_logistic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub buckets_log2: u32,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            buckets_log2: 18,
            epochs: 100,
            learning_rate: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineScorer {
    buckets_log2: u32,
    weights: Vec<f64>,
    bias: f64,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Params {
    buckets_log2: u32,
    bias: f64,
    /// (bucket, weight) for every non-zero weight, ascending by bucket.
    weights: Vec<(u32, f64)>,
}

type SparseRow = Vec<(u32, f64)>;

fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|t| t.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|t| !t.is_empty())
}

fn featurize(text: &str, buckets_log2: u32) -> SparseRow {
    let mask = (1u64 << buckets_log2) - 1;
    let mut idx: Vec<u32> = tokens(text)
        .map(|t| (fnv1a64(t.as_bytes()) & mask) as u32)
        .collect();
    idx.sort_unstable();
    let mut row: SparseRow = Vec::new();
    for i in idx {
        match row.last_mut() {
            Some((j, c)) if *j == i => *c += 1.0,
            _ => row.push((i, 1.0)),
        }
    }
    let norm = row.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        for (_, c) in &mut row {
            *c /= norm;
        }
    }
    row
}

fn margin(weights: &[f64], bias: f64, row: &SparseRow) -> f64 {
    bias + row.iter().map(|(i, x)| weights[*i as usize] * x).sum::<f64>()
}

/// Numerically stable log(1 + e^z).
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn mean_loss(weights: &[f64], bias: f64, rows: &[SparseRow], ys: &[f64]) -> f64 {
    rows.iter()
        .zip(ys)
        .map(|(r, y)| {
            let z = margin(weights, bias, r);
            // -[y log s(z) + (1-y) log(1-s(z))]
            softplus(z) - y * z
        })
        .sum::<f64>()
        / rows.len() as f64
}

/// Trains the baseline and returns it with the training loss after each
/// epoch (index 0 is the loss at initialization).
pub fn train_baseline_traced(train: &Dataset, cfg: &BaselineConfig) -> Result<(BaselineScorer, Vec<f64>)> {
    if !(1..=26).contains(&cfg.buckets_log2) {
        return Err(Error::InvalidInput(format!("buckets_log2 must be in 1..=26, got {}", cfg.buckets_log2)));
    }
    if !(cfg.learning_rate > 0.0) {
        return Err(Error::InvalidInput("learning_rate must be positive".into()));
    }
    let labels = train.gold_labels()?;
    let n_pos = labels.iter().filter(|l| l.is_positive()).count();
    if n_pos == 0 || n_pos == labels.len() {
        return Err(Error::DegenerateData(format!(
            "training set `{}` needs both labels ({} positive of {})",
            train.name(),
            n_pos,
            labels.len()
        )));
    }

    let rows: Vec<SparseRow> = train
        .posts()
        .iter()
        .map(|p| featurize(p.text(), cfg.buckets_log2))
        .collect();
    let ys: Vec<f64> = labels.iter().map(|l| f64::from(l.as_int())).collect();
    let mut active: Vec<u32> = rows.iter().flat_map(|r| r.iter().map(|(i, _)| *i)).collect();
    active.sort_unstable();
    active.dedup();

    let dim = 1usize << cfg.buckets_log2;
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut grad = vec![0.0; dim];
    let mut step = cfg.learning_rate;
    let mut loss = mean_loss(&weights, bias, &rows, &ys);
    let mut trace = vec![loss];
    let n = rows.len() as f64;

    for _ in 0..cfg.epochs {
        for &i in &active {
            grad[i as usize] = 0.0;
        }
        let mut grad_b = 0.0;
        for (r, y) in rows.iter().zip(&ys) {
            let err = sigmoid(margin(&weights, bias, r)) - y;
            grad_b += err;
            for (i, x) in r {
                grad[*i as usize] += err * x;
            }
        }
        grad_b /= n;

        // step halving until the loss does not increase
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand = weights.clone();
            for &i in &active {
                cand[i as usize] -= step * grad[i as usize] / n;
            }
            let cand_b = bias - step * grad_b;
            let cand_loss = mean_loss(&cand, cand_b, &rows, &ys);
            if cand_loss <= loss {
                weights = cand;
                bias = cand_b;
                loss = cand_loss;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        trace.push(loss);
        if !accepted {
            break;
        }
    }

    Ok((
        BaselineScorer {
            buckets_log2: cfg.buckets_log2,
            weights,
            bias,
            seed: cfg.seed,
        },
        trace,
    ))
}

/// Full-batch gradient descent on the mean logistic loss from zero weights.
/// Deterministic: identical data and config give identical weights.
pub fn train_baseline(train: &Dataset, cfg: &BaselineConfig) -> Result<BaselineScorer> {
    train_baseline_traced(train, cfg).map(|(m, _)| m)
}

impl BaselineScorer {
    pub fn probability(&self, text: &str) -> f64 {
        let row = featurize(text, self.buckets_log2);
        sigmoid(margin(&self.weights, self.bias, &row))
    }

    pub fn predict(&self, text: &str) -> Label {
        Label::from_prob(self.probability(text), 0.5)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let params = Params {
            buckets_log2: self.buckets_log2,
            bias: self.bias,
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (i as u32, *w))
                .collect(),
        };
        encode_model(BASELINE_KIND, 1 << self.buckets_log2, self.seed, &params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let kind_dim = |b: u32| 1usize << b;
        // dimension is checked against the buckets recorded in params
        let probe: (u64, Params) = {
            let v: serde_json::Value =
                serde_json::from_slice(bytes).map_err(|e| Error::ModelFile(format!("not a model file: {e}")))?;
            let b = v["params"]["buckets_log2"]
                .as_u64()
                .filter(|b| (1..=26).contains(b))
                .ok_or_else(|| Error::ModelFile("missing or invalid buckets_log2".into()))?;
            decode_model(bytes, BASELINE_KIND, kind_dim(b as u32))?
        };
        let (seed, params) = probe;
        let dim = kind_dim(params.buckets_log2);
        let mut weights = vec![0.0; dim];
        for (i, w) in params.weights {
            let slot = weights
                .get_mut(i as usize)
                .ok_or_else(|| Error::ModelFile(format!("bucket {i} out of range")))?;
            *slot = w;
        }
        Ok(BaselineScorer {
            buckets_log2: params.buckets_log2,
            weights,
            bias: params.bias,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_model_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_model_file(path)?)
    }
}

impl Scorer for BaselineScorer {
    fn score(&self, text: &str) -> Result<Probability> {
        Probability::new(self.probability(text))
    }
}
