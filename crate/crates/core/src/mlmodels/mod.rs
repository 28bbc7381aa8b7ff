//! Classical learners over the 9-dimensional fundamental-feature space.
//!
//! Every learner is specialized to dense [`FEATURE_DIM`] inputs and is
//! deterministic given its seed. Probabilities:
//!
//! | kind | probability |
//! |---|---|
//! | logistic regression | sigmoid of the linear score |
//! | linear SVM | sigmoid of the margin (a surrogate, not calibrated) |
//! | random forest | fraction of trees voting positive |
//! | gradient-boosted trees | sigmoid of prior log-odds plus summed leaf values |

mod cv;
mod linear;
mod tree;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{FeatureVector, FEATURE_DIM};
use crate::data::{Label, Probability};
use crate::error::{Error, Result};
use crate::model_io::{decode_model, encode_model, peek_kind, read_model_file, write_model_file};
use crate::util::sigmoid;

pub use cv::{cross_validate, stratified_folds, CvResult};
pub use linear::{fit_linear_svm, fit_logistic, linear_margin, logistic_gradient, logistic_objective, Standardizer};
pub use tree::{Node, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    LogisticRegression,
    LinearSvm,
    RandomForest,
    GradientBoostedTrees,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::LogisticRegression,
        ModelKind::LinearSvm,
        ModelKind::RandomForest,
        ModelKind::GradientBoostedTrees,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LogisticRegression => "logistic_regression",
            ModelKind::LinearSvm => "linear_svm",
            ModelKind::RandomForest => "random_forest",
            ModelKind::GradientBoostedTrees => "gradient_boosted_trees",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

/// One flat parameter set; each kind reads only the fields it uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    /// Step size for the linear learners (the SVM decays it as `1/sqrt(t+1)`).
    pub learning_rate: f64,
    pub l2: f64,
    pub epochs: usize,
    pub svm_lambda: f64,
    pub n_trees: usize,
    /// Defaults to 6 for the forest and 3 for boosting.
    pub max_depth: Option<usize>,
    /// Features tried per forest split; defaults to `floor(sqrt(9)) = 3`.
    pub max_features: Option<usize>,
    pub min_samples_split: usize,
    pub n_rounds: usize,
    pub shrinkage: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            learning_rate: 0.1,
            l2: 1e-4,
            epochs: 300,
            svm_lambda: 1e-4,
            n_trees: 100,
            max_depth: None,
            max_features: None,
            min_samples_split: 2,
            n_rounds: 100,
            shrinkage: 0.1,
        }
    }
}

impl Hyperparams {
    fn depth_for(&self, kind: ModelKind) -> usize {
        self.max_depth.unwrap_or(match kind {
            ModelKind::GradientBoostedTrees => 3,
            _ => 6,
        })
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("hyperparameter {what}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.l2 >= 0.0 && self.svm_lambda >= 0.0) {
            return bad("l2/svm_lambda must be non-negative");
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return bad("shrinkage must be in (0, 1]");
        }
        if self.max_features == Some(0) {
            return bad("max_features must be at least 1");
        }
        Ok(())
    }
}

/// Largest raw Newton step a boosting leaf may take.
const MAX_LEAF_STEP: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum ModelParams {
    Linear {
        standardizer: Standardizer,
        weights: Vec<f64>,
        bias: f64,
    },
    Forest {
        trees: Vec<Tree>,
    },
    Boosted {
        base_score: f64,
        trees: Vec<Tree>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    kind: ModelKind,
    seed: u64,
    params: ModelParams,
}

impl TrainedModel {
    /// Assembles a model from explicit parameters, checking that the
    /// parameter shape fits the kind.
    pub fn from_parts(kind: ModelKind, seed: u64, params: ModelParams) -> Result<Self> {
        let ok = match (&params, kind) {
            (ModelParams::Linear { standardizer, weights, bias }, ModelKind::LogisticRegression | ModelKind::LinearSvm) => {
                weights.len() == FEATURE_DIM
                    && standardizer.mean.len() == FEATURE_DIM
                    && standardizer.scale.len() == FEATURE_DIM
                    && standardizer.scale.iter().all(|s| *s > 0.0)
                    && bias.is_finite()
            }
            (ModelParams::Forest { trees }, ModelKind::RandomForest) => {
                !trees.is_empty() && trees.iter().all(|t| t.is_well_formed(FEATURE_DIM))
            }
            (ModelParams::Boosted { base_score, trees }, ModelKind::GradientBoostedTrees) => {
                base_score.is_finite() && trees.iter().all(|t| t.is_well_formed(FEATURE_DIM))
            }
            _ => false,
        };
        if !ok {
            return Err(Error::ModelFile(format!("parameters do not form a valid `{kind}` model")));
        }
        Ok(TrainedModel { kind, seed, params })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Probability> {
        if x.len() != FEATURE_DIM {
            return Err(Error::Dimension {
                expected: FEATURE_DIM,
                got: x.len(),
            });
        }
        let p = match &self.params {
            ModelParams::Linear {
                standardizer,
                weights,
                bias,
            } => sigmoid(linear_margin(weights, *bias, &standardizer.transform(x))),
            ModelParams::Forest { trees } => {
                let votes = trees.iter().filter(|t| t.predict(x) >= 0.5).count();
                votes as f64 / trees.len() as f64
            }
            ModelParams::Boosted { base_score, trees } => {
                sigmoid(base_score + trees.iter().map(|t| t.predict(x)).sum::<f64>())
            }
        };
        Probability::new(p)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        Ok(self.predict_proba(x)?.label())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode_model(self.kind.name(), FEATURE_DIM, self.seed, &self.params)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let kind: ModelKind = peek_kind(bytes)?
            .parse()
            .map_err(|_| Error::ModelFile("not a feature-model file".into()))?;
        let (seed, params) = decode_model(bytes, kind.name(), FEATURE_DIM)?;
        TrainedModel::from_parts(kind, seed, params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_model_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        TrainedModel::from_bytes(&read_model_file(path)?)
    }
}

/// Trains one learner. Fails with `DegenerateData` unless both classes occur.
pub fn train(
    kind: ModelKind,
    rows: &[FeatureVector],
    labels: &[Label],
    hp: &Hyperparams,
    seed: u64,
) -> Result<TrainedModel> {
    if rows.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: rows.len(),
            right: labels.len(),
        });
    }
    hp.validate()?;
    let positives = labels.iter().filter(|l| l.is_positive()).count();
    if rows.len() < 2 || positives == 0 || positives == labels.len() {
        return Err(Error::DegenerateData(format!(
            "{kind} needs both classes; got {positives} positive of {}",
            labels.len()
        )));
    }
    let xs: Vec<[f64; FEATURE_DIM]> = rows.iter().map(|r| *r.values()).collect();
    let ys: Vec<f64> = labels.iter().map(|l| if l.is_positive() { 1.0 } else { 0.0 }).collect();

    let params = match kind {
        ModelKind::LogisticRegression | ModelKind::LinearSvm => {
            let standardizer = Standardizer::fit(&xs);
            let zs: Vec<Vec<f64>> = xs.iter().map(|x| standardizer.transform(x)).collect();
            let (weights, bias) = if kind == ModelKind::LogisticRegression {
                fit_logistic(&zs, &ys, hp.learning_rate, hp.l2, hp.epochs)
            } else {
                fit_linear_svm(&zs, &ys, hp.learning_rate, hp.svm_lambda, hp.epochs)
            };
            ModelParams::Linear {
                standardizer,
                weights,
                bias,
            }
        }
        ModelKind::RandomForest => train_forest(&xs, &ys, hp, seed),
        ModelKind::GradientBoostedTrees => train_boosted(&xs, &ys, hp, seed),
    };
    TrainedModel::from_parts(kind, seed, params)
}

fn train_forest(xs: &[[f64; FEATURE_DIM]], ys: &[f64], hp: &Hyperparams, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = tree::TreeParams {
        max_depth: hp.depth_for(ModelKind::RandomForest),
        min_samples_split: hp.min_samples_split,
        max_features: Some(hp.max_features.unwrap_or((FEATURE_DIM as f64).sqrt() as usize)),
    };
    let vote = |idx: &[usize]| {
        let pos = idx.iter().filter(|&&i| ys[i] > 0.5).count();
        if 2 * pos >= idx.len() {
            1.0
        } else {
            0.0
        }
    };
    let n = xs.len();
    let trees = (0..hp.n_trees.max(1))
        .map(|_| {
            let bootstrap: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            tree::grow(xs, ys, bootstrap, &params, &mut rng, &vote)
        })
        .collect();
    ModelParams::Forest { trees }
}

fn train_boosted(xs: &[[f64; FEATURE_DIM]], ys: &[f64], hp: &Hyperparams, seed: u64) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = xs.len();
    let prior = ys.iter().sum::<f64>() / n as f64;
    let base_score = (prior / (1.0 - prior)).ln();
    let params = tree::TreeParams {
        max_depth: hp.depth_for(ModelKind::GradientBoostedTrees),
        min_samples_split: hp.min_samples_split,
        max_features: hp.max_features,
    };
    let mut raw = vec![base_score; n];
    let mut trees = Vec::with_capacity(hp.n_rounds);
    for _ in 0..hp.n_rounds {
        let probs: Vec<f64> = raw.iter().map(|z| sigmoid(*z)).collect();
        let residuals: Vec<f64> = ys.iter().zip(&probs).map(|(y, p)| y - p).collect();
        let hessians: Vec<f64> = probs.iter().map(|p| p * (1.0 - p)).collect();
        let newton = |idx: &[usize]| {
            let g: f64 = idx.iter().map(|&i| residuals[i]).sum();
            let h: f64 = idx.iter().map(|&i| hessians[i]).sum();
            hp.shrinkage * (g / h.max(1e-12)).clamp(-MAX_LEAF_STEP, MAX_LEAF_STEP)
        };
        let t = tree::grow(xs, &residuals, (0..n).collect(), &params, &mut rng, &newton);
        for (z, x) in raw.iter_mut().zip(xs) {
            *z += t.predict(x);
        }
        trees.push(t);
    }
    ModelParams::Boosted { base_score, trees }
}
