//! Stage-1 routing, Stage-2 voting, and the ensemble weight search.

mod optimize;
mod run;
mod sweep;

use serde::{Deserialize, Serialize};

use crate::data::{token_length, Label, Post, Probability};
use crate::error::{Error, Result};
use crate::scorers::Verdict;

pub use optimize::{optimize_weights, project_capped_simplex, OptimizedWeights};
pub use run::{run_cascade, write_predictions, CascadeOutcome, FeatureSource, Provenance, Stage2};
pub use sweep::{sweep_thresholds, SweepGrid, SweepPoint, SweepResult};

/// Accept band and length limit for Stage 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoutingConfig {
    /// Accept as non-suicide when `p <= tau_low`.
    pub tau_low: f64,
    /// Accept as suicide when `p >= tau_high`.
    pub tau_high: f64,
    /// Posts longer than this many whitespace tokens always escalate.
    pub max_tokens: usize,
}

impl Default for RoutingConfig {
    fn default() -> Self {
        RoutingConfig {
            tau_low: 0.005,
            tau_high: 0.995,
            max_tokens: 256,
        }
    }
}

impl RoutingConfig {
    pub fn new(tau_low: f64, tau_high: f64, max_tokens: usize) -> Result<Self> {
        let cfg = RoutingConfig {
            tau_low,
            tau_high,
            max_tokens,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.tau_low && self.tau_low < self.tau_high && self.tau_high <= 1.0) {
            return Err(Error::Config(format!(
                "routing needs 0 <= tau_low < tau_high <= 1, got {} and {}",
                self.tau_low, self.tau_high
            )));
        }
        if self.max_tokens == 0 {
            return Err(Error::Config("routing max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EscalationReason {
    AmbiguousProb,
    TooLong,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision")]
pub enum RoutingDecision {
    Accept { label: Label, prob: Probability },
    Escalate { reason: EscalationReason, prob: Probability },
}

impl RoutingDecision {
    pub fn is_accept(&self) -> bool {
        matches!(self, RoutingDecision::Accept { .. })
    }

    pub fn prob(&self) -> Probability {
        match self {
            RoutingDecision::Accept { prob, .. } | RoutingDecision::Escalate { prob, .. } => *prob,
        }
    }
}

pub fn route(post: &Post, stage1_prob: Probability, cfg: &RoutingConfig) -> RoutingDecision {
    route_tokens(token_length(post.text()), stage1_prob, cfg)
}

/// [`route`] on a precomputed token length.
pub fn route_tokens(tokens: usize, prob: Probability, cfg: &RoutingConfig) -> RoutingDecision {
    let p = prob.value();
    let short = tokens <= cfg.max_tokens;
    let confident = if p >= cfg.tau_high {
        Some(Label::Suicide)
    } else if p <= cfg.tau_low {
        Some(Label::NonSuicide)
    } else {
        None
    };
    match (short, confident) {
        (true, Some(label)) => RoutingDecision::Accept { label, prob },
        (true, None) => RoutingDecision::Escalate {
            reason: EscalationReason::AmbiguousProb,
            prob,
        },
        (false, Some(_)) => RoutingDecision::Escalate {
            reason: EscalationReason::TooLong,
            prob,
        },
        (false, None) => RoutingDecision::Escalate {
            reason: EscalationReason::Both,
            prob,
        },
    }
}

/// Equal-weight majority over non-abstaining verdicts; an exact tie
/// (including all abstentions) goes to `tie_breaker`.
pub fn llm_vote(verdicts: &[Verdict], tie_breaker: Label) -> Result<Label> {
    if verdicts.is_empty() {
        return Err(Error::InvalidInput("llm_vote needs at least one verdict".into()));
    }
    let pos = verdicts.iter().filter(|v| v.label() == Some(Label::Suicide)).count();
    let neg = verdicts.iter().filter(|v| v.label() == Some(Label::NonSuicide)).count();
    Ok(match pos.cmp(&neg) {
        std::cmp::Ordering::Greater => Label::Suicide,
        std::cmp::Ordering::Less => Label::NonSuicide,
        std::cmp::Ordering::Equal => tie_breaker,
    })
}

/// Tolerance on the weight sum for [`EnsembleWeights::new`].
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-6;

/// Convex weights over a model roster whose first slot is the Stage-1 scorer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    weights: Vec<f64>,
    cap: f64,
}

impl EnsembleWeights {
    pub fn new(weights: Vec<f64>, cap: f64) -> Result<Self> {
        check_feasible(&weights, cap, WEIGHT_SUM_TOLERANCE)?;
        Ok(EnsembleWeights { weights, cap })
    }

    pub fn uniform(n: usize, cap: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("empty roster".into()));
        }
        EnsembleWeights::new(project_capped_simplex(&vec![1.0 / n as f64; n], cap)?, cap)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn cap(&self) -> f64 {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Non-negative finite weights summing to 1 within `sum_tolerance`, with
/// the lead weight at most `cap`.
pub fn check_feasible(weights: &[f64], cap: f64, sum_tolerance: f64) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidInput("empty weight vector".into()));
    }
    if !(cap > 0.0 && cap <= 1.0) {
        return Err(Error::InvalidInput(format!("cap must lie in (0, 1], got {cap}")));
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::InvalidInput(format!("weight {w} is negative or not finite")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > sum_tolerance {
        return Err(Error::InvalidInput(format!("weights sum to {sum}, not 1")));
    }
    if weights[0] > cap + 1e-9 {
        return Err(Error::InvalidInput(format!("lead weight {} exceeds cap {cap}", weights[0])));
    }
    Ok(())
}

/// Per-model probabilities in roster order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ScoreVector(Vec<f64>);

impl ScoreVector {
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(p) = scores.iter().find(|p| p.is_nan() || !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidProbability(*p));
        }
        Ok(ScoreVector(scores))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for ScoreVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        ScoreVector::new(v)
    }
}

impl From<ScoreVector> for Vec<f64> {
    fn from(s: ScoreVector) -> Self {
        s.0
    }
}

/// Weighted soft vote; suicide when the blended probability is `>= threshold`.
pub fn ml_vote(scores: &ScoreVector, w: &EnsembleWeights, threshold: f64) -> Result<(Label, Probability)> {
    if scores.len() != w.len() {
        return Err(Error::Dimension {
            expected: w.len(),
            got: scores.len(),
        });
    }
    let p = blend(scores.values(), w.weights()).clamp(0.0, 1.0);
    Ok((Label::from_prob(p, threshold), Probability::new(p)?))
}

pub(crate) fn blend(scores: &[f64], weights: &[f64]) -> f64 {
    scores.iter().zip(weights).map(|(p, w)| p * w).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64) -> Probability {
        Probability::new(x).unwrap()
    }

    #[test]
    fn routing_examples() {
        let cfg = RoutingConfig::default();
        assert_eq!(
            route_tokens(50, p(0.999), &cfg),
            RoutingDecision::Accept {
                label: Label::Suicide,
                prob: p(0.999)
            }
        );
        assert!(matches!(
            route_tokens(50, p(0.5), &cfg),
            RoutingDecision::Escalate {
                reason: EscalationReason::AmbiguousProb,
                ..
            }
        ));
        assert!(matches!(
            route_tokens(400, p(0.999), &cfg),
            RoutingDecision::Escalate {
                reason: EscalationReason::TooLong,
                ..
            }
        ));
        assert!(matches!(
            route_tokens(400, p(0.5), &cfg),
            RoutingDecision::Escalate {
                reason: EscalationReason::Both,
                ..
            }
        ));
    }

    #[test]
    fn routing_boundaries_are_inclusive() {
        let cfg = RoutingConfig::default();
        assert!(matches!(
            route_tokens(256, p(0.995), &cfg),
            RoutingDecision::Accept {
                label: Label::Suicide,
                ..
            }
        ));
        assert!(matches!(
            route_tokens(256, p(0.005), &cfg),
            RoutingDecision::Accept {
                label: Label::NonSuicide,
                ..
            }
        ));
        assert!(!route_tokens(257, p(0.005), &cfg).is_accept());
    }

    #[test]
    fn route_counts_whitespace_tokens() {
        let cfg = RoutingConfig::new(0.1, 0.9, 3).unwrap();
        let short = Post::new("a", "one two  three", None).unwrap();
        let long = Post::new("b", "one two three four", None).unwrap();
        assert!(route(&short, p(0.95), &cfg).is_accept());
        assert!(!route(&long, p(0.95), &cfg).is_accept());
    }

    #[test]
    fn invalid_routing_configs() {
        assert!(RoutingConfig::new(0.5, 0.5, 10).is_err());
        assert!(RoutingConfig::new(-0.1, 0.5, 10).is_err());
        assert!(RoutingConfig::new(0.1, 1.5, 10).is_err());
        assert!(RoutingConfig::new(0.1, 0.9, 0).is_err());
    }

    #[test]
    fn vote_examples() {
        use Verdict::*;
        let s = Label::Suicide;
        let n = Label::NonSuicide;
        assert_eq!(llm_vote(&[Suicide, Suicide, NonSuicide], n).unwrap(), s);
        assert_eq!(llm_vote(&[Suicide, NonSuicide, Abstain("x".into())], n).unwrap(), n);
        let abstain = || Abstain(String::new());
        assert_eq!(llm_vote(&[abstain(), abstain(), abstain()], s).unwrap(), s);
        assert!(llm_vote(&[], s).is_err());
    }

    #[test]
    fn ml_vote_examples() {
        let w = EnsembleWeights::new(vec![0.5, 0.5], 0.5).unwrap();
        let (label, prob) = ml_vote(&ScoreVector::new(vec![1.0, 1.0]).unwrap(), &w, 0.5).unwrap();
        assert_eq!((label, prob.value()), (Label::Suicide, 1.0));
        let (label, prob) = ml_vote(&ScoreVector::new(vec![0.9, 0.1]).unwrap(), &w, 0.5).unwrap();
        assert_eq!((label, prob.value()), (Label::Suicide, 0.5));

        let lead = EnsembleWeights::new(vec![1.0, 0.0], 1.0).unwrap();
        let (label, prob) = ml_vote(&ScoreVector::new(vec![0.3, 0.99]).unwrap(), &lead, 0.5).unwrap();
        assert_eq!((label, prob.value()), (Label::NonSuicide, 0.3));

        assert!(matches!(
            ml_vote(&ScoreVector::new(vec![0.3]).unwrap(), &lead, 0.5),
            Err(Error::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn feasibility_rules() {
        assert!(check_feasible(&[0.5, 0.5], 0.5, 1e-6).is_ok());
        assert!(check_feasible(&[0.6, 0.4], 0.5, 1e-6).is_err());
        assert!(check_feasible(&[0.5, 0.6], 0.5, 1e-6).is_err());
        assert!(check_feasible(&[-0.1, 1.1], 0.5, 1e-6).is_err());
        assert!(check_feasible(&[0.5, 0.5], 0.0, 1e-6).is_err());
        assert!(ScoreVector::new(vec![1.2]).is_err());
        assert_eq!(EnsembleWeights::uniform(4, 0.5).unwrap().weights(), &[0.25; 4]);
        let w = EnsembleWeights::uniform(2, 0.3).unwrap();
        assert!((w.weights()[0] - 0.3).abs() < 1e-12 && (w.weights()[1] - 0.7).abs() < 1e-12);
    }
}
