//! Batch execution of the two-stage pipeline over a dataset.

use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use super::{llm_vote, ml_vote, route, EnsembleWeights, RoutingConfig, RoutingDecision, ScoreVector};
use crate::analysis::{Analyst, FeatureCache, FeatureMatrix, FeatureVector};
use crate::data::{Dataset, Label, Post, Probability};
use crate::error::{Error, Result};
use crate::mlmodels::TrainedModel;
use crate::scorers::{agent_classify, AgentPersona, ChatClient, Scorer, Verdict};
use crate::util::{parallel_map, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Accepted by the Stage-1 band.
    Stage1,
    /// Resolved by the Stage-2 pathway.
    Stage2,
    /// Escalated, but Stage 2 could not run; the Stage-1 label stands.
    Stage1Fallback,
    /// Stage 1 itself failed; the post is flagged positive for review.
    Failed,
}

/// Where the ML pathway gets feature vectors for escalated posts.
pub enum FeatureSource<'a> {
    /// A matrix aligned row-for-row with the dataset.
    Precomputed(&'a FeatureMatrix),
    /// Analyze escalated posts on demand, reusing and filling the cache.
    Lazy {
        analyst: &'a Analyst<'a>,
        cache: &'a FeatureCache,
    },
}

pub enum Stage2<'a> {
    AgentVoting {
        personas: Vec<AgentPersona>,
        client: &'a dyn ChatClient,
    },
    /// Roster slot 0 is the Stage-1 scorer, followed by `models` in order.
    MlVoting {
        models: &'a [TrainedModel],
        weights: &'a EnsembleWeights,
        features: FeatureSource<'a>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CascadeOutcome {
    pub id: String,
    pub label: Label,
    pub provenance: Provenance,
    /// `None` only when Stage 1 failed.
    pub stage1_prob: Option<f64>,
    #[serde(skip)]
    pub decision: Option<RoutingDecision>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ensemble_prob: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdicts: Option<Vec<Verdict>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl CascadeOutcome {
    fn base(post: &Post, label: Label, provenance: Provenance, decision: Option<RoutingDecision>) -> Self {
        CascadeOutcome {
            id: post.id().to_string(),
            label,
            provenance,
            stage1_prob: decision.map(|d| d.prob().value()),
            decision,
            ensemble_prob: None,
            verdicts: None,
            reason: None,
        }
    }
}

/// Scores every post with Stage 1, routes it, and resolves escalations
/// through `stage2` with at most `parallelism` concurrent posts. Per-post
/// remote failures are recorded in the outcome, never raised; the output
/// follows dataset order.
pub fn run_cascade(
    ds: &Dataset,
    stage1: &dyn Scorer,
    cfg: &RoutingConfig,
    stage2: &Stage2,
    parallelism: usize,
) -> Result<Vec<CascadeOutcome>> {
    cfg.validate()?;
    match stage2 {
        Stage2::MlVoting {
            models,
            weights,
            features,
        } => {
            if weights.len() != models.len() + 1 {
                return Err(Error::Dimension {
                    expected: models.len() + 1,
                    got: weights.len(),
                });
            }
            if let FeatureSource::Precomputed(m) = features {
                if !m.is_aligned_with(ds) {
                    return Err(Error::InvalidInput(format!(
                        "feature matrix is not aligned with dataset `{}`",
                        ds.name()
                    )));
                }
            }
        }
        Stage2::AgentVoting { personas, .. } => {
            if personas.is_empty() {
                return Err(Error::Config("agent voting needs at least one persona".into()));
            }
        }
    }

    let posts = ds.posts();
    let routed: Vec<Result<RoutingDecision>> =
        parallel_map(posts, parallelism, |_, post| Ok(route(post, stage1.score(post.text())?, cfg)));

    let escalated: Vec<usize> = routed
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r, Ok(RoutingDecision::Escalate { .. })))
        .map(|(i, _)| i)
        .collect();
    info!(
        "{}: {} of {} posts escalated to stage 2",
        ds.name(),
        escalated.len(),
        posts.len()
    );
    let resolved = parallel_map(&escalated, parallelism, |_, &i| {
        let decision = *routed[i].as_ref().expect("only routed posts escalate");
        resolve(i, &posts[i], decision, stage2)
    });

    let mut out: Vec<Option<CascadeOutcome>> = vec![None; posts.len()];
    for (i, outcome) in escalated.into_iter().zip(resolved) {
        out[i] = Some(outcome);
    }
    Ok(out
        .into_iter()
        .zip(posts.iter().zip(routed))
        .map(|(slot, (post, routed))| match (slot, routed) {
            (Some(o), _) => o,
            (None, Ok(d @ RoutingDecision::Accept { label, .. })) => {
                CascadeOutcome::base(post, label, Provenance::Stage1, Some(d))
            }
            (None, Err(e)) => {
                warn!("stage 1 failed for post {}: {e}", post.id());
                let mut o = CascadeOutcome::base(post, Label::Suicide, Provenance::Failed, None);
                o.reason = Some(e.to_string());
                o
            }
            (None, Ok(_)) => unreachable!("escalated posts are resolved above"),
        })
        .collect())
}

fn resolve(index: usize, post: &Post, decision: RoutingDecision, stage2: &Stage2) -> CascadeOutcome {
    let prob = decision.prob();
    let stage1_label = prob.label();
    match stage2 {
        Stage2::AgentVoting { personas, client } => {
            let verdicts: Vec<Verdict> = personas
                .iter()
                .map(|p| agent_classify(*client, *p, post.text()))
                .collect();
            let label = llm_vote(&verdicts, stage1_label).expect("personas checked non-empty");
            let mut o = CascadeOutcome::base(post, label, Provenance::Stage2, Some(decision));
            o.verdicts = Some(verdicts);
            o
        }
        Stage2::MlVoting {
            models,
            weights,
            features,
        } => match ml_resolve(index, post, prob, models, weights, features) {
            Ok((label, ensemble)) => {
                let mut o = CascadeOutcome::base(post, label, Provenance::Stage2, Some(decision));
                o.ensemble_prob = Some(ensemble.value());
                o
            }
            Err(e) => {
                warn!("stage 2 unavailable for post {}: {e}", post.id());
                let mut o = CascadeOutcome::base(post, stage1_label, Provenance::Stage1Fallback, Some(decision));
                o.reason = Some(e.to_string());
                o
            }
        },
    }
}

fn ml_resolve(
    index: usize,
    post: &Post,
    stage1_prob: Probability,
    models: &[TrainedModel],
    weights: &EnsembleWeights,
    features: &FeatureSource,
) -> Result<(Label, Probability)> {
    let x: FeatureVector = match features {
        FeatureSource::Precomputed(m) => m.rows()[index].clone(),
        FeatureSource::Lazy { analyst, cache } => analyst.features_cached(post.text(), cache)?,
    };
    let mut scores = Vec::with_capacity(models.len() + 1);
    scores.push(stage1_prob.value());
    for m in models {
        scores.push(m.predict_proba(x.as_ref())?.value());
    }
    ml_vote(&ScoreVector::new(scores)?, weights, 0.5)
}

/// One JSON object per line, in outcome order.
pub fn write_predictions(path: &Path, outcomes: &[CascadeOutcome]) -> Result<()> {
    let mut buf = String::new();
    for o in outcomes {
        buf.push_str(&serde_json::to_string(o).expect("outcome serializes"));
        buf.push('\n');
    }
    write_atomic(path, buf.as_bytes())
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::analysis::SIMULATED_OUTPUT;
    use crate::mlmodels::{ModelParams, Tree};
    use crate::scorers::{MockChat, MockScorer};

    fn dataset(n: usize) -> Dataset {
        let posts = (0..n)
            .map(|i| Post::new(format!("p{i}"), format!("post number {i}"), None).unwrap())
            .collect();
        Dataset::new("t", crate::data::Split::Test, posts).unwrap()
    }

    fn agents<'a>(client: &'a MockChat) -> Stage2<'a> {
        Stage2::AgentVoting {
            personas: AgentPersona::ALL.to_vec(),
            client,
        }
    }

    #[test]
    fn confident_scorer_never_reaches_stage_two() {
        let ds = dataset(20);
        let scorer = MockScorer::constant(0.999);
        let chat = MockChat::fixed("Label: non_suicide");
        let out = run_cascade(&ds, &scorer, &RoutingConfig::default(), &agents(&chat), 4).unwrap();
        assert!(out.iter().all(|o| o.provenance == Provenance::Stage1 && o.label == Label::Suicide));
        assert_eq!(chat.calls(), 0);
        assert_eq!(scorer.calls(), 20);
    }

    #[test]
    fn ambiguous_scores_go_to_the_agents() {
        let ds = dataset(10);
        let scorer = MockScorer::constant(0.5);
        let chat = MockChat::fixed("The post reads as despairing.\nLabel: suicide");
        let out = run_cascade(&ds, &scorer, &RoutingConfig::default(), &agents(&chat), 3).unwrap();
        assert!(out.iter().all(|o| o.provenance == Provenance::Stage2 && o.label == Label::Suicide));
        assert_eq!(chat.calls(), 30);
        let ids: Vec<&str> = out.iter().map(|o| o.id.as_str()).collect();
        let expected: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        assert_eq!(ids, expected.iter().map(String::as_str).collect::<Vec<_>>());
    }

    #[test]
    fn stage_two_fraction_matches_the_table() {
        let ds = dataset(100);
        let table: HashMap<String, f64> = ds
            .posts()
            .iter()
            .enumerate()
            .map(|(i, p)| (p.text().to_string(), if i % 25 < 8 { 0.4 } else { 0.001 }))
            .collect();
        let scorer = MockScorer::table(table, 0.0);
        let chat = MockChat::fixed("Label: suicide");
        let out = run_cascade(&ds, &scorer, &RoutingConfig::default(), &agents(&chat), 8).unwrap();
        let stage2 = out.iter().filter(|o| o.provenance == Provenance::Stage2).count();
        assert_eq!(stage2, 32);
        assert_eq!(chat.calls(), 32 * 3);
    }

    #[test]
    fn stage_one_failure_is_flagged_not_dropped() {
        let ds = dataset(3);
        let scorer = MockScorer::new(|t| {
            if t.ends_with('1') {
                Err(Error::Transport("down".into()))
            } else {
                Probability::new(0.0)
            }
        });
        let chat = MockChat::fixed("Label: suicide");
        let out = run_cascade(&ds, &scorer, &RoutingConfig::default(), &agents(&chat), 2).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[1].provenance, Provenance::Failed);
        assert_eq!(out[1].label, Label::Suicide);
        assert!(out[1].reason.as_deref().unwrap().contains("down"));
        assert_eq!(out[0].provenance, Provenance::Stage1);
    }

    fn one_stump_forest() -> TrainedModel {
        TrainedModel::from_parts(
            crate::mlmodels::ModelKind::RandomForest,
            0,
            ModelParams::Forest {
                trees: vec![Tree::stump(0, 0.5, 0.0, 1.0)],
            },
        )
        .unwrap()
    }

    #[test]
    fn lazy_features_are_fetched_only_for_escalations() {
        let ds = dataset(6);
        let table: HashMap<String, f64> = [("post number 2".to_string(), 0.6), ("post number 4".to_string(), 0.3)]
            .into_iter()
            .collect();
        let scorer = MockScorer::table(table, 0.0);
        // the bundled analysis has suicide_intent = true
        let chat = MockChat::fixed(SIMULATED_OUTPUT);
        let analyst = Analyst::new(&chat, 1);
        let cache = FeatureCache::in_memory();
        let models = vec![one_stump_forest()];
        let weights = EnsembleWeights::new(vec![0.4, 0.6], 0.5).unwrap();
        let stage2 = Stage2::MlVoting {
            models: &models,
            weights: &weights,
            features: FeatureSource::Lazy {
                analyst: &analyst,
                cache: &cache,
            },
        };
        let out = run_cascade(&ds, &scorer, &RoutingConfig::default(), &stage2, 4).unwrap();
        assert_eq!(chat.calls(), 2);
        assert_eq!(cache.len(), 2);
        assert_eq!(out[4].provenance, Provenance::Stage2);
        assert_eq!(out[4].label, Label::Suicide);
        assert!((out[4].ensemble_prob.unwrap() - (0.4 * 0.3 + 0.6)).abs() < 1e-12);
        assert_eq!(out[0].provenance, Provenance::Stage1);
    }

    #[test]
    fn analyst_failure_falls_back_to_stage_one() {
        let ds = dataset(2);
        let scorer = MockScorer::constant(0.7);
        let chat = MockChat::new(|_, _| Err(Error::Transport("no route".into())));
        let analyst = Analyst::new(&chat, 2);
        let cache = FeatureCache::in_memory();
        let models = vec![one_stump_forest()];
        let weights = EnsembleWeights::uniform(2, 0.5).unwrap();
        let stage2 = Stage2::MlVoting {
            models: &models,
            weights: &weights,
            features: FeatureSource::Lazy {
                analyst: &analyst,
                cache: &cache,
            },
        };
        let out = run_cascade(&ds, &scorer, &RoutingConfig::default(), &stage2, 1).unwrap();
        for o in &out {
            assert_eq!(o.provenance, Provenance::Stage1Fallback);
            assert_eq!(o.label, Label::Suicide);
            assert!(o.reason.is_some());
        }
    }

    #[test]
    fn roster_size_is_checked() {
        let ds = dataset(1);
        let models = vec![one_stump_forest()];
        let weights = EnsembleWeights::uniform(3, 0.5).unwrap();
        let m = FeatureMatrix::default();
        let stage2 = Stage2::MlVoting {
            models: &models,
            weights: &weights,
            features: FeatureSource::Precomputed(&m),
        };
        let r = run_cascade(&ds, &MockScorer::constant(0.5), &RoutingConfig::default(), &stage2, 1);
        assert!(matches!(r, Err(Error::Dimension { expected: 2, got: 3 })));
    }

    #[test]
    fn predictions_serialize_with_optional_fields() {
        let post = Post::new("x", "text", None).unwrap();
        let d = RoutingDecision::Accept {
            label: Label::NonSuicide,
            prob: Probability::new(0.001).unwrap(),
        };
        let o = CascadeOutcome::base(&post, Label::NonSuicide, Provenance::Stage1, Some(d));
        assert_eq!(
            serde_json::to_string(&o).unwrap(),
            r#"{"id":"x","label":"non_suicide","provenance":"stage1","stage1_prob":0.001}"#
        );
    }
}
