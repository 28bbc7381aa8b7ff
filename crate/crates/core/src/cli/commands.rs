//! Subcommand implementations. Every artifact lands under `cfg.out`:
//!
//! ```text
//! resolved_config.toml
//! feature_cache.jsonl          (unless analyst.cache is set)
//! features/<dataset>.jsonl
//! models/baseline.json, models/<kind>.json
//! weights.json
//! routes/<dataset>.jsonl
//! predictions/<dataset>.jsonl
//! report.jsonl
//! thresholds.json
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{Pathway, PipelineConfig, MOCK_ENDPOINT};
use crate::analysis::{extract_features, Analyst, FeatureCache, FeatureMatrix};
use crate::cascade::{
    ml_vote, optimize_weights, run_cascade, sweep_thresholds, write_predictions, CascadeOutcome, EnsembleWeights,
    FeatureSource, Provenance, ScoreVector, Stage2, SweepResult,
};
use crate::data::{load_dataset, stratified_split, token_length, DataFormat, Dataset, Label, Probability, Split};
use crate::error::{Error, Result};
use crate::eval::{attach_gaps, evaluate, render_table, stage_cost_report, write_report, ReportRecord};
use crate::mlmodels::{cross_validate, train, TrainedModel};
use crate::scorers::{
    train_baseline, BaselineScorer, ChatClient, MockChat, RemoteChatClient, RemoteScorer, Scorer,
};
use crate::util::{parallel_map, write_atomic};

/// Roster name of the Stage-1 slot when it is the locally trained baseline.
pub const BASELINE_NAME: &str = "baseline";
/// Roster name of the Stage-1 slot when it is served remotely.
pub const REMOTE_SCORER_NAME: &str = "remote_scorer";

pub struct Splits {
    pub train: Option<Dataset>,
    pub val: Option<Dataset>,
    pub test: Vec<Dataset>,
}

fn load_split(path: &Path, split: Split) -> Result<Dataset> {
    load_dataset(path, DataFormat::from_path(path), split)
        .map_err(|e| Error::Config(format!("{split} split ({}): {e}", path.display())))
}

pub fn load_splits(cfg: &PipelineConfig) -> Result<Splits> {
    if let Some(source) = &cfg.data.source {
        let ds = load_dataset(source, DataFormat::from_path(source), Split::Train)?;
        let (train, val, test) = stratified_split(&ds, cfg.seed)?;
        return Ok(Splits {
            train: Some(train),
            val: Some(val),
            test: vec![test],
        });
    }
    Ok(Splits {
        train: cfg.data.train.as_deref().map(|p| load_split(p, Split::Train)).transpose()?,
        val: cfg.data.val.as_deref().map(|p| load_split(p, Split::Val)).transpose()?,
        test: cfg
            .data
            .test
            .iter()
            .map(|p| load_split(p, Split::Test))
            .collect::<Result<_>>()?,
    })
}

fn require(ds: Option<Dataset>, split: Split) -> Result<Dataset> {
    ds.ok_or_else(|| Error::Config(format!("{split} split is not configured (set data.{split} or data.source)")))
}

fn labels_of(ds: &Dataset) -> Result<Vec<Label>> {
    ds.gold_labels()
        .map_err(|e| Error::InvalidInput(format!("{} split `{}`: {e}", ds.split(), ds.name())))
}

/// Chat backend selected by an endpoint setting.
pub enum ChatBackend {
    Mock(MockChat),
    Remote(RemoteChatClient),
    /// No endpoint configured; every call fails, so only cached work succeeds.
    Missing(&'static str),
}

impl ChatClient for ChatBackend {
    fn chat(&self, system: &str, user: &str) -> Result<String> {
        match self {
            ChatBackend::Mock(m) => m.chat(system, user),
            ChatBackend::Remote(r) => r.chat(system, user),
            ChatBackend::Missing(role) => Err(Error::Transport(format!("no {role} endpoint configured"))),
        }
    }
}

pub fn analyst_backend(cfg: &PipelineConfig) -> ChatBackend {
    match cfg.analyst.endpoint.as_deref() {
        None => ChatBackend::Missing("analyst"),
        Some(MOCK_ENDPOINT) => ChatBackend::Mock(MockChat::analyst()),
        Some(url) => ChatBackend::Remote(RemoteChatClient::new(url, cfg.retry.clone())),
    }
}

/// The mock agents never commit to a label, so every escalation falls to
/// the Stage-1 tie-breaker.
pub fn agents_backend(cfg: &PipelineConfig) -> ChatBackend {
    match cfg.agents.endpoint.as_deref() {
        None => ChatBackend::Missing("agents"),
        Some(MOCK_ENDPOINT) => ChatBackend::Mock(MockChat::fixed("The mock agent offers no judgement.")),
        Some(url) => ChatBackend::Remote(RemoteChatClient::new(url, cfg.retry.clone())),
    }
}

pub enum Stage1Backend {
    Baseline(BaselineScorer),
    Remote(RemoteScorer),
}

impl Scorer for Stage1Backend {
    fn score(&self, text: &str) -> Result<Probability> {
        match self {
            Stage1Backend::Baseline(b) => b.score(text),
            Stage1Backend::Remote(r) => r.score(text),
        }
    }
}

fn stage1_name(cfg: &PipelineConfig) -> &'static str {
    if cfg.stage1.endpoint.is_some() {
        REMOTE_SCORER_NAME
    } else {
        BASELINE_NAME
    }
}

fn model_path(cfg: &PipelineConfig, name: &str) -> PathBuf {
    cfg.out.join("models").join(format!("{name}.json"))
}

fn load_stage1(cfg: &PipelineConfig) -> Result<Stage1Backend> {
    match &cfg.stage1.endpoint {
        Some(url) => Ok(Stage1Backend::Remote(RemoteScorer::new(url, cfg.retry.clone()))),
        None => {
            let path = model_path(cfg, BASELINE_NAME);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "no stage-1 endpoint and no trained baseline at {}; run `train` first",
                    path.display()
                )));
            }
            Ok(Stage1Backend::Baseline(BaselineScorer::load(&path)?))
        }
    }
}

fn open_cache(cfg: &PipelineConfig) -> Result<FeatureCache> {
    FeatureCache::open(&cfg.cache_path())
}

fn features_path(cfg: &PipelineConfig, ds: &Dataset) -> PathBuf {
    cfg.out.join("features").join(format!("{}.jsonl", ds.name()))
}

/// Cache-first extraction; the matrix file is written only on full success.
fn extract_one(cfg: &PipelineConfig, ds: &Dataset, analyst: &Analyst, cache: &FeatureCache) -> Result<FeatureMatrix> {
    let m = extract_features(ds, analyst, cache, cfg.parallelism)?;
    m.write(&features_path(cfg, ds))?;
    info!("{}: {} feature rows", ds.name(), m.len());
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractSummary {
    /// (dataset name, rows written)
    pub matrices: Vec<(String, usize)>,
}

pub fn cmd_extract(cfg: &PipelineConfig) -> Result<ExtractSummary> {
    let splits = load_splits(cfg)?;
    let datasets: Vec<Dataset> = splits.train.into_iter().chain(splits.val).chain(splits.test).collect();
    if datasets.is_empty() {
        return Err(Error::Config("no datasets configured".into()));
    }
    let client = analyst_backend(cfg);
    let analyst = Analyst::new(&client, cfg.analyst.max_attempts);
    let cache = open_cache(cfg)?;
    let mut matrices = Vec::new();
    for ds in &datasets {
        let m = extract_one(cfg, ds, &analyst, &cache)?;
        matrices.push((ds.name().to_string(), m.len()));
    }
    Ok(ExtractSummary { matrices })
}

/// Persisted ensemble weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightFile {
    pub roster: Vec<String>,
    pub weights: Vec<f64>,
    pub cap: f64,
    pub val_f1: f64,
}

impl WeightFile {
    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&raw).map_err(|e| Error::ModelFile(format!("{}: {e}", path.display())))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

fn stage1_scores(scorer: &dyn Scorer, ds: &Dataset, parallelism: usize) -> Result<Vec<Probability>> {
    parallel_map(ds.posts(), parallelism, |_, p| scorer.score(p.text()))
        .into_iter()
        .collect()
}

fn score_vectors(stage1: &[Probability], models: &[TrainedModel], features: &FeatureMatrix) -> Result<Vec<ScoreVector>> {
    stage1
        .iter()
        .zip(features.rows())
        .map(|(p, x)| {
            let mut v = vec![p.value()];
            for m in models {
                v.push(m.predict_proba(x.as_ref())?.value());
            }
            ScoreVector::new(v)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub weights: WeightFile,
    pub model_files: Vec<PathBuf>,
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainSummary> {
    let splits = load_splits(cfg)?;
    let train_ds = require(splits.train, Split::Train)?;
    let val_ds = require(splits.val, Split::Val)?;
    let train_labels = labels_of(&train_ds)?;
    let val_labels = labels_of(&val_ds)?;
    let mut model_files = Vec::new();

    let stage1 = match &cfg.stage1.endpoint {
        Some(url) => Stage1Backend::Remote(RemoteScorer::new(url, cfg.retry.clone())),
        None => {
            let b = train_baseline(&train_ds, &cfg.baseline).map_err(|e| in_split(e, &train_ds))?;
            let path = model_path(cfg, BASELINE_NAME);
            b.save(&path)?;
            model_files.push(path);
            Stage1Backend::Baseline(b)
        }
    };

    let client = analyst_backend(cfg);
    let analyst = Analyst::new(&client, cfg.analyst.max_attempts);
    let cache = open_cache(cfg)?;
    let train_x = extract_one(cfg, &train_ds, &analyst, &cache)?;
    let val_x = extract_one(cfg, &val_ds, &analyst, &cache)?;

    let mut models = Vec::new();
    for &kind in &cfg.models.roster {
        let hp = if cfg.models.cv_folds >= 2 {
            let cv = cross_validate(kind, train_x.rows(), &train_labels, cfg.models.cv_folds, &cfg.models.grid, cfg.seed)
                .map_err(|e| in_split(e, &train_ds))?;
            info!("{kind}: cross-validated F1 {:.4}", cv.mean_f1);
            cv.best
        } else {
            cfg.models.grid[0].clone()
        };
        let m = train(kind, train_x.rows(), &train_labels, &hp, cfg.seed).map_err(|e| in_split(e, &train_ds))?;
        let path = model_path(cfg, kind.name());
        m.save(&path)?;
        model_files.push(path);
        models.push(m);
    }

    let val_p1 = stage1_scores(&stage1, &val_ds, cfg.parallelism)?;
    let val_scores = score_vectors(&val_p1, &models, &val_x)?;
    let opt = optimize_weights(&val_scores, &val_labels, cfg.models.cap, cfg.seed).map_err(|e| in_split(e, &val_ds))?;
    info!(
        "ensemble weights {:?}: validation F1 {:.4} (uniform {:.4})",
        opt.weights.weights(),
        opt.val_f1,
        opt.uniform_f1
    );
    let weights = WeightFile {
        roster: std::iter::once(stage1_name(cfg).to_string())
            .chain(cfg.models.roster.iter().map(|k| k.name().to_string()))
            .collect(),
        weights: opt.weights.weights().to_vec(),
        cap: cfg.models.cap,
        val_f1: opt.val_f1,
    };
    write_json(&cfg.out.join("weights.json"), &weights)?;
    Ok(TrainSummary { weights, model_files })
}

fn in_split(e: Error, ds: &Dataset) -> Error {
    match e {
        Error::DegenerateData(msg) => Error::DegenerateData(format!("{} split `{}`: {msg}", ds.split(), ds.name())),
        other => other,
    }
}

/// Loads the roster models and weights written by `train`, checking that
/// they match the configured roster.
fn load_ensemble(cfg: &PipelineConfig) -> Result<(Vec<TrainedModel>, EnsembleWeights)> {
    let wf = WeightFile::read(&cfg.out.join("weights.json"))?;
    let expected: Vec<String> = std::iter::once(stage1_name(cfg).to_string())
        .chain(cfg.models.roster.iter().map(|k| k.name().to_string()))
        .collect();
    if wf.roster != expected {
        return Err(Error::Config(format!(
            "weights.json roster {:?} does not match the configured roster {:?}",
            wf.roster, expected
        )));
    }
    let models = cfg
        .models
        .roster
        .iter()
        .map(|k| {
            let m = TrainedModel::load(&model_path(cfg, k.name()))?;
            if m.kind() != *k {
                return Err(Error::ModelFile(format!("expected a {k} model")));
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((models, EnsembleWeights::new(wf.weights, wf.cap)?))
}

fn test_sets(cfg: &PipelineConfig) -> Result<Vec<Dataset>> {
    let test = load_splits(cfg)?.test;
    if test.is_empty() {
        return Err(Error::Config("no test datasets configured (set data.test or data.source)".into()));
    }
    Ok(test)
}

pub fn cmd_route(cfg: &PipelineConfig) -> Result<Vec<(String, crate::eval::StageCostReport)>> {
    let stage1 = load_stage1(cfg)?;
    let mut out = Vec::new();
    for ds in test_sets(cfg)? {
        let routed = parallel_map(ds.posts(), cfg.parallelism, |_, p| {
            stage1.score(p.text()).map(|prob| crate::cascade::route(p, prob, &cfg.routing))
        });
        let mut lines = String::new();
        let mut decisions = Vec::new();
        for (post, r) in ds.posts().iter().zip(routed) {
            let mut v = match &r {
                Ok(d) => serde_json::to_value(d).expect("decision serializes"),
                Err(e) => json!({ "decision": "failed", "error": e.to_string() }),
            };
            v["id"] = json!(post.id());
            lines.push_str(&v.to_string());
            lines.push('\n');
            if let Ok(d) = r {
                decisions.push(d);
            }
        }
        write_atomic(&cfg.out.join("routes").join(format!("{}.jsonl", ds.name())), lines.as_bytes())?;
        let cost = stage_cost_report(&decisions)?;
        println!(
            "{}: {:.2}% accepted by stage 1, {:.2}% escalated",
            ds.name(),
            100.0 * cost.stage1_fraction,
            100.0 * cost.stage2_fraction
        );
        out.push((ds.name().to_string(), cost));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluateSummary {
    pub records: Vec<ReportRecord>,
    pub table: String,
    pub posts: usize,
    pub failed: usize,
}

fn method_name(pathway: Pathway) -> &'static str {
    match pathway {
        Pathway::Ml => "cascade_ml",
        Pathway::Llm => "cascade_llm",
    }
}

pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<EvaluateSummary> {
    let stage1 = load_stage1(cfg)?;
    let test = test_sets(cfg)?;
    let analyst_client = analyst_backend(cfg);
    let analyst = Analyst::new(&analyst_client, cfg.analyst.max_attempts);
    let cache = open_cache(cfg)?;
    let agents_client = agents_backend(cfg);
    let ensemble = match cfg.pathway {
        Pathway::Ml => Some(load_ensemble(cfg)?),
        Pathway::Llm => None,
    };
    let stage2 = match &ensemble {
        Some((models, weights)) => Stage2::MlVoting {
            models,
            weights,
            features: FeatureSource::Lazy {
                analyst: &analyst,
                cache: &cache,
            },
        },
        None => Stage2::AgentVoting {
            personas: cfg.agents.personas.clone(),
            client: &agents_client,
        },
    };

    let mut stage1_records = Vec::new();
    let mut cascade_records = Vec::new();
    let (mut posts, mut failed) = (0, 0);
    for ds in &test {
        let gold = labels_of(ds)?;
        let outcomes = run_cascade(ds, &stage1, &cfg.routing, &stage2, cfg.parallelism)?;
        write_predictions(&cfg.out.join("predictions").join(format!("{}.jsonl", ds.name())), &outcomes)?;
        posts += outcomes.len();
        failed += outcomes.iter().filter(|o| o.provenance == Provenance::Failed).count();

        let stage1_labels: Vec<Label> = outcomes.iter().map(stage1_label).collect();
        let labels: Vec<Label> = outcomes.iter().map(|o| o.label).collect();
        let decisions: Vec<_> = outcomes.iter().filter_map(|o| o.decision).collect();
        stage1_records.push(ReportRecord {
            dataset: ds.name().to_string(),
            method: stage1_name(cfg).to_string(),
            metrics: evaluate(&stage1_labels, &gold)?,
            gaps: None,
            cost: None,
        });
        cascade_records.push(ReportRecord {
            dataset: ds.name().to_string(),
            method: method_name(cfg.pathway).to_string(),
            metrics: evaluate(&labels, &gold)?,
            gaps: None,
            cost: if decisions.is_empty() { None } else { Some(stage_cost_report(&decisions)?) },
        });
    }
    let mut records: Vec<ReportRecord> = stage1_records.into_iter().chain(cascade_records).collect();
    attach_gaps(&mut records);
    write_report(&cfg.out.join("report.jsonl"), &records)?;
    let table = render_table(&records);
    print!("{table}");
    Ok(EvaluateSummary {
        records,
        table,
        posts,
        failed,
    })
}

/// Stage-1 label alone; a failed Stage-1 call counts as positive.
fn stage1_label(o: &CascadeOutcome) -> Label {
    o.stage1_prob.map_or(Label::Suicide, |p| Label::from_prob(p, 0.5))
}

pub fn cmd_sweep(cfg: &PipelineConfig) -> Result<SweepResult> {
    let val_ds = require(load_splits(cfg)?.val, Split::Val)?;
    let gold = labels_of(&val_ds)?;
    let stage1 = load_stage1(cfg)?;
    let probs = stage1_scores(&stage1, &val_ds, cfg.parallelism)?;
    let lens: Vec<usize> = val_ds.posts().iter().map(|p| token_length(p.text())).collect();

    let stage2 = match cfg.pathway {
        Pathway::Ml if cfg.out.join("weights.json").exists() => {
            let (models, weights) = load_ensemble(cfg)?;
            let client = analyst_backend(cfg);
            let analyst = Analyst::new(&client, cfg.analyst.max_attempts);
            let cache = open_cache(cfg)?;
            let x = extract_one(cfg, &val_ds, &analyst, &cache)?;
            let labels = score_vectors(&probs, &models, &x)?
                .iter()
                .map(|s| ml_vote(s, &weights, 0.5).map(|(l, _)| l))
                .collect::<Result<Vec<_>>>()?;
            Some(labels)
        }
        _ => None,
    };
    let result = sweep_thresholds(&probs, &lens, &gold, stage2.as_deref(), &cfg.routing, &cfg.sweep)?;
    write_json(&cfg.out.join("thresholds.json"), &result)?;
    println!(
        "tau_low = {}, tau_high = {}: validation F1 {:.2}%, stage-1 coverage {:.2}%",
        result.best.tau_low,
        result.best.tau_high,
        100.0 * result.f1,
        100.0 * result.coverage
    );
    Ok(result)
}
