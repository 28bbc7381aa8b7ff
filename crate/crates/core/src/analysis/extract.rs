use std::collections::HashMap;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{build_analyst_prompt, content_key, parse_analysis, vectorize, FeatureCache, FeatureVector, FundamentalAnalysis};
use crate::data::Dataset;
use crate::error::{AnalystFailure, Error, Result};
use crate::scorers::ChatClient;
use crate::util::{parallel_map, write_atomic};

/// Chat model in the analyst role. Unparsable replies are retried up to
/// `max_attempts` calls in total.
pub struct Analyst<'a> {
    client: &'a dyn ChatClient,
    max_attempts: usize,
}

impl<'a> Analyst<'a> {
    pub fn new(client: &'a dyn ChatClient, max_attempts: usize) -> Self {
        Analyst {
            client,
            max_attempts: max_attempts.max(1),
        }
    }

    pub fn analyze(&self, text: &str) -> Result<FundamentalAnalysis> {
        let prompt = build_analyst_prompt(text)?;
        let mut last = None;
        for attempt in 1..=self.max_attempts {
            let outcome = self
                .client
                .chat(&prompt.system, &prompt.user)
                .and_then(|reply| parse_analysis(&reply));
            match outcome {
                Ok(a) => return Ok(a),
                Err(e) => {
                    warn!("analyst attempt {attempt}/{} failed: {e}", self.max_attempts);
                    last = Some(e);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Cache-first analysis of one text; a miss is analyzed and recorded.
    pub fn features_cached(&self, text: &str, cache: &FeatureCache) -> Result<FeatureVector> {
        if let Some(a) = cache.get(text) {
            return Ok(vectorize(&a));
        }
        let a = self.analyze(text)?;
        let v = vectorize(&a);
        cache.insert(text, a)?;
        Ok(v)
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRow {
    id: String,
    features: FeatureVector,
}

/// Per-post feature vectors, aligned with the order of the source dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureMatrix {
    ids: Vec<String>,
    rows: Vec<FeatureVector>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, rows: Vec<FeatureVector>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::LengthMismatch {
                left: ids.len(),
                right: rows.len(),
            });
        }
        Ok(FeatureMatrix { ids, rows })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[FeatureVector] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// True when the ids match the dataset's post ids position by position.
    pub fn is_aligned_with(&self, ds: &Dataset) -> bool {
        self.ids.len() == ds.len() && self.ids.iter().zip(ds.posts()).all(|(a, p)| a == p.id())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, f) in self.ids.iter().zip(&self.rows) {
            let row = MatrixRow {
                id: id.clone(),
                features: *f,
            };
            out.push_str(&serde_json::to_string(&row).expect("matrix row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = FeatureMatrix::default();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: MatrixRow = serde_json::from_str(line).map_err(|e| Error::Format {
                row: i + 1,
                reason: e.to_string(),
            })?;
            m.ids.push(row.id);
            m.rows.push(row.features);
        }
        Ok(m)
    }
}

/// Resolves every post cache-first; misses go to the analyst with at most
/// `parallelism` requests in flight. Identical texts share one request.
/// All-or-nothing: if any miss fails, no matrix is returned (successful
/// analyses are still recorded in the cache).
pub fn extract_features(
    ds: &Dataset,
    analyst: &Analyst<'_>,
    cache: &FeatureCache,
    parallelism: usize,
) -> Result<FeatureMatrix> {
    let keys: Vec<String> = ds.posts().iter().map(|p| content_key(p.text())).collect();

    let mut pending: Vec<&str> = Vec::new();
    let mut pending_idx: HashMap<&str, usize> = HashMap::new();
    for (post, key) in ds.posts().iter().zip(&keys) {
        if cache.get_by_key(key).is_none() && !pending_idx.contains_key(key.as_str()) {
            pending_idx.insert(key.as_str(), pending.len());
            pending.push(post.text());
        }
    }

    let results = parallel_map(&pending, parallelism, |_, text| analyst.analyze(text));

    let mut failed: HashMap<&str, String> = HashMap::new();
    for (text, res) in pending.iter().zip(results) {
        match res {
            Ok(a) => cache.insert(text, a)?,
            Err(e) => {
                failed.insert(*text, e.to_string());
            }
        }
    }
    if !failed.is_empty() {
        let failures = ds
            .posts()
            .iter()
            .filter_map(|p| {
                failed.get(p.text()).map(|cause| AnalystFailure {
                    post_id: p.id().to_string(),
                    cause: cause.clone(),
                })
            })
            .collect();
        return Err(Error::Analyst(failures));
    }

    let rows = keys
        .iter()
        .map(|k| {
            cache
                .get_by_key(k)
                .map(|a| vectorize(&a))
                .ok_or_else(|| Error::InvalidInput("cache lost an entry during extraction".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let ids = ds.posts().iter().map(|p| p.id().to_string()).collect();
    FeatureMatrix::new(ids, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::SIMULATED_OUTPUT;
    use crate::data::{Post, Split};
    use crate::scorers::mock::MockChat;

    fn dataset(texts: &[&str]) -> Dataset {
        let posts = texts
            .iter()
            .enumerate()
            .map(|(i, t)| Post::new(format!("p{i}"), *t, None).unwrap())
            .collect();
        Dataset::new("t", Split::Test, posts).unwrap()
    }

    #[test]
    fn empty_dataset_gives_empty_matrix() {
        let chat = MockChat::fixed(SIMULATED_OUTPUT);
        let m = extract_features(&dataset(&[]), &Analyst::new(&chat, 1), &FeatureCache::in_memory(), 4).unwrap();
        assert!(m.is_empty());
        assert_eq!(chat.calls(), 0);
    }

    #[test]
    fn mock_analyst_rows_equal_vectorized_fixture() {
        let chat = MockChat::fixed(SIMULATED_OUTPUT);
        let ds = dataset(&["a", "b", "c", "a"]);
        let cache = FeatureCache::in_memory();
        let m = extract_features(&ds, &Analyst::new(&chat, 1), &cache, 3).unwrap();
        let expected = vectorize(&parse_analysis(SIMULATED_OUTPUT).unwrap());
        assert_eq!(m.len(), 4);
        assert!(m.rows().iter().all(|r| *r == expected));
        assert!(m.is_aligned_with(&ds));
        // duplicate text shares one request
        assert_eq!(chat.calls(), 3);

        let again = extract_features(&ds, &Analyst::new(&chat, 1), &cache, 3).unwrap();
        assert_eq!(again, m);
        assert_eq!(chat.calls(), 3);
    }

    #[test]
    fn parse_failures_are_retried() {
        let chat = MockChat::sequence(vec!["no json here".into(), SIMULATED_OUTPUT.into()]);
        let a = Analyst::new(&chat, 2).analyze("text").unwrap();
        assert!(a.suicide_intent);
        assert_eq!(chat.calls(), 2);
    }

    #[test]
    fn failure_lists_every_post_and_returns_nothing() {
        let chat = MockChat::new(|_, user| {
            if user.contains("bad") {
                Ok("nope".to_string())
            } else {
                Ok(SIMULATED_OUTPUT.to_string())
            }
        });
        let ds = dataset(&["good", "bad", "fine", "bad"]);
        let cache = FeatureCache::in_memory();
        match extract_features(&ds, &Analyst::new(&chat, 2), &cache, 2) {
            Err(Error::Analyst(f)) => {
                let ids: Vec<_> = f.iter().map(|x| x.post_id.as_str()).collect();
                assert_eq!(ids, vec!["p1", "p3"]);
            }
            other => panic!("{other:?}"),
        }
        assert!(cache.get("good").is_some());
    }

    #[test]
    fn matrix_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let chat = MockChat::fixed(SIMULATED_OUTPUT);
        let m = extract_features(&dataset(&["x", "y"]), &Analyst::new(&chat, 1), &FeatureCache::in_memory(), 1).unwrap();
        let p = dir.path().join("m.jsonl");
        m.write(&p).unwrap();
        assert_eq!(FeatureMatrix::read(&p).unwrap(), m);
    }
}
