//! Domain types shared across the pipeline, dataset ingestion and the
//! whitespace token-length proxy used by routing.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};

/// Binary label. `Suicide` is the positive class everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Suicide,
    NonSuicide,
}

impl Label {
    pub fn as_int(self) -> u8 {
        match self {
            Label::Suicide => 1,
            Label::NonSuicide => 0,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Suicide
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Suicide => "suicide",
            Label::NonSuicide => "non_suicide",
        }
    }

    /// `Suicide` iff `prob >= threshold`.
    pub fn from_prob(prob: f64, threshold: f64) -> Label {
        if prob >= threshold {
            Label::Suicide
        } else {
            Label::NonSuicide
        }
    }

    /// Accepts `0`/`1` (numbers or numeric strings) and the
    /// `"suicide"`/`"non_suicide"` strings, case-insensitively.
    pub fn from_json(v: &Value) -> Result<Label, String> {
        match v {
            Value::Number(n) => match n.as_u64() {
                Some(1) => Ok(Label::Suicide),
                Some(0) => Ok(Label::NonSuicide),
                _ => Err(format!("label must be 0 or 1, got {n}")),
            },
            Value::String(s) => s.parse(),
            Value::Bool(b) => Err(format!("label must be 0/1 or a label string, got {b}")),
            other => Err(format!("unsupported label value {other}")),
        }
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "suicide" => Ok(Label::Suicide),
            "0" | "non_suicide" | "non-suicide" => Ok(Label::NonSuicide),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        Label::from_json(&v).map_err(serde::de::Error::custom)
    }
}

/// P(y = Suicide | x). Always within [0, 1], never NaN.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() || !(0.0..=1.0).contains(&value) {
            return Err(Error::InvalidProbability(value));
        }
        Ok(Probability(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Stage-1 style hard decision at 0.5.
    pub fn label(self) -> Label {
        Label::from_prob(self.0, 0.5)
    }
}

impl<'de> Deserialize<'de> for Probability {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Probability::new(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    id: String,
    text: String,
    #[serde(rename = "label", default, skip_serializing_if = "Option::is_none")]
    gold_label: Option<Label>,
}

impl Post {
    pub fn new(id: impl Into<String>, text: impl Into<String>, gold_label: Option<Label>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::InvalidInput("post text is empty".into()));
        }
        Ok(Post {
            id: id.into(),
            text,
            gold_label,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn gold_label(&self) -> Option<Label> {
        self.gold_label
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Ordered posts with unique ids. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    name: String,
    split: Split,
    posts: Vec<Post>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, split: Split, posts: Vec<Post>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(posts.len());
        for p in &posts {
            if !seen.insert(p.id()) {
                return Err(Error::InvalidInput(format!("duplicate post id `{}`", p.id())));
            }
        }
        Ok(Dataset {
            name: name.into(),
            split,
            posts,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }

    /// Gold labels in dataset order; errors if any post is unlabeled.
    pub fn gold_labels(&self) -> Result<Vec<Label>> {
        self.posts
            .iter()
            .map(|p| {
                p.gold_label().ok_or_else(|| {
                    Error::InvalidInput(format!("post `{}` in `{}` has no gold label", p.id(), self.name))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Jsonl,
    Csv,
}

impl DataFormat {
    /// `.csv` is CSV, everything else is treated as jsonl.
    pub fn from_path(path: &Path) -> DataFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => DataFormat::Csv,
            _ => DataFormat::Jsonl,
        }
    }
}

/// Loads a dataset preserving record order. The dataset name is the file stem.
pub fn load_dataset(path: &Path, format: DataFormat, split: Split) -> Result<Dataset> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let posts = match format {
        DataFormat::Jsonl => parse_jsonl(&raw)?,
        DataFormat::Csv => parse_csv(&raw)?,
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    Dataset::new(name, split, posts)
}

fn parse_jsonl(raw: &str) -> Result<Vec<Post>> {
    let mut posts = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        let row = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Format {
            row,
            reason: e.to_string(),
        })?;
        let obj = v.as_object().ok_or_else(|| Error::Format {
            row,
            reason: "record is not a JSON object".into(),
        })?;
        let id = match obj.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            Some(_) => return Err(format_err(row, "`id` must be a string")),
            None => return Err(format_err(row, "missing `id`")),
        };
        let text = match obj.get("text") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(format_err(row, "`text` must be a string")),
            None => return Err(format_err(row, "missing `text`")),
        };
        let label = match obj.get("label") {
            None | Some(Value::Null) => None,
            Some(v) => Some(Label::from_json(v).map_err(|r| format_err(row, &r))?),
        };
        posts.push(Post::new(id, text, label).map_err(|e| format_err(row, &e.to_string()))?);
    }
    Ok(posts)
}

fn parse_csv(raw: &str) -> Result<Vec<Post>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(raw.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| format_err(1, &e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_col = col("id").ok_or_else(|| format_err(1, "header lacks `id`"))?;
    let text_col = col("text").ok_or_else(|| format_err(1, "header lacks `text`"))?;
    let label_col = col("label");

    let mut posts = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        // header is row 1
        let row = i + 2;
        let rec = rec.map_err(|e| format_err(row, &e.to_string()))?;
        let id = rec.get(id_col).ok_or_else(|| format_err(row, "missing `id`"))?;
        let text = rec.get(text_col).ok_or_else(|| format_err(row, "missing `text`"))?;
        let label = match label_col.and_then(|c| rec.get(c)).map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<Label>().map_err(|r| format_err(row, &r))?),
        };
        posts.push(Post::new(id, text, label).map_err(|e| format_err(row, &e.to_string()))?);
    }
    Ok(posts)
}

fn format_err(row: usize, reason: &str) -> Error {
    Error::Format {
        row,
        reason: reason.to_string(),
    }
}

/// Number of maximal whitespace-separated runs.
pub fn token_length(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Deterministic 80/10/10 split, stratified by gold label (unlabeled posts
/// form their own stratum). Record order within each part follows the
/// original dataset order.
pub fn stratified_split(ds: &Dataset, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Split::Test; ds.len()];
    for stratum in [Some(Label::Suicide), Some(Label::NonSuicide), None] {
        let mut idx: Vec<usize> = ds
            .posts()
            .iter()
            .enumerate()
            .filter(|(_, p)| p.gold_label() == stratum)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = (n as f64 * 0.8).round() as usize;
        let n_val = ((n as f64 * 0.1).round() as usize).min(n - n_train);
        for (k, &i) in idx.iter().enumerate() {
            assignment[i] = if k < n_train {
                Split::Train
            } else if k < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    let part = |split: Split| {
        let posts = ds
            .posts()
            .iter()
            .zip(&assignment)
            .filter(|(_, s)| **s == split)
            .map(|(p, _)| p.clone())
            .collect();
        Dataset::new(format!("{}-{}", ds.name(), split), split, posts)
    };
    Ok((part(Split::Train)?, part(Split::Val)?, part(Split::Test)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_two_labeled_jsonl_rows() {
        let f = write_tmp(
            "{\"id\":\"a\",\"text\":\"I want out\",\"label\":1}\n{\"id\":\"b\",\"text\":\"fine day\",\"label\":0}\n",
            ".jsonl",
        );
        let ds = load_dataset(f.path(), DataFormat::Jsonl, Split::Test).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.gold_labels().unwrap(), vec![Label::Suicide, Label::NonSuicide]);
        assert_eq!(ds.posts()[0].id(), "a");
    }

    #[test]
    fn empty_file_is_empty_dataset() {
        let f = write_tmp("", ".jsonl");
        assert!(load_dataset(f.path(), DataFormat::Jsonl, Split::Test).unwrap().is_empty());
    }

    #[test]
    fn missing_text_names_the_row() {
        let f = write_tmp("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"b\"}\n", ".jsonl");
        match load_dataset(f.path(), DataFormat::Jsonl, Split::Test) {
            Err(Error::Format { row, reason }) => {
                assert_eq!(row, 2);
                assert!(reason.contains("text"));
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn string_labels_and_missing_labels() {
        let f = write_tmp(
            "{\"id\":\"a\",\"text\":\"x\",\"label\":\"suicide\"}\n{\"id\":\"b\",\"text\":\"y\",\"label\":\"non_suicide\"}\n{\"id\":\"c\",\"text\":\"z\"}\n",
            ".jsonl",
        );
        let ds = load_dataset(f.path(), DataFormat::Jsonl, Split::Train).unwrap();
        let labels: Vec<_> = ds.posts().iter().map(|p| p.gold_label()).collect();
        assert_eq!(labels, vec![Some(Label::Suicide), Some(Label::NonSuicide), None]);
        assert!(ds.gold_labels().is_err());
    }

    #[test]
    fn rejects_bad_label_and_duplicate_ids() {
        let f = write_tmp("{\"id\":\"a\",\"text\":\"x\",\"label\":2}\n", ".jsonl");
        assert!(matches!(
            load_dataset(f.path(), DataFormat::Jsonl, Split::Test),
            Err(Error::Format { row: 1, .. })
        ));
        let f = write_tmp("{\"id\":\"a\",\"text\":\"x\"}\n{\"id\":\"a\",\"text\":\"y\"}\n", ".jsonl");
        assert!(matches!(
            load_dataset(f.path(), DataFormat::Jsonl, Split::Test),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn whitespace_only_text_is_rejected() {
        let f = write_tmp("{\"id\":\"a\",\"text\":\"   \"}\n", ".jsonl");
        assert!(matches!(
            load_dataset(f.path(), DataFormat::Jsonl, Split::Test),
            Err(Error::Format { row: 1, .. })
        ));
    }

    #[test]
    fn loads_csv() {
        let f = write_tmp("id,text,label\n1,\"hello, world\",0\n2,goodbye all,suicide\n3,no label,\n", ".csv");
        let ds = load_dataset(f.path(), DataFormat::from_path(f.path()), Split::Test).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.posts()[0].text(), "hello, world");
        assert_eq!(ds.posts()[1].gold_label(), Some(Label::Suicide));
        assert_eq!(ds.posts()[2].gold_label(), None);

        let f = write_tmp("id,label\n1,0\n", ".csv");
        assert!(matches!(
            load_dataset(f.path(), DataFormat::Csv, Split::Test),
            Err(Error::Format { row: 1, .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_dataset(Path::new("/nonexistent/x.jsonl"), DataFormat::Jsonl, Split::Test),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn token_length_examples() {
        assert_eq!(token_length("I want out"), 3);
        assert_eq!(token_length(""), 0);
        assert_eq!(token_length("a  b\nc"), 3);
        assert_eq!(token_length("  a b  "), token_length("a b"));
    }

    #[test]
    fn probability_range() {
        assert!(Probability::new(0.0).is_ok());
        assert!(Probability::new(1.0).is_ok());
        assert!(Probability::new(1.2).is_err());
        assert!(Probability::new(-0.1).is_err());
        assert!(Probability::new(f64::NAN).is_err());
        assert_eq!(Probability::new(0.5).unwrap().label(), Label::Suicide);
    }

    #[test]
    fn stratified_split_is_deterministic_and_proportional() {
        let posts: Vec<Post> = (0..100)
            .map(|i| {
                let label = if i % 5 == 0 { Label::Suicide } else { Label::NonSuicide };
                Post::new(format!("p{i}"), format!("text {i}"), Some(label)).unwrap()
            })
            .collect();
        let ds = Dataset::new("all", Split::Train, posts).unwrap();
        let (tr, va, te) = stratified_split(&ds, 7).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (80, 10, 10));
        let pos = |d: &Dataset| d.posts().iter().filter(|p| p.gold_label() == Some(Label::Suicide)).count();
        assert_eq!((pos(&tr), pos(&va), pos(&te)), (16, 2, 2));
        let again = stratified_split(&ds, 7).unwrap();
        assert_eq!(again.0, tr);
        assert_ne!(stratified_split(&ds, 8).unwrap().0, tr);
        assert_eq!(va.split(), Split::Val);
    }
}
