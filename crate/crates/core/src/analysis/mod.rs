//! Psychological-analyst features: prompt construction, parsing of the
//! model's JSON reply, and the fixed 9-dimensional numeric encoding.
//!
//! Vector layout:
//!
//! | index | component                     |
//! |-------|-------------------------------|
//! | 0     | suicide_intent (0/1)          |
//! | 1..=4 | distress one-hot: low, medium, high, unknown |
//! | 5     | has_plan (0/1)                |
//! | 6     | is_metaphor (0/1)             |
//! | 7     | farewell_hint (0/1)           |
//! | 8     | reasoning length in characters (raw string, no normalization) |

mod cache;
mod extract;

pub use cache::{content_key, CacheEntry, FeatureCache};
pub use extract::{extract_features, Analyst, FeatureMatrix};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// System prompt sent to the analyst model.
pub const ANALYST_PROMPT: &str = include_str!("../prompts/analyst.txt");

/// Stored with every cache entry; bump when `ANALYST_PROMPT` changes.
pub const PROMPT_VERSION: &str = "analyst-v1";

/// Example analyst reply for "The world would be better off without me.".
/// Used by the bundled mock analyst and as a test fixture.
pub const SIMULATED_OUTPUT: &str = include_str!("../prompts/simulated_output.json");

pub const FEATURE_DIM: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistressLevel {
    Low,
    Medium,
    High,
    /// Only produced by the parser for missing or unrecognized values.
    Unknown,
}

impl DistressLevel {
    fn parse_lenient(v: Option<&Value>) -> DistressLevel {
        match v.and_then(Value::as_str).map(|s| s.trim().to_ascii_lowercase()) {
            Some(s) if s == "low" => DistressLevel::Low,
            Some(s) if s == "medium" => DistressLevel::Medium,
            Some(s) if s == "high" => DistressLevel::High,
            _ => DistressLevel::Unknown,
        }
    }

    fn slot(self) -> usize {
        match self {
            DistressLevel::Low => 0,
            DistressLevel::Medium => 1,
            DistressLevel::High => 2,
            DistressLevel::Unknown => 3,
        }
    }
}

/// The six indicators returned by the analyst model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FundamentalAnalysis {
    pub suicide_intent: bool,
    pub emotional_distress_level: DistressLevel,
    pub has_plan: bool,
    pub is_metaphor: bool,
    pub farewell_hint: bool,
    pub reasoning: String,
}

impl FundamentalAnalysis {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("analysis serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPair {
    pub system: String,
    pub user: String,
}

/// System message is the bundled analyst prompt; the user message is the
/// post text, unmodified.
pub fn build_analyst_prompt(text: &str) -> Result<PromptPair> {
    if text.trim().is_empty() {
        return Err(Error::InvalidInput("cannot analyze empty text".into()));
    }
    Ok(PromptPair {
        system: ANALYST_PROMPT.to_string(),
        user: text.to_string(),
    })
}

/// Parses untrusted analyst output. Prose around the JSON is tolerated; the
/// first balanced top-level object that is valid JSON is used.
pub fn parse_analysis(raw: &str) -> Result<FundamentalAnalysis> {
    let obj = first_json_object(raw).ok_or_else(|| Error::Parse(truncate(raw, 120)))?;

    let flag = |field: &str| -> Result<bool> {
        match obj.get(field) {
            Some(Value::Bool(b)) => Ok(*b),
            Some(other) => Err(Error::schema(field, format!("expected boolean, got {other}"))),
            None => Err(Error::schema(field, "missing")),
        }
    };
    let reasoning = match obj.get("reasoning") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(other) => return Err(Error::schema("reasoning", format!("expected string, got {other}"))),
    };

    Ok(FundamentalAnalysis {
        suicide_intent: flag("suicide_intent")?,
        emotional_distress_level: DistressLevel::parse_lenient(obj.get("emotional_distress_level")),
        has_plan: flag("has_plan")?,
        is_metaphor: flag("is_metaphor")?,
        farewell_hint: flag("farewell_hint")?,
        reasoning,
    })
}

fn first_json_object(raw: &str) -> Option<Map<String, Value>> {
    let bytes = raw.as_bytes();
    let mut start = 0;
    while let Some(off) = raw[start..].find('{') {
        let open = start + off;
        if let Some(close) = matching_brace(bytes, open) {
            if let Ok(Value::Object(map)) = serde_json::from_str::<Value>(&raw[open..=close]) {
                return Some(map);
            }
        }
        start = open + 1;
    }
    None
}

/// Index of the `}` closing the object opened at `open`, skipping braces
/// inside string literals.
fn matching_brace(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(open) {
        if in_str {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_str = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

fn truncate(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_string()
    } else {
        let mut t: String = s.chars().take(max).collect();
        t.push_str("...");
        t
    }
}

/// Fixed-length numeric encoding of a [`FundamentalAnalysis`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FeatureVector([f64; FEATURE_DIM]);

impl FeatureVector {
    /// Validates the binary slots, the one-hot group and a non-negative length.
    pub fn new(values: [f64; FEATURE_DIM]) -> Result<Self> {
        for i in [0, 5, 6, 7] {
            if values[i] != 0.0 && values[i] != 1.0 {
                return Err(Error::InvalidInput(format!("feature {i} must be 0 or 1, got {}", values[i])));
            }
        }
        let group = &values[1..5];
        if group.iter().any(|v| *v != 0.0 && *v != 1.0) || group.iter().sum::<f64>() != 1.0 {
            return Err(Error::InvalidInput(format!("distress one-hot invalid: {group:?}")));
        }
        if !(values[8] >= 0.0) || !values[8].is_finite() {
            return Err(Error::InvalidInput(format!("reasoning length invalid: {}", values[8])));
        }
        Ok(FeatureVector(values))
    }

    pub fn values(&self) -> &[f64; FEATURE_DIM] {
        &self.0
    }
}

impl TryFrom<&[f64]> for FeatureVector {
    type Error = Error;

    fn try_from(v: &[f64]) -> Result<Self> {
        let arr: [f64; FEATURE_DIM] = v.try_into().map_err(|_| Error::Dimension {
            expected: FEATURE_DIM,
            got: v.len(),
        })?;
        FeatureVector::new(arr)
    }
}

impl TryFrom<Vec<f64>> for FeatureVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        FeatureVector::try_from(v.as_slice())
    }
}

impl From<FeatureVector> for Vec<f64> {
    fn from(f: FeatureVector) -> Self {
        f.0.to_vec()
    }
}

impl AsRef<[f64]> for FeatureVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn flag(b: bool) -> f64 {
    if b {
        1.0
    } else {
        0.0
    }
}

pub fn vectorize(a: &FundamentalAnalysis) -> FeatureVector {
    let mut v = [0.0; FEATURE_DIM];
    v[0] = flag(a.suicide_intent);
    v[1 + a.emotional_distress_level.slot()] = 1.0;
    v[5] = flag(a.has_plan);
    v[6] = flag(a.is_metaphor);
    v[7] = flag(a.farewell_hint);
    v[8] = a.reasoning.chars().count() as f64;
    FeatureVector(v)
}
