//! Classifier roles: the Stage-1 probability scorer, persona agents over a
//! chat model, and their remote and mock implementations.

mod baseline;
pub mod mock;
mod remote;

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use baseline::{train_baseline, train_baseline_traced, BaselineConfig, BaselineScorer};
pub use remote::{remote_score, RemoteChatClient, RemoteScorer, RetryPolicy, API_KEY_ENV};
pub use mock::{MockChat, MockScorer};

use crate::data::{Label, Probability};
use crate::error::Result;

/// Maps a post to P(Suicide). Must be deterministic for a given instance.
pub trait Scorer: Send + Sync {
    fn score(&self, text: &str) -> Result<Probability>;
}

/// Two-message chat completion: returns the assistant's text.
pub trait ChatClient: Send + Sync {
    fn chat(&self, system: &str, user: &str) -> Result<String>;
}

impl<T: Scorer + ?Sized> Scorer for &T {
    fn score(&self, text: &str) -> Result<Probability> {
        (**self).score(text)
    }
}

impl<T: ChatClient + ?Sized> ChatClient for &T {
    fn chat(&self, system: &str, user: &str) -> Result<String> {
        (**self).chat(system, user)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentPersona {
    /// Ultra-sensitive; defaults to the positive class.
    Bullish,
    /// Conservative; needs strong evidence.
    Bearish,
    /// Balanced; weighs coping and support against risk.
    Expert,
}

impl AgentPersona {
    pub const ALL: [AgentPersona; 3] = [AgentPersona::Bullish, AgentPersona::Bearish, AgentPersona::Expert];

    pub fn system_prompt(self) -> &'static str {
        match self {
            AgentPersona::Bullish => include_str!("../prompts/bullish.txt"),
            AgentPersona::Bearish => include_str!("../prompts/bearish.txt"),
            AgentPersona::Expert => include_str!("../prompts/expert.txt"),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AgentPersona::Bullish => "bullish",
            AgentPersona::Bearish => "bearish",
            AgentPersona::Expert => "expert",
        }
    }
}

impl fmt::Display for AgentPersona {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AgentPersona {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bullish" => Ok(AgentPersona::Bullish),
            "bearish" => Ok(AgentPersona::Bearish),
            "expert" => Ok(AgentPersona::Expert),
            other => Err(format!("unknown persona `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Suicide,
    NonSuicide,
    /// Transport failure or a reply without a usable label line.
    Abstain(String),
}

impl Verdict {
    pub fn label(&self) -> Option<Label> {
        match self {
            Verdict::Suicide => Some(Label::Suicide),
            Verdict::NonSuicide => Some(Label::NonSuicide),
            Verdict::Abstain(_) => None,
        }
    }
}

impl From<Label> for Verdict {
    fn from(l: Label) -> Self {
        match l {
            Label::Suicide => Verdict::Suicide,
            Label::NonSuicide => Verdict::NonSuicide,
        }
    }
}

fn label_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r#"(?i)\blabel\s*:\s*\[?\s*["']?\s*(non[_\- ]?suicide|suicide)\s*["']?\s*\]?\s*[.!]?\s*$"#)
            .expect("label regex compiles")
    })
}

/// Extracts the verdict from a persona reply: the last line of the form
/// `Label: suicide` / `Label: [non_suicide]` wins.
pub fn parse_verdict(reply: &str) -> Verdict {
    for line in reply.lines().rev() {
        let cleaned: String = line.chars().filter(|c| !matches!(c, '*' | '`' | '#')).collect();
        if let Some(c) = label_line().captures(cleaned.trim()) {
            let word = c[1].to_ascii_lowercase();
            return if word.starts_with("non") {
                Verdict::NonSuicide
            } else {
                Verdict::Suicide
            };
        }
    }
    Verdict::Abstain(format!("no label line in reply: {reply}"))
}

/// Asks one persona agent for a verdict. Never fails: transport errors and
/// malformed replies become [`Verdict::Abstain`].
pub fn agent_classify(client: &dyn ChatClient, persona: AgentPersona, text: &str) -> Verdict {
    match client.chat(persona.system_prompt(), text) {
        Ok(reply) => parse_verdict(&reply),
        Err(e) => Verdict::Abstain(format!("{persona} agent failed: {e}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::scorers::mock::MockChat;

    #[test]
    fn parses_response_format_variants() {
        assert_eq!(parse_verdict("Label: suicide"), Verdict::Suicide);
        assert_eq!(parse_verdict("Label: [non_suicide]"), Verdict::NonSuicide);
        assert_eq!(parse_verdict("label:NON_SUICIDE"), Verdict::NonSuicide);
        assert_eq!(parse_verdict("**Label:** Suicide."), Verdict::Suicide);
        assert_eq!(parse_verdict("Reasoning here.\n\nLabel: [ suicide ]\n"), Verdict::Suicide);
        assert_eq!(parse_verdict("Label: suicide\nOn reflection:\nLabel: non_suicide"), Verdict::NonSuicide);
        assert!(matches!(parse_verdict("I think this person needs help"), Verdict::Abstain(_)));
        // the format template itself is not a decision
        assert!(matches!(parse_verdict("Label: [suicide/non_suicide]"), Verdict::Abstain(_)));
        assert!(matches!(parse_verdict("Label: maybe"), Verdict::Abstain(_)));
        assert!(matches!(parse_verdict(""), Verdict::Abstain(_)));
    }

    #[test]
    fn agent_sends_persona_prompt_and_raw_text() {
        let chat = MockChat::new(|system, user| {
            assert!(system.starts_with("You are a conservative mental health professional"));
            assert_eq!(user, "raw \"text\"");
            Ok("Label: non_suicide".into())
        });
        assert_eq!(agent_classify(&chat, AgentPersona::Bearish, "raw \"text\""), Verdict::NonSuicide);
    }

    #[test]
    fn transport_failure_abstains() {
        let chat = MockChat::new(|_, _| Err(Error::Transport("down".into())));
        assert!(matches!(agent_classify(&chat, AgentPersona::Expert, "x"), Verdict::Abstain(_)));
    }

    #[test]
    fn persona_prompts_are_bundled() {
        assert!(AgentPersona::Bullish.system_prompt().contains("ultra-sensitive"));
        assert!(AgentPersona::Expert
            .system_prompt()
            .contains("BERT confidence is between 0.005 and 0.995"));
        for p in AgentPersona::ALL {
            assert!(p.system_prompt().contains("RESPONSE FORMAT:"));
            assert_eq!(p.name().parse::<AgentPersona>().unwrap(), p);
        }
    }
}
