//! Deterministic in-process stand-ins for scorers and chat models. Each
//! counts its invocations so callers can assert how much work was done.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::{ChatClient, Scorer};
use crate::analysis::SIMULATED_OUTPUT;
use crate::data::Probability;
use crate::error::Result;

type ChatFn = dyn Fn(&str, &str) -> Result<String> + Send + Sync;
type ScoreFn = dyn Fn(&str) -> Result<Probability> + Send + Sync;

pub struct MockChat {
    reply: Box<ChatFn>,
    calls: AtomicUsize,
}

impl MockChat {
    pub fn new(f: impl Fn(&str, &str) -> Result<String> + Send + Sync + 'static) -> Self {
        MockChat {
            reply: Box::new(f),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn fixed(reply: &str) -> Self {
        let reply = reply.to_string();
        MockChat::new(move |_, _| Ok(reply.clone()))
    }

    /// Bundled mock analyst: answers every post with the example analysis.
    pub fn analyst() -> Self {
        MockChat::fixed(SIMULATED_OUTPUT)
    }

    /// Replies in order; the last reply repeats once the list is exhausted.
    pub fn sequence(replies: Vec<String>) -> Self {
        assert!(!replies.is_empty(), "sequence needs at least one reply");
        let next = AtomicUsize::new(0);
        MockChat::new(move |_, _| {
            let i = next.fetch_add(1, Ordering::SeqCst).min(replies.len() - 1);
            Ok(replies[i].clone())
        })
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatClient for MockChat {
    fn chat(&self, system: &str, user: &str) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.reply)(system, user)
    }
}

pub struct MockScorer {
    score: Box<ScoreFn>,
    calls: AtomicUsize,
}

impl MockScorer {
    pub fn new(f: impl Fn(&str) -> Result<Probability> + Send + Sync + 'static) -> Self {
        MockScorer {
            score: Box::new(f),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn constant(p: f64) -> Self {
        let p = Probability::new(p).expect("constant mock probability in [0,1]");
        MockScorer::new(move |_| Ok(p))
    }

    /// Looks the text up in `table`, falling back to `default`.
    pub fn table(table: HashMap<String, f64>, default: f64) -> Self {
        MockScorer::new(move |text| Probability::new(table.get(text).copied().unwrap_or(default)))
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Scorer for MockScorer {
    fn score(&self, text: &str) -> Result<Probability> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.score)(text)
    }
}
