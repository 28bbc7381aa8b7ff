#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use riskcascade::analysis::{DistressLevel, FundamentalAnalysis};
use riskcascade::data::{Dataset, Label, Post, Split};
use riskcascade::scorers::MockChat;

type Handler = dyn Fn(&str, &str) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server on an ephemeral port; one request per connection.
pub struct MockServer {
    pub url: String,
    hits: Arc<AtomicUsize>,
}

impl MockServer {
    /// `handler(path, body) -> (status, body)`.
    pub fn start(handler: impl Fn(&str, &str) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let hits = Arc::new(AtomicUsize::new(0));
        let counter = hits.clone();
        let handler: Arc<Handler> = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                counter.fetch_add(1, Ordering::SeqCst);
                let h = handler.clone();
                thread::spawn(move || serve(stream, &*h));
            }
        });
        MockServer { url, hits }
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

fn serve(stream: TcpStream, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    if reader.read_line(&mut request_line).is_err() {
        return;
    }
    let path = request_line.split_whitespace().nth(1).unwrap_or("/").to_string();
    let mut content_length = 0;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; content_length];
    let _ = reader.read_exact(&mut body);
    let (status, reply) = handler(&path, &String::from_utf8_lossy(&body));
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    );
}

/// A local address with nothing listening on it.
pub fn unreachable_url() -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    format!("http://{addr}")
}

const RISK_CUES: [&str; 4] = [
    "giving my things away",
    "wrote letters to everyone",
    "wont be around much longer",
    "said goodbye to my dog",
];
const NEUTRAL_CUES: [&str; 4] = [
    "went hiking with friends",
    "started a new recipe",
    "fixed my old bike",
    "watched the game tonight",
];

/// Text of post `i` in a synthetic domain. Explicit positives state intent
/// outright; implicit positives only carry indirect cues.
pub fn synthetic_text(domain: &str, i: usize, positive: bool) -> String {
    let cue = if positive { RISK_CUES[i % 4] } else { NEUTRAL_CUES[i % 4] };
    match (domain, positive) {
        ("explicit", true) => format!("explicit {i} i want to kill myself tonight and i {cue}"),
        ("explicit", false) => format!("explicit {i} feeling fine today, {cue}"),
        (_, _) => format!("{domain} {i} lately i {cue}"),
    }
}

/// Posts `start..start + n` of a domain; even indices are positive.
pub fn synthetic_posts(domain: &str, start: usize, n: usize) -> Vec<Post> {
    (start..start + n)
        .map(|i| {
            let positive = i % 2 == 0;
            let label = if positive { Label::Suicide } else { Label::NonSuicide };
            Post::new(format!("{domain}-{i}"), synthetic_text(domain, i, positive), Some(label)).unwrap()
        })
        .collect()
}

pub fn synthetic_dataset(domain: &str, n: usize, split: Split) -> Dataset {
    Dataset::new(domain, split, synthetic_posts(domain, 0, n)).unwrap()
}

/// What a good analyst would return for a synthetic post.
pub fn cue_analysis(text: &str) -> FundamentalAnalysis {
    let risky = RISK_CUES.iter().any(|c| text.contains(c));
    FundamentalAnalysis {
        suicide_intent: risky,
        emotional_distress_level: if risky { DistressLevel::High } else { DistressLevel::Low },
        has_plan: risky && text.contains("letters"),
        is_metaphor: false,
        farewell_hint: risky && text.contains("goodbye"),
        reasoning: format!("cues found in a post of {} characters", text.len()),
    }
}

/// Mock analyst that answers from the cues in the prompt.
pub fn cue_analyst() -> MockChat {
    MockChat::new(|_, user| Ok(cue_analysis(user).to_json()))
}

pub fn write_dataset(path: &Path, ds: &Dataset) {
    let mut out = String::new();
    for p in ds.posts() {
        let label = p.gold_label().map(|l| l.as_int());
        out.push_str(&serde_json::json!({ "id": p.id(), "text": p.text(), "label": label }).to_string());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}
