//! LLM backend contract plus the strict parsers for everything the
//! pipeline reads back out of a completion: child selections, thoughts,
//! and whole-function patches.
//!
//! Two production backends: transcript replay (deterministic, used by CI
//! and anywhere reproducibility matters) and an HTTP chat endpoint.
//! Record mode wraps any backend and appends `{hash, purpose, response}`
//! lines so a later replay run is byte-for-byte identical.

use std::collections::HashMap;
use std::collections::VecDeque;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::orchestrate::{RootCauseCategory, Thought};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Purpose {
    Select,
    Filter,
    Thought,
    Fix,
    Repair,
    Extract,
}

impl Purpose {
    pub fn label(self) -> &'static str {
        match self {
            Purpose::Select => "select",
            Purpose::Filter => "filter",
            Purpose::Thought => "thought",
            Purpose::Fix => "fix",
            Purpose::Repair => "repair",
            Purpose::Extract => "extract",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptBundle {
    pub system: String,
    pub user: String,
    pub purpose: Purpose,
    pub canonical_hash: String,
}

fn canonicalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.replace("\r\n", "\n").split('\n') {
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

impl PromptBundle {
    pub fn new(system: impl Into<String>, user: impl Into<String>, purpose: Purpose) -> Self {
        let system = system.into();
        let user = user.into();
        let mut hasher = Sha256::new();
        hasher.update(canonicalize(&system));
        hasher.update(b"\x00");
        hasher.update(canonicalize(&user));
        let canonical_hash = hex::encode(hasher.finalize());
        PromptBundle {
            system,
            user,
            purpose,
            canonical_hash,
        }
    }
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("no recorded response for {purpose} prompt {hash}")]
    ReplayMiss { purpose: &'static str, hash: String },
    #[error("http backend failed after retries: {0}")]
    Http(String),
    #[error("transcript io: {0}")]
    TranscriptIo(#[from] std::io::Error),
    #[error("transcript line {0} is not valid json: {1}")]
    TranscriptFormat(usize, String),
}

pub trait Backend {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, GatewayError>;
}

pub fn complete(prompt: &PromptBundle, backend: &dyn Backend) -> Result<String, GatewayError> {
    let start = Instant::now();
    let result = backend.complete(prompt);
    log::debug!(
        "llm call purpose={} hash={} latency_ms={} ok={}",
        prompt.purpose.label(),
        &prompt.canonical_hash[..12],
        start.elapsed().as_millis(),
        result.is_ok()
    );
    result
}

#[derive(Debug, Serialize, Deserialize)]
struct TranscriptLine {
    hash: String,
    purpose: String,
    response: String,
}

/// Replays recorded responses; each occurrence of a hash consumes the
/// next recorded response for that hash, in file order.
pub struct ReplayBackend {
    entries: Mutex<HashMap<String, VecDeque<String>>>,
}

impl ReplayBackend {
    pub fn from_file(path: &Path) -> Result<Self, GatewayError> {
        let file = std::fs::File::open(path)?;
        let mut entries: HashMap<String, VecDeque<String>> = HashMap::new();
        for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TranscriptLine = serde_json::from_str(&line)
                .map_err(|e| GatewayError::TranscriptFormat(idx + 1, e.to_string()))?;
            entries.entry(parsed.hash).or_default().push_back(parsed.response);
        }
        Ok(ReplayBackend {
            entries: Mutex::new(entries),
        })
    }
}

impl Backend for ReplayBackend {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, GatewayError> {
        let mut entries = self.entries.lock().unwrap();
        entries
            .get_mut(&prompt.canonical_hash)
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| GatewayError::ReplayMiss {
                purpose: prompt.purpose.label(),
                hash: prompt.canonical_hash.clone(),
            })
    }
}

/// Wraps any backend and appends every completion to a transcript file.
pub struct RecordBackend<'a> {
    inner: &'a dyn Backend,
    path: PathBuf,
    sink: Mutex<std::fs::File>,
}

impl<'a> RecordBackend<'a> {
    pub fn create(inner: &'a dyn Backend, path: &Path) -> Result<Self, GatewayError> {
        let sink = std::fs::File::create(path)?;
        Ok(RecordBackend {
            inner,
            path: path.to_path_buf(),
            sink: Mutex::new(sink),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Backend for RecordBackend<'_> {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, GatewayError> {
        let response = self.inner.complete(prompt)?;
        let line = serde_json::to_string(&TranscriptLine {
            hash: prompt.canonical_hash.clone(),
            purpose: prompt.purpose.label().to_string(),
            response: response.clone(),
        })
        .expect("transcript line serializes");
        let mut sink = self.sink.lock().unwrap();
        writeln!(sink, "{line}")?;
        sink.flush()?;
        Ok(response)
    }
}

pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    pub api_key: String,
    pub temperature_for: fn(Purpose) -> Option<f32>,
}

/// Selections must be stable; creative steps keep the provider default.
pub fn default_temperature(purpose: Purpose) -> Option<f32> {
    match purpose {
        Purpose::Select | Purpose::Filter | Purpose::Extract => Some(0.0),
        Purpose::Thought | Purpose::Fix | Purpose::Repair => None,
    }
}

pub struct HttpBackend {
    cfg: HttpConfig,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f32>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

impl HttpBackend {
    pub fn new(cfg: HttpConfig) -> Self {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(120))
            .build()
            .expect("http client");
        HttpBackend { cfg, client }
    }

    fn call_once(&self, prompt: &PromptBundle) -> Result<String, String> {
        let req = ChatRequest {
            model: &self.cfg.model,
            messages: vec![
                ChatMessage {
                    role: "system",
                    content: &prompt.system,
                },
                ChatMessage {
                    role: "user",
                    content: &prompt.user,
                },
            ],
            temperature: (self.cfg.temperature_for)(prompt.purpose),
        };
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let resp = self
            .client
            .post(url)
            .bearer_auth(&self.cfg.api_key)
            .json(&req)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("status {status}"));
        }
        let body: ChatResponse = resp.json().map_err(|e| e.to_string())?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| "empty choices".to_string())
    }
}

impl Backend for HttpBackend {
    fn complete(&self, prompt: &PromptBundle) -> Result<String, GatewayError> {
        let mut delay = Duration::from_millis(500);
        let mut last_err = String::new();
        for attempt in 0..3 {
            if attempt > 0 {
                std::thread::sleep(delay);
                delay *= 2;
            }
            match self.call_once(prompt) {
                Ok(text) => return Ok(text),
                Err(e) => last_err = e,
            }
        }
        Err(GatewayError::Http(last_err))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseFailure {
    #[error("no valid candidate indices in response")]
    EmptySelection,
    #[error("missing {0} section")]
    ThoughtSection(&'static str),
    #[error("expected exactly one fenced code block, found {0}")]
    FenceCount(usize),
    #[error("patch does not parse as a single function declaration")]
    PatchShape,
    #[error("patch declares `{got}`, expected `{want}`")]
    PatchName { got: String, want: String },
}

/// Distinct integers in [1, n_candidates], order of appearance,
/// truncated to `cap`.
pub fn parse_selection(
    response: &str,
    n_candidates: usize,
    cap: usize,
) -> Result<Vec<usize>, ParseFailure> {
    let mut seen = Vec::new();
    let mut current = String::new();
    for ch in response.chars().chain(std::iter::once(' ')) {
        if ch.is_ascii_digit() {
            current.push(ch);
            continue;
        }
        if !current.is_empty() {
            if let Ok(v) = current.parse::<usize>() {
                if (1..=n_candidates).contains(&v) && !seen.contains(&v) {
                    seen.push(v);
                }
            }
            current.clear();
        }
    }
    seen.truncate(cap);
    if seen.is_empty() {
        return Err(ParseFailure::EmptySelection);
    }
    Ok(seen)
}

fn normalize_category(raw: &str) -> RootCauseCategory {
    let lower = raw.trim().trim_end_matches('.').to_lowercase();
    let squashed: String = lower
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    let words: Vec<&str> = squashed.split_whitespace().collect();
    let joined = words.join(" ");
    let has = |needle: &str| joined.contains(needle);
    match joined.as_str() {
        "schedule randomness" => return RootCauseCategory::ScheduleRandomness,
        "unordered collection iteration" => {
            return RootCauseCategory::UnorderedCollectionIteration
        }
        "timestamp discrepancy" => return RootCauseCategory::TimestampDiscrepancy,
        "state pollution" => return RootCauseCategory::StatePollution,
        "time dependent" => return RootCauseCategory::TimeDependent,
        _ => {}
    }
    if has("map iteration") || has("iteration order") || has("unordered") {
        RootCauseCategory::UnorderedCollectionIteration
    } else if has("schedule") || has("race") || has("concurren") || has("async") || has("goroutine")
    {
        RootCauseCategory::ScheduleRandomness
    } else if has("timestamp") {
        RootCauseCategory::TimestampDiscrepancy
    } else if has("pollution") || has("shared state") || has("environment") {
        RootCauseCategory::StatePollution
    } else if has("time") || has("clock") || has("cutoff") {
        RootCauseCategory::TimeDependent
    } else if joined.is_empty() {
        RootCauseCategory::Other("unspecified".to_string())
    } else {
        RootCauseCategory::Other(joined)
    }
}

/// Requires labeled sections `CATEGORY:`, `EXPLANATION:`, `PLAN:` in any
/// order; each section runs until the next label or end of text.
pub fn parse_thought(response: &str) -> Result<Thought, ParseFailure> {
    const LABELS: [&str; 3] = ["CATEGORY:", "EXPLANATION:", "PLAN:"];
    let mut sections: HashMap<&str, String> = HashMap::new();
    let mut current: Option<&str> = None;
    for line in response.lines() {
        let trimmed = line.trim_start();
        let mut matched = false;
        for label in LABELS {
            if let Some(rest) = trimmed.strip_prefix(label) {
                sections.insert(label, rest.trim().to_string());
                current = Some(label);
                matched = true;
                break;
            }
        }
        if matched {
            continue;
        }
        if let Some(label) = current {
            let section = sections.get_mut(label).unwrap();
            if !section.is_empty() || !line.trim().is_empty() {
                if !section.is_empty() {
                    section.push('\n');
                }
                section.push_str(line.trim_end());
            }
        }
    }
    let get = |label: &'static str| -> Result<String, ParseFailure> {
        let label_key = format!("{label}:");
        sections
            .get(label_key.as_str())
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or(ParseFailure::ThoughtSection(label))
    };
    let category = normalize_category(&get("CATEGORY")?);
    let explanation = get("EXPLANATION")?;
    let plan = get("PLAN")?;
    Ok(Thought {
        category,
        explanation,
        plan,
    })
}

fn fenced_blocks(response: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut in_block = false;
    let mut current = String::new();
    for line in response.lines() {
        if line.trim_start().starts_with("```") {
            if in_block {
                blocks.push(current.clone());
                current.clear();
            }
            in_block = !in_block;
            continue;
        }
        if in_block {
            current.push_str(line);
            current.push('\n');
        }
    }
    blocks
}

/// Whole-function replacement policy: the response must carry exactly one
/// fenced code block parsing as a single function declaration named
/// `expected_name`.
pub fn parse_patch(response: &str, expected_name: &str) -> Result<String, ParseFailure> {
    let blocks = fenced_blocks(response);
    if blocks.len() != 1 {
        return Err(ParseFailure::FenceCount(blocks.len()));
    }
    let body = blocks.into_iter().next().unwrap();
    let wrapped = format!("package p\n\n{body}");
    let fns = crate::goparse::parse_functions(&wrapped, "patch.go")
        .map_err(|_| ParseFailure::PatchShape)?;
    let top: Vec<&crate::goparse::SubjectFunction> = fns
        .iter()
        .filter(|f| f.kind != crate::goparse::FnKind::Anonymous)
        .collect();
    if top.len() != 1 {
        return Err(ParseFailure::PatchShape);
    }
    if top[0].name != expected_name {
        return Err(ParseFailure::PatchName {
            got: top[0].name.clone(),
            want: expected_name.to_string(),
        });
    }
    Ok(body.trim_end().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_survives_crlf_and_trailing_whitespace() {
        let a = PromptBundle::new("sys", "line one  \nline two", Purpose::Fix);
        let b = PromptBundle::new("sys", "line one\r\nline two", Purpose::Fix);
        assert_eq!(a.canonical_hash, b.canonical_hash);
        let c = PromptBundle::new("sys", "line one\nline two changed", Purpose::Fix);
        assert_ne!(a.canonical_hash, c.canonical_hash);
    }

    #[test]
    fn replay_consumes_responses_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let p = PromptBundle::new("s", "u", Purpose::Thought);
        let lines = [
            format!(
                r#"{{"hash":"{}","purpose":"thought","response":"A"}}"#,
                p.canonical_hash
            ),
            format!(
                r#"{{"hash":"{}","purpose":"thought","response":"B"}}"#,
                p.canonical_hash
            ),
        ];
        std::fs::write(&path, lines.join("\n")).unwrap();
        let backend = ReplayBackend::from_file(&path).unwrap();
        assert_eq!(backend.complete(&p).unwrap(), "A");
        assert_eq!(backend.complete(&p).unwrap(), "B");
        assert!(matches!(
            backend.complete(&p),
            Err(GatewayError::ReplayMiss { .. })
        ));
    }

    #[test]
    fn unknown_hash_is_a_replay_miss() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "").unwrap();
        let backend = ReplayBackend::from_file(&path).unwrap();
        let p = PromptBundle::new("s", "u", Purpose::Select);
        assert!(matches!(
            backend.complete(&p),
            Err(GatewayError::ReplayMiss { .. })
        ));
    }

    struct Fixed(&'static str);
    impl Backend for Fixed {
        fn complete(&self, _p: &PromptBundle) -> Result<String, GatewayError> {
            Ok(self.0.to_string())
        }
    }

    #[test]
    fn record_then_replay_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.jsonl");
        let inner = Fixed("the answer");
        let p = PromptBundle::new("s", "u", Purpose::Fix);
        {
            let rec = RecordBackend::create(&inner, &path).unwrap();
            assert_eq!(rec.complete(&p).unwrap(), "the answer");
            assert_eq!(rec.complete(&p).unwrap(), "the answer");
        }
        let replay = ReplayBackend::from_file(&path).unwrap();
        assert_eq!(replay.complete(&p).unwrap(), "the answer");
        assert_eq!(replay.complete(&p).unwrap(), "the answer");
        assert!(replay.complete(&p).is_err());
    }

    #[test]
    fn selection_extracts_in_order_with_cap() {
        assert_eq!(parse_selection("I choose 2 and 5.", 6, 3).unwrap(), vec![2, 5]);
        assert_eq!(parse_selection("1, 1, 9", 6, 3).unwrap(), vec![1]);
        assert_eq!(parse_selection("3 2 1 4", 6, 2).unwrap(), vec![3, 2]);
        assert_eq!(
            parse_selection("none are relevant", 6, 3),
            Err(ParseFailure::EmptySelection)
        );
    }

    #[test]
    fn thought_sections_parse_in_any_order() {
        let resp = "PLAN: sort the keys first\nCATEGORY: unordered-collection-iteration\nEXPLANATION: map order\nis random here";
        let t = parse_thought(resp).unwrap();
        assert_eq!(t.category, RootCauseCategory::UnorderedCollectionIteration);
        assert_eq!(t.explanation, "map order\nis random here");
        assert_eq!(t.plan, "sort the keys first");
    }

    #[test]
    fn category_aliases_normalize() {
        let t = parse_thought("CATEGORY: Map iteration order\nEXPLANATION: e\nPLAN: p").unwrap();
        assert_eq!(t.category, RootCauseCategory::UnorderedCollectionIteration);
        let t = parse_thought("CATEGORY: async race\nEXPLANATION: e\nPLAN: p").unwrap();
        assert_eq!(t.category, RootCauseCategory::ScheduleRandomness);
        let t = parse_thought("CATEGORY: cosmic rays\nEXPLANATION: e\nPLAN: p").unwrap();
        assert_eq!(t.category, RootCauseCategory::Other("cosmic rays".into()));
    }

    #[test]
    fn missing_section_fails_thought_parse() {
        assert_eq!(
            parse_thought("CATEGORY: other\nPLAN: p"),
            Err(ParseFailure::ThoughtSection("EXPLANATION"))
        );
    }

    #[test]
    fn http_backend_talks_to_chat_endpoint() {
        use std::io::Read;
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = [0u8; 8192];
            let mut req = Vec::new();
            loop {
                let n = stream.read(&mut buf).unwrap();
                req.extend_from_slice(&buf[..n]);
                let text = String::from_utf8_lossy(&req);
                if let Some(pos) = text.find("\r\n\r\n") {
                    let header = &text[..pos];
                    let len: usize = header
                        .lines()
                        .find_map(|l| l.to_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse().unwrap()))
                        .unwrap_or(0);
                    if req.len() >= pos + 4 + len {
                        break;
                    }
                }
            }
            let body = String::from_utf8_lossy(&req);
            assert!(body.contains("\"model\":\"m1\""));
            assert!(body.contains("Bearer sk-test"));
            let payload =
                r#"{"choices":[{"message":{"role":"assistant","content":"pong"}}]}"#;
            let resp = format!(
                "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
                payload.len(),
                payload
            );
            stream.write_all(resp.as_bytes()).unwrap();
        });
        let backend = HttpBackend::new(HttpConfig {
            base_url: format!("http://{addr}/v1"),
            model: "m1".to_string(),
            api_key: "sk-test".to_string(),
            temperature_for: default_temperature,
        });
        let p = PromptBundle::new("sys", "ping", Purpose::Select);
        assert_eq!(backend.complete(&p).unwrap(), "pong");
        handle.join().unwrap();
    }

    #[test]
    fn patch_requires_one_matching_function_block() {
        let good = "Here you go:\n```go\nfunc TestX(t *testing.T) {\n\tassert.True(t, true)\n}\n```";
        let text = parse_patch(good, "TestX").unwrap();
        assert!(text.starts_with("func TestX"));

        let two = "```go\nfunc TestX(t *testing.T) {}\n```\n```go\nfunc TestY(t *testing.T) {}\n```";
        assert_eq!(parse_patch(two, "TestX"), Err(ParseFailure::FenceCount(2)));

        let wrong = "```go\nfunc TestY(t *testing.T) {\n\t_ = 1\n}\n```";
        assert!(matches!(
            parse_patch(wrong, "TestX"),
            Err(ParseFailure::PatchName { .. })
        ));

        let prose = "```go\nthis is not code\n```";
        assert!(parse_patch(prose, "TestX").is_err());
    }
}
