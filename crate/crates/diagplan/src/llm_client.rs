//! Completion clients: an OpenAI-compatible chat endpoint, and a JSONL
//! transcript that can record live traffic and replay it offline.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use diagplan_core::llm::{ClientError, CompletionClient, DecodingParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ENDPOINT_VAR: &str = "DIAGRAM_LLM_ENDPOINT";
pub const KEY_VAR: &str = "DIAGRAM_LLM_KEY";
pub const MODEL_VAR: &str = "DIAGRAM_LLM_MODEL";
pub const DEFAULT_MODEL: &str = "gpt-4";

pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Chat-completions client. `endpoint` is the full URL of the
/// `/chat/completions` resource.
pub struct HttpClient {
    endpoint: String,
    key: String,
    model: String,
    agent: ureq::Agent,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, key: impl Into<String>, model: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpClient { endpoint: endpoint.into(), key: key.into(), model: model.into(), agent }
    }

    /// Reads `DIAGRAM_LLM_ENDPOINT`, `DIAGRAM_LLM_KEY` and optionally
    /// `DIAGRAM_LLM_MODEL`.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_VAR).ok().filter(|s| !s.is_empty())?;
        let key = std::env::var(KEY_VAR).unwrap_or_default();
        let model = std::env::var(MODEL_VAR).ok().filter(|s| !s.is_empty()).unwrap_or_else(|| DEFAULT_MODEL.into());
        Some(Self::new(endpoint, key, model))
    }
}

impl CompletionClient for HttpClient {
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, ClientError> {
        let body = ChatRequest {
            model: &self.model,
            messages: [ChatMessage { role: "user", content: prompt }],
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        };
        let body = serde_json::to_string(&body).map_err(|e| ClientError::Protocol(e.to_string()))?;
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if !self.key.is_empty() {
            req = req.header("Authorization", &format!("Bearer {}", self.key));
        }
        let mut resp = req.send(body.as_bytes()).map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.body_mut().read_to_string().map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Transport(format!("endpoint answered {status}: {text}")));
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| ClientError::Protocol(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or(ClientError::NoCompletion)
    }
}

/// One line of a transcript file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub prompt_hash: String,
    pub completion: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TranscriptError {
    #[error("cannot open transcript {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("transcript line {line}: {source}")]
    Line { line: usize, source: serde_json::Error },
}

/// Answers prompts from a transcript. Repeated prompts get their recorded
/// completions in order; the last one is reused once they run out.
pub struct ReplayClient {
    entries: Mutex<BTreeMap<String, VecDeque<String>>>,
}

impl ReplayClient {
    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut map: BTreeMap<String, VecDeque<String>> = BTreeMap::new();
        for e in entries {
            map.entry(e.prompt_hash).or_default().push_back(e.completion);
        }
        ReplayClient { entries: Mutex::new(map) }
    }

    pub fn open(path: &Path) -> Result<Self, TranscriptError> {
        let file = File::open(path).map_err(|source| TranscriptError::Io { path: path.display().to_string(), source })?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|source| TranscriptError::Io { path: path.display().to_string(), source })?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|source| TranscriptError::Line { line: i + 1, source })?);
        }
        Ok(Self::from_entries(entries))
    }
}

impl CompletionClient for ReplayClient {
    fn complete(&self, prompt: &str, _: &DecodingParams) -> Result<String, ClientError> {
        let hash = prompt_hash(prompt);
        let mut entries = self.entries.lock().map_err(|_| ClientError::Protocol("transcript lock poisoned".into()))?;
        let queue = entries
            .get_mut(&hash)
            .ok_or_else(|| ClientError::Transport(format!("prompt {hash} is not in the transcript")))?;
        if queue.len() > 1 {
            Ok(queue.pop_front().expect("non-empty"))
        } else {
            queue.front().cloned().ok_or(ClientError::NoCompletion)
        }
    }
}

/// Forwards to `inner` and appends every exchange to a transcript.
pub struct RecordingClient<C> {
    inner: C,
    out: Mutex<File>,
}

impl<C: CompletionClient> RecordingClient<C> {
    pub fn create(inner: C, path: &Path) -> Result<Self, TranscriptError> {
        let out = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| TranscriptError::Io { path: path.display().to_string(), source })?;
        Ok(RecordingClient { inner, out: Mutex::new(out) })
    }
}

impl<C: CompletionClient> CompletionClient for RecordingClient<C> {
    fn complete(&self, prompt: &str, params: &DecodingParams) -> Result<String, ClientError> {
        let completion = self.inner.complete(prompt, params)?;
        let entry = TranscriptEntry { prompt_hash: prompt_hash(prompt), completion: completion.clone() };
        let line = serde_json::to_string(&entry).map_err(|e| ClientError::Protocol(e.to_string()))?;
        let mut out = self.out.lock().map_err(|_| ClientError::Protocol("transcript lock poisoned".into()))?;
        writeln!(out, "{line}").map_err(|e| ClientError::Transport(format!("cannot record transcript: {e}")))?;
        Ok(completion)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use diagplan_core::llm::ScriptedClient;
    use std::io::Read;
    use std::net::TcpListener;

    /// Serves one HTTP exchange with a canned response and hands back the
    /// raw request.
    fn one_shot_server(status: &str, body: &str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let response = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            loop {
                let n = stream.read(&mut chunk).unwrap();
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf);
                if let Some(split) = text.find("\r\n\r\n") {
                    let len = text[..split]
                        .lines()
                        .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:").map(|v| v.trim().parse::<usize>().unwrap()))
                        .unwrap_or(0);
                    if buf.len() >= split + 4 + len {
                        break;
                    }
                }
                if n == 0 {
                    break;
                }
            }
            stream.write_all(response.as_bytes()).unwrap();
            String::from_utf8(buf).unwrap()
        });
        (url, handle)
    }

    #[test]
    fn http_client_round_trip() {
        let (url, server) = one_shot_server("200 OK", r#"{"choices":[{"message":{"role":"assistant","content":"NO ISSUES"}}]}"#);
        let client = HttpClient::new(url, "secret", "test-model");
        let params = DecodingParams { temperature: 0.0, max_tokens: Some(64) };
        assert_eq!(client.complete("hello \"world\"", &params).unwrap(), "NO ISSUES");
        let request = server.join().unwrap();
        assert!(request.starts_with("POST /v1/chat/completions"));
        assert!(request.to_ascii_lowercase().contains("authorization: bearer secret"));
        let body: serde_json::Value = serde_json::from_str(request.split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body["model"], "test-model");
        assert_eq!(body["messages"][0]["content"], "hello \"world\"");
        assert_eq!(body["max_tokens"], 64);
    }

    #[test]
    fn http_errors_are_transport_errors() {
        let (url, server) = one_shot_server("500 Internal Server Error", r#"{"error":"boom"}"#);
        let client = HttpClient::new(url, "", DEFAULT_MODEL);
        assert!(matches!(client.complete("x", &DecodingParams::default()), Err(ClientError::Transport(_))));
        server.join().unwrap();

        let (url, server) = one_shot_server("200 OK", r#"{"choices":[]}"#);
        let client = HttpClient::new(url, "", DEFAULT_MODEL);
        assert_eq!(client.complete("x", &DecodingParams::default()), Err(ClientError::NoCompletion));
        server.join().unwrap();

        let closed = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", closed.local_addr().unwrap());
        drop(closed);
        let client = HttpClient::new(url, "", DEFAULT_MODEL);
        assert!(matches!(client.complete("x", &DecodingParams::default()), Err(ClientError::Transport(_))));
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let live = ScriptedClient::new(["first", "second", "other"]);
        let rec = RecordingClient::create(&live, &path).unwrap();
        let p = DecodingParams::default();
        assert_eq!(rec.complete("a", &p).unwrap(), "first");
        assert_eq!(rec.complete("a", &p).unwrap(), "second");
        assert_eq!(rec.complete("b", &p).unwrap(), "other");

        let replay = ReplayClient::open(&path).unwrap();
        assert_eq!(replay.complete("b", &p).unwrap(), "other");
        assert_eq!(replay.complete("a", &p).unwrap(), "first");
        assert_eq!(replay.complete("a", &p).unwrap(), "second");
        assert_eq!(replay.complete("a", &p).unwrap(), "second");
        assert!(matches!(replay.complete("c", &p), Err(ClientError::Transport(_))));

        let line = std::fs::read_to_string(&path).unwrap().lines().next().unwrap().to_string();
        let entry: TranscriptEntry = serde_json::from_str(&line).unwrap();
        assert_eq!(entry.prompt_hash, prompt_hash("a"));
        assert_eq!(entry.prompt_hash.len(), 64);
    }

    #[test]
    fn malformed_transcript_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "{\"prompt_hash\":\"x\",\"completion\":\"y\"}\n\nnot json\n").unwrap();
        assert!(matches!(ReplayClient::open(&path), Err(TranscriptError::Line { line: 3, .. })));
    }
}
