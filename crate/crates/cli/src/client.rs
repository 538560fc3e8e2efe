//! Blocking HTTP client for the rboard API.

use std::fmt;
use std::time::Duration;

use rboard_core::{NewDataset, Task};
use reqwest::blocking::{multipart, Response};
use serde_json::Value;

/// A failed command: a user or contract error (exit 2) or a transport
/// error (exit 3).
#[derive(Debug)]
pub enum Failure {
    User { code: String, message: String },
    Transport(String),
}

impl Failure {
    pub fn user(code: &str, message: impl Into<String>) -> Self {
        Failure::User {
            code: code.to_string(),
            message: message.into(),
        }
    }

    pub fn transport(message: impl Into<String>) -> Self {
        Failure::Transport(message.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::User { .. } => 2,
            Failure::Transport(_) => 3,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::User { code, message } => write!(f, "{code}: {message}"),
            Failure::Transport(message) => write!(f, "network error: {message}"),
        }
    }
}

pub struct Client {
    base: String,
    http: reqwest::blocking::Client,
}

impl Client {
    pub fn new(base: &str) -> Result<Self, Failure> {
        let http = reqwest::blocking::Client::builder()
            .connect_timeout(Duration::from_secs(10))
            .timeout(Duration::from_secs(600))
            .build()
            .map_err(|e| Failure::transport(e.to_string()))?;
        Ok(Client {
            base: base.trim_end_matches('/').to_string(),
            http,
        })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/api/v1{path}", self.base)
    }

    /// Body of a 2xx response. 4xx bodies become user errors carrying the
    /// API error code; anything else is a transport error.
    fn body(&self, sent: reqwest::Result<Response>) -> Result<Vec<u8>, Failure> {
        let response = sent.map_err(|e| Failure::transport(e.to_string()))?;
        let status = response.status();
        let body = response.bytes().map_err(|e| Failure::transport(e.to_string()))?.to_vec();
        if status.is_success() {
            return Ok(body);
        }
        let parsed: Option<Value> = serde_json::from_slice(&body).ok();
        let field = |name: &str| parsed.as_ref().and_then(|v| v[name].as_str()).map(str::to_string);
        let code = field("code").unwrap_or_else(|| status.as_u16().to_string());
        let message = field("message").unwrap_or_else(|| String::from_utf8_lossy(&body).into_owned());
        if status.is_client_error() {
            Err(Failure::User { code, message })
        } else {
            Err(Failure::transport(format!("server answered {status}: {message}")))
        }
    }

    fn json(&self, sent: reqwest::Result<Response>) -> Result<Value, Failure> {
        let body = self.body(sent)?;
        serde_json::from_slice(&body).map_err(|e| Failure::transport(format!("unreadable response: {e}")))
    }

    pub fn register_dataset(&self, new: &NewDataset, raw: Vec<u8>, token: &str) -> Result<Value, Failure> {
        let descriptor = serde_json::to_string(new).map_err(|e| Failure::user("invalid_config", e.to_string()))?;
        let form = multipart::Form::new()
            .text("descriptor", descriptor)
            .part("raw", multipart::Part::bytes(raw).file_name("raw.csv"));
        self.json(self.http.post(self.url("/datasets")).bearer_auth(token).multipart(form).send())
    }

    pub fn submit(&self, archive: Vec<u8>, task: Task, author: &str, token: &str) -> Result<Value, Failure> {
        let form = multipart::Form::new()
            .part("archive", multipart::Part::bytes(archive).file_name("submission.zip"))
            .text("task", task.as_str())
            .text("author", author.to_string());
        self.json(self.http.post(self.url("/submissions")).bearer_auth(token).multipart(form).send())
    }

    pub fn submission(&self, id: &str) -> Result<Value, Failure> {
        self.json(self.http.get(self.url(&format!("/submissions/{id}"))).send())
    }

    /// Raw leaderboard response body.
    pub fn leaderboard(&self, task: Task) -> Result<Vec<u8>, Failure> {
        self.body(self.http.get(self.url(&format!("/leaderboard/{task}"))).send())
    }
}
