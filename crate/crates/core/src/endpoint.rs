//! JSON-over-HTTP model endpoints and the bounded retry policy shared by the
//! external classifier, external parser and HTTP extraction backends.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::config::RetrySettings;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EndpointError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP {0}")]
    Status(u16),
    #[error("response is not valid JSON: {0}")]
    Decode(String),
}

impl EndpointError {
    /// Network failures, timeouts, 429 and 5xx are worth another attempt.
    pub fn is_retriable(&self) -> bool {
        match self {
            EndpointError::Transport(_) | EndpointError::Timeout => true,
            EndpointError::Status(code) => *code == 429 || *code >= 500,
            EndpointError::Decode(_) => false,
        }
    }
}

/// A model service reachable with one JSON request per call.
pub trait JsonEndpoint: Send + Sync {
    fn post_json(&self, body: &Value) -> Result<Value, EndpointError>;
}

pub struct HttpEndpoint {
    url: String,
    agent: ureq::Agent,
}

impl HttpEndpoint {
    pub fn new(url: impl Into<String>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        HttpEndpoint {
            url: url.into(),
            agent,
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl JsonEndpoint for HttpEndpoint {
    fn post_json(&self, body: &Value) -> Result<Value, EndpointError> {
        let mut response = self
            .agent
            .post(&self.url)
            .send_json(body)
            .map_err(map_ureq)?;
        response
            .body_mut()
            .read_json::<Value>()
            .map_err(|e| EndpointError::Decode(e.to_string()))
    }
}

fn map_ureq(e: ureq::Error) -> EndpointError {
    match e {
        ureq::Error::StatusCode(code) => EndpointError::Status(code),
        ureq::Error::Timeout(_) => EndpointError::Timeout,
        other => EndpointError::Transport(other.to_string()),
    }
}

/// Replays a fixed sequence of responses; the last one repeats once the
/// queue is drained. Every request body is recorded.
pub struct ScriptedEndpoint {
    responses: Mutex<VecDeque<Result<Value, EndpointError>>>,
    last: Mutex<Option<Result<Value, EndpointError>>>,
    requests: Mutex<Vec<Value>>,
}

impl ScriptedEndpoint {
    pub fn new(responses: Vec<Result<Value, EndpointError>>) -> Self {
        ScriptedEndpoint {
            responses: Mutex::new(responses.into()),
            last: Mutex::new(None),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn always(response: Result<Value, EndpointError>) -> Self {
        Self::new(vec![response])
    }

    pub fn calls(&self) -> usize {
        self.requests.lock().unwrap().len()
    }

    pub fn requests(&self) -> Vec<Value> {
        self.requests.lock().unwrap().clone()
    }
}

impl JsonEndpoint for ScriptedEndpoint {
    fn post_json(&self, body: &Value) -> Result<Value, EndpointError> {
        self.requests.lock().unwrap().push(body.clone());
        let next = self.responses.lock().unwrap().pop_front();
        let mut last = self.last.lock().unwrap();
        match next {
            Some(r) => {
                *last = Some(r.clone());
                r
            }
            None => last
                .clone()
                .unwrap_or(Err(EndpointError::Transport("no scripted response".into()))),
        }
    }
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum RetryError {
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: EndpointError },
    #[error(transparent)]
    Fatal(EndpointError),
}

/// Bounded attempts with exponential backoff (200 ms, 400 ms, ... by default).
#[derive(Clone, Debug, PartialEq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy::from(&RetrySettings::default())
    }
}

impl From<&RetrySettings> for RetryPolicy {
    fn from(s: &RetrySettings) -> Self {
        RetryPolicy {
            attempts: s.attempts.max(1),
            initial_backoff: Duration::from_millis(s.initial_backoff_ms),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        RetryPolicy {
            attempts: attempts.max(1),
            initial_backoff: Duration::ZERO,
        }
    }

    /// Sleeps between consecutive attempts.
    pub fn delays(&self) -> Vec<Duration> {
        (0..self.attempts.saturating_sub(1))
            .map(|i| self.initial_backoff * 2u32.pow(i))
            .collect()
    }

    pub fn run<T>(
        &self,
        mut call: impl FnMut() -> Result<T, EndpointError>,
    ) -> Result<T, RetryError> {
        let delays = self.delays();
        let mut attempt = 0;
        loop {
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if !e.is_retriable() => return Err(RetryError::Fatal(e)),
                Err(e) => {
                    if attempt + 1 >= self.attempts {
                        return Err(RetryError::Exhausted {
                            attempts: self.attempts,
                            last: e,
                        });
                    }
                    log::debug!("endpoint attempt {} failed: {e}", attempt + 1);
                    if !delays[attempt as usize].is_zero() {
                        std::thread::sleep(delays[attempt as usize]);
                    }
                    attempt += 1;
                }
            }
        }
    }
}
