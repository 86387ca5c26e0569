//! Blocking client for a remote logprob server.
//!
//! [`RemoteProvider`] implements [`LogProbProvider`], so the scorer can use a
//! remote model exactly like the built-in one. Responses are checked before
//! they reach the scorer: the array must have the requested length, every
//! value must be finite, and values above `1e-6` are rejected. Values in
//! `(0, 1e-6]` are server rounding and are clamped to `0`.

use std::time::Duration;

use longfilter::backend::wire::{ErrorResponse, LogProbRequest, INFO_PATH, LOGPROBS_PATH};
use longfilter::backend::{check_request, BackendError, LogProbProvider, LogProbSlice, ProviderInfo};

/// Largest logprob accepted from a server before clamping to zero.
pub const POSITIVE_TOLERANCE: f64 = 1e-6;

const BACKOFF_BASE: Duration = Duration::from_millis(50);
const BACKOFF_MAX: Duration = Duration::from_secs(2);

pub struct RemoteProvider {
    endpoint: String,
    agent: ureq::Agent,
    retries: u32,
    info: ProviderInfo,
}

enum Failure {
    /// Worth retrying: connection problems, timeouts, 5xx.
    Transient(String),
    Fatal(BackendError),
}

impl RemoteProvider {
    /// Connects and fetches `/v1/info`. A request is attempted up to
    /// `retries + 1` times before a transport error is returned.
    pub fn connect(endpoint: &str, timeout: Duration, retries: u32) -> Result<Self, BackendError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let mut provider = Self {
            endpoint,
            agent,
            retries,
            info: ProviderInfo {
                vocab_size: 0,
                max_context: 0,
                tokenizer_id: String::new(),
            },
        };
        let body = provider.with_retries(|p| p.send(INFO_PATH, None))?;
        provider.info = serde_json::from_str(&body)
            .map_err(|e| BackendError::Protocol(format!("bad {INFO_PATH} response: {e}")))?;
        Ok(provider)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn send(&self, path: &str, body: Option<&LogProbRequest>) -> Result<String, Failure> {
        let url = format!("{}{path}", self.endpoint);
        let result = match body {
            Some(b) => self.agent.post(&url).send_json(b),
            None => self.agent.get(&url).call(),
        };
        let mut resp = result.map_err(|e| Failure::Transient(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_string()
            .map_err(|e| Failure::Transient(format!("reading response: {e}")))?;
        match status {
            200..=299 => Ok(text),
            500..=599 => Err(Failure::Transient(format!("{url}: HTTP {status}: {}", error_text(&text)))),
            _ => Err(Failure::Fatal(BackendError::Protocol(format!(
                "{url}: HTTP {status}: {}",
                error_text(&text)
            )))),
        }
    }

    fn with_retries<T>(&self, mut op: impl FnMut(&Self) -> Result<T, Failure>) -> Result<T, BackendError> {
        let attempts = self.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match op(self) {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Transient(msg)) => {
                    tracing::debug!(attempt, attempts, %msg, "remote request failed");
                    last = msg;
                    if attempt < attempts {
                        std::thread::sleep((BACKOFF_BASE * 2u32.pow(attempt - 1)).min(BACKOFF_MAX));
                    }
                }
            }
        }
        Err(BackendError::Transport { attempts, message: last })
    }
}

fn error_text(body: &str) -> String {
    serde_json::from_str::<ErrorResponse>(body).map_or_else(|_| body.chars().take(200).collect(), |e| e.error)
}

/// Checks and clamps a `/v1/logprobs` response body.
pub fn validate_logprobs(body: &str, expected: usize) -> Result<Vec<f64>, BackendError> {
    let value: serde_json::Value =
        serde_json::from_str(body).map_err(|e| BackendError::Protocol(format!("response is not JSON: {e}")))?;
    let array = value
        .get("logprobs")
        .and_then(|v| v.as_array())
        .ok_or_else(|| BackendError::Protocol("response has no \"logprobs\" array".into()))?;
    if array.len() != expected {
        return Err(BackendError::Protocol(format!(
            "expected {expected} logprobs, got {}",
            array.len()
        )));
    }
    array
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = v
                .as_f64()
                .filter(|x| x.is_finite())
                .ok_or_else(|| BackendError::Protocol(format!("logprob {i} is not a finite number: {v}")))?;
            if x > POSITIVE_TOLERANCE {
                return Err(BackendError::Protocol(format!("logprob {i} is positive: {x}")));
            }
            Ok(x.min(0.0))
        })
        .collect()
}

impl LogProbProvider for RemoteProvider {
    fn info(&self) -> ProviderInfo {
        self.info.clone()
    }

    fn logprobs(&self, tokens: &[u32], eval_start: usize, eval_end: usize) -> Result<Vec<f64>, BackendError> {
        check_request(tokens, eval_start, eval_end, self.info.vocab_size)?;
        let req = LogProbRequest {
            tokens: tokens[..eval_end].to_vec(),
            eval_start,
            eval_end,
        };
        let body = self.with_retries(|p| p.send(LOGPROBS_PATH, Some(&req)))?;
        validate_logprobs(&body, eval_end - eval_start)
    }
}

/// One-shot request against `endpoint`.
pub fn remote_logprob_slice(
    endpoint: &str,
    seq_id: &str,
    tokens: &[u32],
    eval_start: usize,
    eval_end: usize,
    timeout: Duration,
    retries: u32,
) -> Result<LogProbSlice, BackendError> {
    let provider = RemoteProvider::connect(endpoint, timeout, retries)?;
    Ok(LogProbSlice {
        seq_id: seq_id.to_string(),
        eval_start,
        values: provider.logprobs(tokens, eval_start, eval_end)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_rules() {
        assert_eq!(validate_logprobs(r#"{"logprobs":[-1.5,0.0]}"#, 2).unwrap(), vec![-1.5, 0.0]);
        assert_eq!(validate_logprobs(r#"{"logprobs":[5e-7]}"#, 1).unwrap(), vec![0.0]);
        let wrong = validate_logprobs(r#"{"logprobs":[-1.0]}"#, 3).unwrap_err().to_string();
        assert!(wrong.contains("expected 3") && wrong.contains("got 1"), "{wrong}");
        assert!(validate_logprobs(r#"{"logprobs":[0.01]}"#, 1).is_err());
        assert!(validate_logprobs(r#"{"logprobs":[null]}"#, 1).is_err());
        assert!(validate_logprobs(r#"{"other":[]}"#, 0).is_err());
    }
}
