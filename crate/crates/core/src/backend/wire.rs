//! JSON bodies of the HTTP logprob protocol.
//!
//! - `GET /v1/info` returns [`super::ProviderInfo`].
//! - `POST /v1/logprobs` takes [`LogProbRequest`] and returns
//!   [`LogProbResponse`] with `eval_end - eval_start` values.
//! - Failures return a non-2xx status with [`ErrorResponse`].

use serde::{Deserialize, Serialize};

pub const INFO_PATH: &str = "/v1/info";
pub const LOGPROBS_PATH: &str = "/v1/logprobs";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogProbRequest {
    pub tokens: Vec<u32>,
    pub eval_start: usize,
    pub eval_end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogProbResponse {
    pub logprobs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}
