//! Blocking HTTP client for the JSON protocol.
//!
//! `POST {base}/v1/video_qa` and `POST {base}/v1/text_lm`, one request per
//! call. Connection failures and timeouts are retried with exponential
//! backoff (`backoff_ms * 2^attempt`); a non-2xx reply is a backend error
//! and is not retried.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ureq::Agent;

use crate::config::BackendConfig;
use crate::protocol::{
    BackendError, TextLmRequest, TextLmResponse, TextModel, VideoModel, VideoQaRequest, VideoQaResponse,
};

pub const VIDEO_QA_PATH: &str = "/v1/video_qa";
pub const TEXT_LM_PATH: &str = "/v1/text_lm";

/// Error body returned by servers on non-2xx replies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

#[derive(Clone)]
pub struct HttpBackend {
    base_url: String,
    agent: Agent,
    retries: u32,
    backoff: Duration,
}

impl HttpBackend {
    pub fn new(base_url: &str, cfg: &BackendConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            agent,
            retries: cfg.retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, req: &Req) -> Result<Resp, BackendError> {
        let url = format!("{}{}", self.base_url, path);
        let body = serde_json::to_string(req).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let mut attempt = 0u32;
        loop {
            match self.try_post(&url, &body) {
                Ok((status, text)) => return decode_reply(status, &text),
                Err(err) if attempt < self.retries => {
                    let wait = self.backoff.saturating_mul(1u32 << attempt.min(16));
                    log::debug!("{url}: {err}; retrying in {wait:?}");
                    thread::sleep(wait);
                    attempt += 1;
                }
                Err(err) => {
                    return Err(BackendError::Transport(format!(
                        "{url}: {err} (after {} attempts)",
                        attempt + 1
                    )))
                }
            }
        }
    }

    fn try_post(&self, url: &str, body: &str) -> Result<(u16, String), ureq::Error> {
        let mut resp = self
            .agent
            .post(url)
            .header("content-type", "application/json")
            .send(body)?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string()?;
        Ok((status, text))
    }
}

fn decode_reply<Resp: DeserializeOwned>(status: u16, text: &str) -> Result<Resp, BackendError> {
    if !(200..300).contains(&status) {
        let message = serde_json::from_str::<ErrorBody>(text)
            .map(|b| b.error)
            .unwrap_or_else(|_| text.chars().take(200).collect());
        return Err(BackendError::Backend(format!("status {status}: {message}")));
    }
    serde_json::from_str(text).map_err(|e| BackendError::Protocol(e.to_string()))
}

impl VideoModel for HttpBackend {
    fn video_qa(&self, req: &VideoQaRequest) -> Result<VideoQaResponse, BackendError> {
        self.post(VIDEO_QA_PATH, req)
    }
}

impl TextModel for HttpBackend {
    fn complete(&self, req: &TextLmRequest) -> Result<TextLmResponse, BackendError> {
        self.post(TEXT_LM_PATH, req)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Decode;

    #[test]
    fn non_success_status_is_backend_error() {
        let err = decode_reply::<TextLmResponse>(404, r#"{"error":"unknown video v9"}"#).unwrap_err();
        assert_eq!(err, BackendError::Backend("status 404: unknown video v9".into()));
    }

    #[test]
    fn malformed_body_is_protocol_error() {
        let err = decode_reply::<VideoQaResponse>(200, r#"{"text":"no raw_text"}"#).unwrap_err();
        assert!(matches!(err, BackendError::Protocol(_)));
    }

    #[test]
    fn unreachable_endpoint_is_transport_error_after_retries() {
        // Bind and drop a listener to find a port nobody listens on.
        let port = std::net::TcpListener::bind("127.0.0.1:0")
            .unwrap()
            .local_addr()
            .unwrap()
            .port();
        let cfg = BackendConfig {
            timeout_ms: 500,
            retries: 2,
            backoff_ms: 1,
            ..BackendConfig::default()
        };
        let client = HttpBackend::new(&format!("http://127.0.0.1:{port}"), &cfg);
        let err = client
            .complete(&TextLmRequest {
                prompt: "hi".into(),
                decode: Decode::default(),
            })
            .unwrap_err();
        match err {
            BackendError::Transport(msg) => assert!(msg.contains("after 3 attempts"), "{msg}"),
            other => panic!("expected transport error, got {other:?}"),
        }
    }
}
