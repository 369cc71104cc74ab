//! Chat-completions HTTP backend.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendError, BackendRequest, DecisionBackend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL of an OpenAI-compatible API, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    /// Environment variable holding the API key. Keys are never read from
    /// config files or flags.
    pub api_key_env: String,
    pub max_parallel: usize,
    pub timeout_ms: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_parallel: 8,
            timeout_ms: 60_000,
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl HttpBackend {
    /// Build a client, reading the key from `config.api_key_env`.
    pub fn from_env(config: HttpConfig) -> Result<HttpBackend, BackendError> {
        let api_key = std::env::var(&config.api_key_env).map_err(|_| {
            BackendError::AuthFailure(format!(
                "environment variable {} is not set",
                config.api_key_env
            ))
        })?;
        Ok(HttpBackend::with_key(config, api_key))
    }

    pub fn with_key(config: HttpConfig, api_key: String) -> HttpBackend {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            config,
            api_key,
            agent,
        }
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }
}

/// Parse a `Retry-After` value given in (possibly fractional) seconds.
fn retry_after_ms(value: Option<&str>) -> Option<u64> {
    let secs: f64 = value?.trim().parse().ok()?;
    (secs >= 0.0).then(|| (secs * 1000.0).round() as u64)
}

impl DecisionBackend for HttpBackend {
    fn id(&self) -> String {
        format!("http:{}", self.config.base_url)
    }

    fn deterministic(&self) -> bool {
        false
    }

    fn max_parallel(&self) -> usize {
        self.config.max_parallel.max(1)
    }

    fn call(&self, request: &BackendRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_tokens,
        });
        let mut response = self
            .agent
            .post(&self.endpoint())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => {
                return Err(BackendError::AuthFailure(format!("HTTP {status}")));
            }
            429 => {
                let advised = response
                    .headers()
                    .get("retry-after")
                    .and_then(|v| v.to_str().ok());
                return Err(BackendError::RateLimited {
                    retry_after_ms: retry_after_ms(advised),
                });
            }
            _ => return Err(BackendError::Transport(format!("HTTP {status}"))),
        }
        let value: serde_json::Value = response
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Transport(format!("invalid response body: {e}")))?;
        value
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| BackendError::Transport("response has no message content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn retry_after_parsing() {
        assert_eq!(retry_after_ms(Some("2")), Some(2000));
        assert_eq!(retry_after_ms(Some("0.25")), Some(250));
        assert_eq!(retry_after_ms(Some("soon")), None);
        assert_eq!(retry_after_ms(None), None);
    }

    #[test]
    fn missing_key_is_auth_failure() {
        let config = HttpConfig {
            api_key_env: "VOTESIM_TEST_KEY_THAT_IS_NOT_SET".into(),
            ..Default::default()
        };
        assert!(matches!(
            HttpBackend::from_env(config),
            Err(BackendError::AuthFailure(_))
        ));
    }
}
