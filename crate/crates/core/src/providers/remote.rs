//! Blocking HTTP adapters for OpenAI-compatible `/chat/completions` and
//! `/embeddings` endpoints.
//!
//! Credentials come from an environment variable named in the settings and
//! are never written anywhere. Requests are logged by fingerprint only.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use ureq::Agent;

use super::{Embedder, EmbeddingVector, GenerationRequest, Generator, ProviderError, RetentionMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteSettings {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    /// Ask the provider not to store requests (`"store": false`).
    #[serde(default = "default_true")]
    pub zero_retention: bool,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_true() -> bool {
    true
}
fn default_in_flight() -> usize {
    4
}
fn default_timeout() -> u64 {
    120
}

struct Client {
    settings: RemoteSettings,
    api_key: String,
    agent: Agent,
}

impl Client {
    fn new(settings: RemoteSettings) -> Result<Self, ProviderError> {
        let api_key = std::env::var(&settings.api_key_env).map_err(|_| {
            ProviderError::ProviderUnreachable(format!("environment variable {} is not set", settings.api_key_env))
        })?;
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(settings.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            settings,
            api_key,
            agent,
        })
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}/{}", self.settings.base_url.trim_end_matches('/'), path);
        let digest = hex::encode(Sha256::digest(body.to_string().as_bytes()));
        log::debug!("POST {path} body={}", &digest[..16]);
        let mut resp = self
            .agent
            .post(&url)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(body)
            .map_err(|e| ProviderError::ProviderUnreachable(format!("{path}: {e}")))?;
        let status = resp.status();
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ProviderError::ProviderUnreachable(format!("{path}: unreadable body: {e}")))?;
        if !status.is_success() {
            let msg = value["error"]["message"].as_str().unwrap_or("no message");
            return Err(ProviderError::ProviderUnreachable(format!("{path}: HTTP {status}: {msg}")));
        }
        Ok(value)
    }

    fn retention(&self) -> RetentionMode {
        if self.settings.zero_retention {
            RetentionMode::ZeroRetention
        } else {
            RetentionMode::ProviderDefault
        }
    }
}

pub struct RemoteGenerator {
    client: Client,
}

impl RemoteGenerator {
    pub fn from_env(settings: RemoteSettings) -> Result<Self, ProviderError> {
        Ok(Self {
            client: Client::new(settings)?,
        })
    }

    /// The JSON body sent for `req`.
    pub fn request_body(&self, req: &GenerationRequest) -> Value {
        let mut body = json!({
            "model": self.client.settings.model,
            "messages": [
                { "role": "system", "content": req.system_instruction },
                { "role": "user", "content": req.user_prompt },
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "response_format": { "type": "json_object" },
        });
        if self.client.settings.zero_retention {
            body["store"] = json!(false);
        }
        body
    }
}

impl Generator for RemoteGenerator {
    fn generate_text(&self, req: &GenerationRequest) -> Result<String, ProviderError> {
        let reply = self.client.post("chat/completions", &self.request_body(req))?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::ProviderUnreachable("reply has no message content".into()))
    }

    fn fingerprint(&self) -> String {
        format!("remote/{}@{}", self.client.settings.model, self.client.settings.base_url)
    }

    fn retention(&self) -> RetentionMode {
        self.client.retention()
    }

    fn reproducible(&self) -> bool {
        false
    }

    fn max_in_flight(&self) -> usize {
        self.client.settings.max_in_flight.max(1)
    }
}

pub struct RemoteEmbedder {
    client: Client,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    index: usize,
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn from_env(settings: RemoteSettings) -> Result<Self, ProviderError> {
        Ok(Self {
            client: Client::new(settings)?,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let body = json!({ "model": self.client.settings.model, "input": texts });
        let reply = self.client.post("embeddings", &body)?;
        let mut data: Vec<EmbeddingDatum> = serde_json::from_value(reply["data"].clone())
            .map_err(|e| ProviderError::ProviderUnreachable(format!("embeddings: {e}")))?;
        data.sort_by_key(|d| d.index);
        Ok(data
            .into_iter()
            .map(|d| EmbeddingVector { values: d.embedding })
            .collect())
    }

    fn fingerprint(&self) -> String {
        format!("remote/{}@{}", self.client.settings.model, self.client.settings.base_url)
    }

    fn retention(&self) -> RetentionMode {
        self.client.retention()
    }

    fn max_batch(&self) -> usize {
        64
    }
}
