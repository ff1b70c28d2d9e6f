use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{candidate_id, read_transcript, PromptSpec, POOL_SIZE};
use crate::{NarbError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub provider: String,
    pub model: String,
    pub endpoint: String,
    /// Environment variable holding the API key.
    pub api_key_env: String,
    pub max_retries: usize,
    pub timeout_secs: u64,
    pub max_concurrency: usize,
    /// First retry delay; doubles per attempt.
    pub backoff_ms: u64,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig {
            provider: "openai-compatible".into(),
            model: String::new(),
            endpoint: "https://api.openai.com/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            max_retries: 3,
            timeout_secs: 120,
            max_concurrency: 4,
            backoff_ms: 2000,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_concurrency == 0 {
            return Err(NarbError::InvalidArgument("max_concurrency must be >= 1".into()));
        }
        Ok(())
    }
}

/// What a provider sees: the prompt and the presented candidates. Never
/// labels or group membership.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub example_id: String,
    pub prompt: String,
    pub schema: serde_json::Value,
    pub presented: Vec<(String, String)>,
    pub temperature: f64,
}

pub trait Provider: Sync {
    fn name(&self) -> &str;
    /// Fails when credentials are missing or rejected.
    fn check_auth(&self) -> Result<()>;
    /// Raw completion text.
    fn complete(&self, request: &ProviderRequest) -> Result<String>;
}

fn render(scores: &[(String, f64)]) -> String {
    let mut ranked: Vec<&(String, f64)> = scores.iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    serde_json::json!({
        "scores": scores.iter().map(|(id, s)| (id.clone(), serde_json::json!(s))).collect::<serde_json::Map<_, _>>(),
        "top3": ranked.iter().take(3).map(|(id, _)| serde_json::json!({"id": id, "reasoning": "mock"})).collect::<Vec<_>>(),
    })
    .to_string()
}

/// Scores each candidate 10 x its gold label. Labels are bound at
/// construction from the specs; requests carry none.
pub struct OracleProvider {
    by_example: HashMap<String, Vec<(String, f64)>>,
}

impl OracleProvider {
    pub fn new<'a>(specs: impl IntoIterator<Item = (&'a PromptSpec, &'a [bool])>) -> Self {
        let by_example = specs
            .into_iter()
            .map(|(spec, labels)| {
                let scores = spec
                    .permutation
                    .iter()
                    .enumerate()
                    .map(|(p, &i)| (candidate_id(p), if labels[i] { 10.0 } else { 0.0 }))
                    .collect();
                (spec.example_id.clone(), scores)
            })
            .collect();
        OracleProvider { by_example }
    }
}

impl Provider for OracleProvider {
    fn name(&self) -> &str {
        "oracle"
    }
    fn check_auth(&self) -> Result<()> {
        Ok(())
    }
    fn complete(&self, request: &ProviderRequest) -> Result<String> {
        self.by_example
            .get(&request.example_id)
            .map(|s| render(s))
            .ok_or_else(|| NarbError::Provider(format!("oracle knows nothing about `{}`", request.example_id)))
    }
}

/// The same score for every candidate.
pub struct ConstantProvider(pub f64);

impl Provider for ConstantProvider {
    fn name(&self) -> &str {
        "constant"
    }
    fn check_auth(&self) -> Result<()> {
        Ok(())
    }
    fn complete(&self, _request: &ProviderRequest) -> Result<String> {
        let scores: Vec<(String, f64)> = (0..POOL_SIZE).map(|p| (candidate_id(p), self.0)).collect();
        Ok(render(&scores))
    }
}

/// Answers from a recorded transcript; the prompt must match byte for byte.
pub struct ReplayProvider {
    answers: HashMap<String, (String, String)>,
}

impl ReplayProvider {
    pub fn from_transcript(path: &Path) -> Result<Self> {
        let mut answers = HashMap::new();
        // Later attempts override earlier ones; only answered requests count.
        for e in read_transcript(path)? {
            if let Some(raw) = e.raw_response {
                answers.insert(e.example_id, (e.prompt, raw));
            }
        }
        Ok(ReplayProvider { answers })
    }
}

impl Provider for ReplayProvider {
    fn name(&self) -> &str {
        "replay"
    }
    fn check_auth(&self) -> Result<()> {
        Ok(())
    }
    fn complete(&self, request: &ProviderRequest) -> Result<String> {
        let (prompt, raw) = self
            .answers
            .get(&request.example_id)
            .ok_or_else(|| NarbError::Provider(format!("no recorded answer for `{}`", request.example_id)))?;
        if *prompt != request.prompt {
            return Err(NarbError::Provider(format!(
                "recorded prompt for `{}` differs from the current one",
                request.example_id
            )));
        }
        Ok(raw.clone())
    }
}

/// Chat-completion endpoint speaking the OpenAI wire format.
#[cfg(feature = "http")]
pub struct HttpProvider {
    config: ProviderConfig,
    client: reqwest::blocking::Client,
}

#[cfg(feature = "http")]
impl HttpProvider {
    pub fn new(config: ProviderConfig) -> Result<Self> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| NarbError::Provider(e.to_string()))?;
        Ok(HttpProvider { config, client })
    }

    fn key(&self) -> Result<String> {
        std::env::var(&self.config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| NarbError::Provider(format!("environment variable {} is not set", self.config.api_key_env)))
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{path}", self.config.endpoint.trim_end_matches('/'))
    }
}

#[cfg(feature = "http")]
impl Provider for HttpProvider {
    fn name(&self) -> &str {
        &self.config.provider
    }

    fn check_auth(&self) -> Result<()> {
        let key = self.key()?;
        let resp = self
            .client
            .get(self.url("models"))
            .bearer_auth(key)
            .send()
            .map_err(|e| NarbError::Provider(format!("cannot reach {}: {e}", self.config.endpoint)))?;
        match resp.status().as_u16() {
            401 | 403 => Err(NarbError::Provider(format!(
                "credentials in {} were rejected ({})",
                self.config.api_key_env,
                resp.status()
            ))),
            _ => Ok(()),
        }
    }

    fn complete(&self, request: &ProviderRequest) -> Result<String> {
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": request.temperature,
            "response_format": {"type": "json_object"},
            "messages": [{"role": "user", "content": request.prompt}],
        });
        let resp = self
            .client
            .post(self.url("chat/completions"))
            .bearer_auth(self.key()?)
            .json(&body)
            .send()
            .map_err(|e| NarbError::Provider(e.to_string()))?;
        let status = resp.status();
        let value: serde_json::Value = resp.json().map_err(|e| NarbError::Provider(e.to_string()))?;
        if !status.is_success() {
            return Err(NarbError::Provider(format!("{status}: {value}")));
        }
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| NarbError::Provider(format!("no message content in {value}")))
    }
}
