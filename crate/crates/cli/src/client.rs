//! Paraphrase client for a chat-completions style HTTP endpoint.

use std::time::Duration;

use corgi_core::augment::{AugmentError, ParaphraseClient};
use serde::Deserialize;
use serde_json::json;

use crate::config::ParaphraseConfig;

pub const API_KEY_ENV: &str = "CORGI_LM_API_KEY";

pub struct HttpParaphraseClient {
    http: reqwest::blocking::Client,
    cfg: ParaphraseConfig,
    api_key: String,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl HttpParaphraseClient {
    pub fn new(cfg: ParaphraseConfig, api_key: String) -> Result<Self, AugmentError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| AugmentError::Client(e.to_string()))?;
        Ok(Self { http, cfg, api_key })
    }
}

impl ParaphraseClient for HttpParaphraseClient {
    fn complete(&self, prompt: &str) -> Result<String, AugmentError> {
        let body = json!({
            "model": self.cfg.model,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": prompt}],
        });
        let resp = self
            .http
            .post(&self.cfg.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .map_err(|e| AugmentError::Client(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(AugmentError::Client(format!("{status}: {}", text.chars().take(200).collect::<String>())));
        }
        let completion: Completion = resp.json().map_err(|e| AugmentError::Client(e.to_string()))?;
        completion
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| AugmentError::Client("response has no choices".into()))
    }
}
