//! Chat-completion transport for the extraction, hallucination and coverage
//! prompts, with a content-addressed response cache and a replay mode that
//! serves only cached answers.

mod cache;
mod literal;
mod transport;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::Serialize;

pub use cache::{CacheEntry, ResponseCache};
pub use literal::{parse_list_literal, render_list_literal};
pub use transport::{ChatTransport, HttpReply, HttpTransport};

use crate::error::{Error, Result};
use crate::io::sha256_hex;

pub const EXTRACT_PROMPT: &str = include_str!("../../assets/prompts/extract.txt");
pub const HALLUCINATE_PROMPT: &str = include_str!("../../assets/prompts/hallucinate.txt");
pub const COVER_PROMPT: &str = include_str!("../../assets/prompts/cover.txt");
pub const CONTEXTUAL_PROMPT: &str = include_str!("../../assets/prompts/contextual.txt");

pub const ENV_ENDPOINT: &str = "OBJHAL_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "OBJHAL_LLM_API_KEY";
pub const ENV_MODEL: &str = "OBJHAL_LLM_MODEL";

const PLACEHOLDERS: &[&str] = &["{cap}", "{gt}", "{cap_obj}", "{objects}"];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum TemplateId {
    Extract,
    Hallucinate,
    Cover,
    Custom(String),
}

impl TemplateId {
    pub fn as_str(&self) -> &str {
        match self {
            TemplateId::Extract => "extract",
            TemplateId::Hallucinate => "hallucinate",
            TemplateId::Cover => "cover",
            TemplateId::Custom(name) => name,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub extract: String,
    pub hallucinate: String,
    pub cover: String,
    pub custom: BTreeMap<String, String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        let mut custom = BTreeMap::new();
        custom.insert("contextual".to_owned(), CONTEXTUAL_PROMPT.to_owned());
        Self {
            extract: EXTRACT_PROMPT.to_owned(),
            hallucinate: HALLUCINATE_PROMPT.to_owned(),
            cover: COVER_PROMPT.to_owned(),
            custom,
        }
    }
}

impl PromptTemplates {
    pub fn get(&self, id: &TemplateId) -> Result<&str> {
        match id {
            TemplateId::Extract => Ok(&self.extract),
            TemplateId::Hallucinate => Ok(&self.hallucinate),
            TemplateId::Cover => Ok(&self.cover),
            TemplateId::Custom(name) => self
                .custom
                .get(name)
                .map(String::as_str)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown prompt template {name:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PromptRequest {
    pub template: TemplateId,
    pub substitutions: BTreeMap<String, String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl PromptRequest {
    /// Fills every `{name}` placeholder. Fails if a known placeholder is left.
    pub fn render(&self, templates: &PromptTemplates) -> Result<String> {
        let mut text = templates.get(&self.template)?.to_owned();
        for (name, value) in &self.substitutions {
            text = text.replace(&format!("{{{name}}}"), value);
        }
        if let Some(p) = PLACEHOLDERS.iter().find(|p| text.contains(*p)) {
            return Err(Error::InvalidInput(format!(
                "placeholder {p} not substituted in template {:?}",
                self.template.as_str()
            )));
        }
        Ok(text)
    }

    /// SHA-256 over template id, substitutions, model and temperature.
    pub fn cache_key(&self) -> String {
        #[derive(Serialize)]
        struct KeyMaterial<'a> {
            template: &'a str,
            substitutions: &'a BTreeMap<String, String>,
            model: &'a str,
            temperature: f64,
        }
        let material = KeyMaterial {
            template: self.template.as_str(),
            substitutions: &self.substitutions,
            model: &self.model,
            temperature: self.temperature,
        };
        sha256_hex(&serde_json::to_vec(&material).expect("key material serializes"))
    }

    pub fn body(&self, prompt: &str) -> serde_json::Value {
        serde_json::json!({
            "model": self.model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }
}

#[derive(Clone)]
pub struct LlmConfig {
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub cache_dir: Option<PathBuf>,
    pub replay: bool,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub max_parallel: usize,
    pub timeout: Duration,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: None,
            api_key: None,
            model: "gpt-4".to_owned(),
            temperature: 0.0,
            max_tokens: 1024,
            cache_dir: None,
            replay: false,
            max_attempts: 5,
            backoff_base: Duration::from_millis(500),
            max_parallel: 4,
            timeout: Duration::from_secs(120),
        }
    }
}

impl fmt::Debug for LlmConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmConfig")
            .field("endpoint", &self.endpoint)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .field("max_tokens", &self.max_tokens)
            .field("cache_dir", &self.cache_dir)
            .field("replay", &self.replay)
            .field("max_attempts", &self.max_attempts)
            .field("max_parallel", &self.max_parallel)
            .finish()
    }
}

impl LlmConfig {
    /// Defaults overridden by `OBJHAL_LLM_ENDPOINT`, `OBJHAL_LLM_API_KEY` and
    /// `OBJHAL_LLM_MODEL` when set.
    pub fn from_env() -> Self {
        let mut cfg = Self::default();
        if let Ok(v) = std::env::var(ENV_ENDPOINT) {
            cfg.endpoint = Some(v);
        }
        if let Ok(v) = std::env::var(ENV_API_KEY) {
            cfg.api_key = Some(v);
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            cfg.model = v;
        }
        cfg
    }
}

/// Counting semaphore bounding concurrent requests.
struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut n = self.in_flight.lock().expect("gate lock");
        while *n >= self.cap {
            n = self.freed.wait(n).expect("gate lock");
        }
        *n += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock().expect("gate lock") -= 1;
        self.0.freed.notify_one();
    }
}

pub struct LlmClient {
    config: LlmConfig,
    templates: PromptTemplates,
    cache: ResponseCache,
    transport: Option<Box<dyn ChatTransport>>,
    network_calls: AtomicUsize,
    gate: Gate,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient").field("config", &self.config).finish_non_exhaustive()
    }
}

impl LlmClient {
    /// Builds a client with an HTTP transport when an endpoint is configured.
    pub fn new(config: LlmConfig) -> Self {
        let transport = config.endpoint.as_ref().map(|url| {
            Box::new(HttpTransport::new(url.clone(), config.api_key.clone(), config.timeout))
                as Box<dyn ChatTransport>
        });
        Self::build(config, transport)
    }

    pub fn with_transport(config: LlmConfig, transport: Box<dyn ChatTransport>) -> Self {
        Self::build(config, Some(transport))
    }

    fn build(config: LlmConfig, transport: Option<Box<dyn ChatTransport>>) -> Self {
        let cache = match &config.cache_dir {
            Some(dir) => ResponseCache::on_disk(dir.clone()),
            None => ResponseCache::in_memory(),
        };
        let gate = Gate { in_flight: Mutex::new(0), freed: Condvar::new(), cap: config.max_parallel.max(1) };
        Self {
            config,
            templates: PromptTemplates::default(),
            cache,
            transport,
            network_calls: AtomicUsize::new(0),
            gate,
        }
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    pub fn templates(&self) -> &PromptTemplates {
        &self.templates
    }

    pub fn is_replay(&self) -> bool {
        self.config.replay
    }

    /// Number of HTTP attempts made so far.
    pub fn network_calls(&self) -> usize {
        self.network_calls.load(Ordering::Relaxed)
    }

    /// A request for `template` using the configured model settings.
    pub fn request(&self, template: TemplateId, substitutions: BTreeMap<String, String>) -> PromptRequest {
        PromptRequest {
            template,
            substitutions,
            model: self.config.model.clone(),
            temperature: self.config.temperature,
            max_tokens: self.config.max_tokens,
        }
    }

    /// Stores `response` for `request`, as a live call would.
    pub fn prime(&self, request: &PromptRequest, response: &str) -> Result<()> {
        self.cache.put(&request.cache_key(), request.template.as_str(), response)
    }

    /// Raw completion text, served from the cache when possible.
    pub fn complete(&self, request: &PromptRequest) -> Result<String> {
        let key = request.cache_key();
        if let Some(hit) = self.cache.get(&key)? {
            return Ok(hit.response);
        }
        if self.config.replay {
            return Err(Error::CacheMissInReplay { key });
        }
        let text = self.call(request)?;
        self.cache.put(&key, request.template.as_str(), &text)?;
        Ok(text)
    }

    /// Like [`complete`](Self::complete) but skips the cache lookup, replacing
    /// the stored entry. In replay mode this is the same as `complete`.
    pub fn complete_uncached(&self, request: &PromptRequest) -> Result<String> {
        if self.config.replay {
            return self.complete(request);
        }
        let text = self.call(request)?;
        self.cache.put(&request.cache_key(), request.template.as_str(), &text)?;
        Ok(text)
    }

    fn call(&self, request: &PromptRequest) -> Result<String> {
        let Some(transport) = &self.transport else {
            return Err(Error::LlmUnavailable {
                attempts: 0,
                reason: format!("no endpoint configured (set {ENV_ENDPOINT})"),
            });
        };
        let prompt = request.render(&self.templates)?;
        let body = request.body(&prompt);
        let _slot = self.gate.enter();

        let attempts = self.config.max_attempts.max(1);
        let mut last_reason = String::new();
        for attempt in 1..=attempts {
            self.network_calls.fetch_add(1, Ordering::Relaxed);
            match transport.post_json(&body) {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    return first_message_content(&reply.body).ok_or_else(|| Error::LlmUnavailable {
                        attempts: attempt,
                        reason: "response has no choices[0].message.content".to_owned(),
                    });
                }
                Ok(reply) if reply.status == 429 || reply.status >= 500 => {
                    last_reason = format!("HTTP {}", reply.status);
                }
                Ok(reply) => {
                    return Err(Error::LlmUnavailable {
                        attempts: attempt,
                        reason: format!("HTTP {}", reply.status),
                    });
                }
                Err(e) => last_reason = e,
            }
            if attempt < attempts {
                let delay = self.config.backoff_base.saturating_mul(1 << (attempt - 1).min(16));
                log::warn!("LLM request failed ({last_reason}), retrying in {delay:?}");
                std::thread::sleep(delay);
            }
        }
        Err(Error::LlmUnavailable { attempts, reason: last_reason })
    }
}

fn first_message_content(body: &str) -> Option<String> {
    let v: serde_json::Value = serde_json::from_str(body).ok()?;
    v.get("choices")?.get(0)?.get("message")?.get("content")?.as_str().map(str::to_owned)
}
