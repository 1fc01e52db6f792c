use std::time::Duration;

/// Status and body of one HTTP exchange.
#[derive(Debug, Clone)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Something that can POST a chat-completions body. Errors are transport
/// failures (connection refused, timeout) and are always retried.
pub trait ChatTransport: Send + Sync {
    fn post_json(&self, body: &serde_json::Value) -> Result<HttpReply, String>;
}

pub struct HttpTransport {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self { agent, endpoint: endpoint.into(), api_key }
    }
}

impl ChatTransport for HttpTransport {
    fn post_json(&self, body: &serde_json::Value) -> Result<HttpReply, String> {
        let mut req = self.agent.post(&self.endpoint).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        // Error messages from ureq never include request headers.
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}
