use std::time::Duration;

use serde_json::json;

use super::{estimate_tokens, Backend, Completion, LlmError, Message};

pub const ENV_API_KEY: &str = "TEEPORT_LLM_API_KEY";
pub const ENV_BASE_URL: &str = "TEEPORT_LLM_BASE_URL";
pub const ENV_MODEL: &str = "TEEPORT_LLM_MODEL";

#[derive(Debug, Clone, PartialEq)]
pub struct LiveSettings {
    pub model: String,
    pub temperature: f64,
    pub retry_limit: u32,
    pub backoff: Duration,
}

impl Default for LiveSettings {
    fn default() -> Self {
        LiveSettings {
            model: "gpt-4o".into(),
            temperature: 0.0,
            retry_limit: 3,
            backoff: Duration::from_millis(500),
        }
    }
}

/// HTTP seam so the retry policy can be tested without a network.
pub trait Transport: Send + Sync {
    /// POST a JSON body; returns the status code and response text.
    fn post_json(
        &self,
        url: &str,
        api_key: &str,
        body: &serde_json::Value,
    ) -> Result<(u16, String), String>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(HttpTransport { client })
    }
}

impl Transport for HttpTransport {
    fn post_json(
        &self,
        url: &str,
        api_key: &str,
        body: &serde_json::Value,
    ) -> Result<(u16, String), String> {
        let resp = self
            .client
            .post(url)
            .bearer_auth(api_key)
            .json(body)
            .send()
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| e.to_string())?;
        Ok((status, text))
    }
}

/// OpenAI-compatible chat-completions client.
pub struct LiveBackend {
    base_url: String,
    api_key: String,
    settings: LiveSettings,
    transport: Box<dyn Transport>,
}

impl LiveBackend {
    pub fn new(
        base_url: &str,
        api_key: &str,
        settings: LiveSettings,
        transport: Box<dyn Transport>,
    ) -> Self {
        LiveBackend {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.to_string(),
            settings,
            transport,
        }
    }

    pub fn from_env(mut settings: LiveSettings) -> Result<Self, LlmError> {
        let key = std::env::var(ENV_API_KEY)
            .map_err(|_| LlmError::Config(format!("{ENV_API_KEY} is not set")))?;
        let base =
            std::env::var(ENV_BASE_URL).unwrap_or_else(|_| "https://api.openai.com/v1".into());
        if let Ok(model) = std::env::var(ENV_MODEL) {
            settings.model = model;
        }
        let transport = HttpTransport::new(Duration::from_secs(120))?;
        Ok(Self::new(&base, &key, settings, Box::new(transport)))
    }

    fn request_body(&self, history: &[Message]) -> serde_json::Value {
        let messages: Vec<_> = history
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        json!({
            "model": self.settings.model,
            "temperature": self.settings.temperature,
            "messages": messages,
        })
    }
}

fn parse_reply(body: &str) -> Result<Completion, LlmError> {
    let v: serde_json::Value =
        serde_json::from_str(body).map_err(|e| LlmError::Malformed(e.to_string()))?;
    let text = v["choices"][0]["message"]["content"]
        .as_str()
        .ok_or_else(|| LlmError::Malformed("response has no choices[0].message.content".into()))?
        .to_string();
    let prompt_tokens = v["usage"]["prompt_tokens"].as_u64().unwrap_or(0);
    let completion_tokens = v["usage"]["completion_tokens"]
        .as_u64()
        .unwrap_or_else(|| estimate_tokens(&text));
    Ok(Completion {
        text,
        prompt_tokens,
        completion_tokens,
    })
}

impl Backend for LiveBackend {
    fn id(&self) -> &str {
        "live"
    }

    fn complete(&self, _session: &str, history: &[Message]) -> Result<Completion, LlmError> {
        let url = format!("{}/chat/completions", self.base_url);
        let body = self.request_body(history);
        let attempts = self.settings.retry_limit.max(1);
        let mut last = String::new();
        for attempt in 1..=attempts {
            match self.transport.post_json(&url, &self.api_key, &body) {
                Ok((200..=299, text)) => return parse_reply(&text),
                Ok((status, text)) if status == 429 || status >= 500 => {
                    last = format!(
                        "HTTP {status}: {}",
                        text.chars().take(200).collect::<String>()
                    );
                }
                Ok((status, text)) => return Err(LlmError::Http { status, body: text }),
                Err(e) => last = e,
            }
            log::warn!("model request attempt {attempt}/{attempts} failed: {last}");
            if attempt < attempts {
                std::thread::sleep(self.settings.backoff * attempt);
            }
        }
        Err(LlmError::RetriesExhausted { attempts, last })
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    use super::super::Role;
    use super::*;

    struct Flaky {
        failures: u32,
        calls: Arc<AtomicU32>,
    }

    impl Transport for Flaky {
        fn post_json(
            &self,
            _url: &str,
            key: &str,
            body: &serde_json::Value,
        ) -> Result<(u16, String), String> {
            assert_eq!(key, "k");
            assert_eq!(body["temperature"], 0.0);
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                return Ok((503, "busy".into()));
            }
            Ok((
                200,
                r#"{"choices":[{"message":{"content":"Yes"}}],"usage":{"prompt_tokens":10,"completion_tokens":1}}"#.into(),
            ))
        }
    }

    fn backend(failures: u32, calls: Arc<AtomicU32>) -> LiveBackend {
        let settings = LiveSettings {
            backoff: Duration::from_millis(1),
            ..Default::default()
        };
        LiveBackend::new(
            "http://x/v1/",
            "k",
            settings,
            Box::new(Flaky { failures, calls }),
        )
    }

    fn history() -> Vec<Message> {
        vec![Message {
            role: Role::User,
            content: "hi".into(),
        }]
    }

    #[test]
    fn retries_transient_failures() {
        let calls = Arc::new(AtomicU32::new(0));
        let c = backend(2, calls.clone()).complete("s", &history()).unwrap();
        assert_eq!(c.text, "Yes");
        assert_eq!(c.prompt_tokens + c.completion_tokens, 11);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn stops_at_the_retry_limit() {
        let calls = Arc::new(AtomicU32::new(0));
        let err = backend(10, calls.clone())
            .complete("s", &history())
            .unwrap_err();
        assert!(matches!(
            err,
            LlmError::RetriesExhausted { attempts: 3, .. }
        ));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }
}
