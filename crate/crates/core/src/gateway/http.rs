use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Backend, BackendError, BackendKind, Completion, GatewayError, GenerationRequest};

/// A single JSON completion endpoint. Field locations are dotted paths
/// (`"choices.0.text"`); numeric segments index arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    pub url: String,
    /// Name of the environment variable holding the bearer token.
    #[serde(default)]
    pub token_env: Option<String>,
    #[serde(default = "default_prompt_path")]
    pub prompt_path: String,
    #[serde(default = "default_completion_path")]
    pub completion_path: String,
    #[serde(default)]
    pub temperature_path: Option<String>,
    #[serde(default)]
    pub max_tokens_path: Option<String>,
    #[serde(default)]
    pub stop_path: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    /// Static fields merged into every request body (model name etc.).
    #[serde(default)]
    pub extra_body: Map<String, Value>,
}

fn default_prompt_path() -> String {
    "prompt".into()
}
fn default_completion_path() -> String {
    "completion".into()
}
fn default_timeout() -> u64 {
    120
}
fn default_attempts() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

impl HttpConfig {
    pub fn new(url: impl Into<String>) -> Self {
        HttpConfig {
            url: url.into(),
            token_env: None,
            prompt_path: default_prompt_path(),
            completion_path: default_completion_path(),
            temperature_path: Some("temperature".into()),
            max_tokens_path: Some("max_tokens".into()),
            stop_path: Some("stop".into()),
            timeout_secs: default_timeout(),
            attempts: default_attempts(),
            backoff_ms: default_backoff(),
            extra_body: Map::new(),
        }
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) {
    let segments: Vec<&str> = path.split('.').collect();
    let mut cur = root;
    for (i, seg) in segments.iter().enumerate() {
        let last = i + 1 == segments.len();
        let next_is_index = segments.get(i + 1).is_some_and(|s| s.parse::<usize>().is_ok());
        let empty = || if next_is_index { Value::Array(vec![]) } else { Value::Object(Map::new()) };
        cur = match seg.parse::<usize>() {
            Ok(idx) if cur.is_array() => {
                let arr = cur.as_array_mut().unwrap();
                while arr.len() <= idx {
                    arr.push(Value::Null);
                }
                if last {
                    arr[idx] = value;
                    return;
                }
                if arr[idx].is_null() {
                    arr[idx] = empty();
                }
                &mut arr[idx]
            }
            _ => {
                if !cur.is_object() {
                    *cur = Value::Object(Map::new());
                }
                let obj = cur.as_object_mut().unwrap();
                if last {
                    obj.insert(seg.to_string(), value);
                    return;
                }
                obj.entry(seg.to_string()).or_insert_with(empty)
            }
        };
    }
}

fn get_path<'a>(root: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(root, |cur, seg| match cur {
        Value::Array(a) => seg.parse::<usize>().ok().and_then(|i| a.get(i)),
        Value::Object(o) => o.get(seg),
        _ => None,
    })
}

pub struct HttpBackend {
    config: HttpConfig,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, GatewayError> {
        let token = match &config.token_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::Config(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpBackend {
            config,
            client,
            token,
        })
    }

    fn body(&self, r: &GenerationRequest) -> Value {
        let mut body = Value::Object(self.config.extra_body.clone());
        set_path(&mut body, &self.config.prompt_path, Value::from(r.prompt.clone()));
        if let Some(p) = &self.config.temperature_path {
            set_path(&mut body, p, Value::from(r.temperature));
        }
        if let Some(p) = &self.config.max_tokens_path {
            set_path(&mut body, p, Value::from(r.max_tokens));
        }
        if let Some(p) = &self.config.stop_path {
            if !r.stop_sequences.is_empty() {
                set_path(&mut body, p, Value::from(r.stop_sequences.clone()));
            }
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<String, String> {
        let mut req = self.client.post(&self.config.url).json(body);
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        let json: Value = resp.json().map_err(|e| e.to_string())?;
        match get_path(&json, &self.config.completion_path) {
            Some(Value::String(s)) => Ok(s.clone()),
            _ => Err(format!("no string at {:?} in response", self.config.completion_path)),
        }
    }
}

impl Backend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn complete(&self, request: &GenerationRequest) -> Result<Completion, BackendError> {
        let body = self.body(request);
        let attempts = self.config.attempts.max(1);
        let mut last_err = String::new();
        for i in 0..attempts {
            if i > 0 {
                thread::sleep(Duration::from_millis(self.config.backoff_ms << (i - 1)));
            }
            match self.attempt(&body) {
                Ok(text) => {
                    return Ok(Completion {
                        text,
                        backend: BackendKind::Http,
                    })
                }
                Err(e) => {
                    log::warn!("http attempt {} of {attempts} failed: {e}", i + 1);
                    last_err = e;
                }
            }
        }
        Err(BackendError::Transport(last_err))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn paths_build_nested_bodies() {
        let mut v = json!({"model": "m"});
        set_path(&mut v, "messages.0.content", json!("hi"));
        set_path(&mut v, "options.temperature", json!(1.0));
        assert_eq!(
            v,
            json!({"model": "m", "messages": [{"content": "hi"}], "options": {"temperature": 1.0}})
        );
        assert_eq!(get_path(&v, "messages.0.content"), Some(&json!("hi")));
        assert_eq!(get_path(&v, "messages.1.content"), None);
    }

    #[test]
    fn missing_token_variable_is_a_config_error() {
        let mut c = HttpConfig::new("http://127.0.0.1:9");
        c.token_env = Some("SURELY_NOT_SET_1234567".into());
        assert!(matches!(HttpBackend::new(c), Err(GatewayError::Config(_))));
    }
}
