//! JSON-over-HTTP backend.
//!
//! Generation: `POST {"model", "prompt", "parameters": {"max_tokens", "temperature"}}`
//! answered by `{"output": "<text>"}`.
//! Embedding: `POST {"model", "inputs": [..], "parameters": {}}` answered by
//! `{"vectors": [[..], ..]}`.
//!
//! HTTP 429 and 5xx, timeouts and I/O failures are transient; other 4xx
//! statuses are fatal.

use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{
    BackendDescriptor, BackendFailure, GatewayError, GenerationRequest, TextEmbedder, TextGenerator,
};

pub struct RemoteBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct GenerationResponse {
    output: String,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    vectors: Vec<Vec<f64>>,
}

impl RemoteBackend {
    pub fn from_descriptor(descriptor: &BackendDescriptor, timeout: Duration) -> Result<Self, GatewayError> {
        let endpoint = descriptor
            .endpoint
            .clone()
            .ok_or_else(|| GatewayError::Usage("remote backend requires an endpoint".into()))?;
        let api_key = match &descriptor.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GatewayError::Usage(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let config = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build();
        Ok(RemoteBackend {
            agent: ureq::Agent::new_with_config(config),
            endpoint,
            model: descriptor.model_name.clone(),
            api_key,
        })
    }

    fn post<T: for<'de> Deserialize<'de>>(&self, body: serde_json::Value) -> Result<T, BackendFailure> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(classify)?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(BackendFailure::Transient(format!("HTTP {status}")));
        }
        if status >= 400 {
            let detail = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(BackendFailure::Fatal(format!("HTTP {status}: {detail}")));
        }
        resp.body_mut()
            .read_json::<T>()
            .map_err(|e| BackendFailure::Fatal(format!("malformed response body: {e}")))
    }
}

fn classify(e: ureq::Error) -> BackendFailure {
    match e {
        ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed => {
            BackendFailure::Transient(e.to_string())
        }
        ureq::Error::StatusCode(s) if s == 429 || s >= 500 => BackendFailure::Transient(e.to_string()),
        other => BackendFailure::Fatal(other.to_string()),
    }
}

impl TextGenerator for RemoteBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<String, BackendFailure> {
        let body = json!({
            "model": self.model,
            "prompt": request.prompt,
            "parameters": {
                "max_tokens": request.max_tokens,
                "temperature": request.temperature,
            },
        });
        self.post::<GenerationResponse>(body).map(|r| r.output)
    }
}

impl TextEmbedder for RemoteBackend {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, BackendFailure> {
        let body = json!({
            "model": self.model,
            "inputs": texts,
            "parameters": {},
        });
        self.post::<EmbeddingResponse>(body).map(|r| r.vectors)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{BackendKind, Gateway, GatewayOptions, RetryPolicy};
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serves the given (status, body) responses in order, one per connection.
    fn serve(responses: Vec<(u16, String)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let reply = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
            bodies
        });
        (format!("http://{addr}/v1"), handle)
    }

    fn gateway(kind: BackendKind, endpoint: String, retries: u32) -> Gateway {
        Gateway::new(
            BackendDescriptor {
                kind,
                endpoint: Some(endpoint),
                model_name: "test-model".into(),
                seed: None,
                api_key_env: None,
            },
            GatewayOptions {
                retry: RetryPolicy::no_delay(retries),
                timeout: Duration::from_secs(5),
                ..GatewayOptions::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn retries_through_rate_limits() {
        let ok = r#"{"output":"1. Press Freedom"}"#.to_string();
        let (url, server) = serve(vec![
            (429, "{}".into()),
            (429, "{}".into()),
            (429, "{}".into()),
            (200, ok),
        ]);
        let g = gateway(BackendKind::RemoteGeneration, url, 4);
        let out = g.generate(&GenerationRequest::new("prompt text", 32)).unwrap();
        assert_eq!(out, "1. Press Freedom");
        let bodies = server.join().unwrap();
        assert_eq!(bodies.len(), 4);
        let sent: serde_json::Value = serde_json::from_str(&bodies[3]).unwrap();
        assert_eq!(sent["model"], "test-model");
        assert_eq!(sent["prompt"], "prompt text");
        assert_eq!(sent["parameters"]["max_tokens"], 32);
    }

    #[test]
    fn exhausted_retries_is_transport_error() {
        let (url, server) = serve(vec![(503, "{}".into()), (503, "{}".into())]);
        let g = gateway(BackendKind::RemoteGeneration, url, 1);
        let err = g.generate(&GenerationRequest::new("p", 4)).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 2, .. }), "{err}");
        server.join().unwrap();
    }

    #[test]
    fn client_error_not_retried() {
        let (url, server) = serve(vec![(400, r#"{"error":"bad"}"#.into())]);
        let g = gateway(BackendKind::RemoteGeneration, url, 3);
        assert!(matches!(
            g.generate(&GenerationRequest::new("p", 4)),
            Err(GatewayError::Backend(_))
        ));
        server.join().unwrap();
    }

    #[test]
    fn remote_embeddings_are_normalized() {
        let (url, server) = serve(vec![(200, r#"{"vectors":[[3.0,4.0],[0.0,2.0]]}"#.into())]);
        let g = gateway(BackendKind::RemoteEmbedding, url, 0);
        let v = g.embed_batch(&["a".into(), "b".into()]).unwrap();
        assert_eq!(v[0].values(), &[0.6, 0.8]);
        assert_eq!(v[1].values(), &[0.0, 1.0]);
        let body: serde_json::Value = serde_json::from_str(&server.join().unwrap()[0]).unwrap();
        assert_eq!(body["inputs"], json!(["a", "b"]));
    }
}
