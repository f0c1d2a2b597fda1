//! Chat-completions client over blocking HTTP.

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use super::{Backend, Completion, GatewayError, Request};

const MAX_BACKOFF: Duration = Duration::from_secs(30);

pub struct HttpBackend {
    client: Client,
    endpoint: String,
    api_key: String,
    max_tokens: u32,
    retry_limit: u32,
    base_backoff: Duration,
}

impl HttpBackend {
    pub fn new(
        endpoint: impl Into<String>,
        api_key: impl Into<String>,
        timeout: Duration,
        max_tokens: u32,
        retry_limit: u32,
    ) -> Result<Self, GatewayError> {
        let client = Client::builder().timeout(timeout).build().map_err(|e| GatewayError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: endpoint.into(),
            api_key: api_key.into(),
            max_tokens,
            retry_limit,
            base_backoff: Duration::from_millis(500),
        })
    }

    /// Shorter first backoff step, for tests against a local server.
    pub fn with_base_backoff(mut self, base: Duration) -> Self {
        self.base_backoff = base;
        self
    }

    fn body(&self, req: &Request) -> Value {
        json!({
            "model": req.model,
            "messages": [
                {"role": "system", "content": req.system},
                {"role": "user", "content": req.user},
            ],
            "temperature": req.temperature,
            "max_tokens": self.max_tokens,
        })
    }

    fn backoff(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        retry_after.unwrap_or_else(|| self.base_backoff.saturating_mul(1 << attempt.min(16))).min(MAX_BACKOFF)
    }
}

fn retry_after(resp: &reqwest::blocking::Response) -> Option<Duration> {
    let v = resp.headers().get(reqwest::header::RETRY_AFTER)?.to_str().ok()?;
    v.trim().parse::<f64>().ok().filter(|s| s.is_finite() && *s >= 0.0).map(Duration::from_secs_f64)
}

fn parse_completion(v: &Value) -> Result<Completion, GatewayError> {
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::Transport(format!("response has no choices[0].message.content: {v}")))?;
    let usage = |k: &str| v.pointer(&format!("/usage/{k}")).and_then(Value::as_u64);
    Ok(Completion { text: text.to_string(), prompt_tokens: usage("prompt_tokens"), completion_tokens: usage("completion_tokens") })
}

impl Backend for HttpBackend {
    fn complete(&self, req: &Request) -> Result<Completion, GatewayError> {
        let body = self.body(req);
        let mut attempt = 0;
        loop {
            let result = self.client.post(&self.endpoint).bearer_auth(&self.api_key).json(&body).send();
            let (err, wait) = match result {
                Ok(resp) if resp.status().is_success() => {
                    let v: Value = resp.json().map_err(|e| GatewayError::Transport(e.to_string()))?;
                    return parse_completion(&v);
                }
                Ok(resp) => {
                    let status = resp.status();
                    let wait = retry_after(&resp);
                    let text = resp.text().unwrap_or_default();
                    let err = GatewayError::Transport(format!("HTTP {status}: {}", text.chars().take(300).collect::<String>()));
                    if !(status == StatusCode::TOO_MANY_REQUESTS || status == StatusCode::REQUEST_TIMEOUT || status.is_server_error()) {
                        return Err(err);
                    }
                    (err, wait)
                }
                Err(e) => (GatewayError::Transport(e.to_string()), None),
            };
            if attempt >= self.retry_limit {
                return Err(err);
            }
            std::thread::sleep(self.backoff(attempt, wait));
            attempt += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;

    /// Serve canned HTTP responses, one per connection, returning the bodies received.
    fn serve(responses: Vec<String>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for resp in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                bodies.push(String::from_utf8(body).unwrap());
                reader.get_mut().write_all(resp.as_bytes()).unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn http(status: &str, extra: &str, body: &str) -> String {
        format!("HTTP/1.1 {status}\r\nContent-Type: application/json\r\n{extra}Content-Length: {}\r\nConnection: close\r\n\r\n{body}", body.len())
    }

    fn request() -> Request {
        Request { system: "s".into(), user: "u".into(), model: "m".into(), temperature: 0.7, candidate: 0 }
    }

    #[test]
    fn retries_rate_limits_then_succeeds() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"<html></html>"}}],"usage":{"prompt_tokens":5,"completion_tokens":3}}"#;
        let (url, server) = serve(vec![
            http("429 Too Many Requests", "Retry-After: 0\r\n", "{}"),
            http("503 Service Unavailable", "", "{}"),
            http("200 OK", "", ok),
        ]);
        let backend = HttpBackend::new(url, "k", Duration::from_secs(5), 64, 3).unwrap().with_base_backoff(Duration::from_millis(1));
        let c = backend.complete(&request()).unwrap();
        assert_eq!(c.text, "<html></html>");
        assert_eq!((c.prompt_tokens, c.completion_tokens), (Some(5), Some(3)));
        let bodies = server.join().unwrap();
        assert_eq!(bodies.len(), 3);
        let sent: Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(sent["messages"][1]["content"], "u");
        assert_eq!(sent["max_tokens"], 64);
    }

    #[test]
    fn client_errors_are_not_retried() {
        let (url, server) = serve(vec![http("401 Unauthorized", "", r#"{"error":"bad key"}"#)]);
        let backend = HttpBackend::new(url, "k", Duration::from_secs(5), 64, 3).unwrap().with_base_backoff(Duration::from_millis(1));
        let err = backend.complete(&request()).unwrap_err();
        assert!(matches!(err, GatewayError::Transport(ref m) if m.contains("401")));
        assert_eq!(server.join().unwrap().len(), 1);
    }

    #[test]
    fn gives_up_after_retry_limit() {
        let (url, server) = serve(vec![http("500 Internal Server Error", "", "{}"), http("500 Internal Server Error", "", "{}")]);
        let backend = HttpBackend::new(url, "k", Duration::from_secs(5), 64, 1).unwrap().with_base_backoff(Duration::from_millis(1));
        assert!(matches!(backend.complete(&request()), Err(GatewayError::Transport(_))));
        assert_eq!(server.join().unwrap().len(), 2);
    }
}
