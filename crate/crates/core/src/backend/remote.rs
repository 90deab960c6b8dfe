//! HTTP client for reward-model backends served over the wire protocol.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::domain::codec::{decode, encode, SchemaMode};
use crate::domain::Validate;

use super::{BackendError, DsBackend, DsInput, DsVerdict, GpBackend, GpInput, GpVerdict};

pub const URL_ENV: &str = "RMS_BACKEND_URL";
pub const TOKEN_ENV: &str = "RMS_BACKEND_TOKEN";

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub base_url: String,
    pub token: Option<String>,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub max_retries: u32,
    pub backoff: Duration,
}

impl RemoteConfig {
    /// Endpoint from `endpoint` or the URL environment variable; bearer
    /// token from the token environment variable.
    pub fn from_env(endpoint: Option<&str>) -> Result<Self, BackendError> {
        let base_url = match endpoint {
            Some(e) => e.to_string(),
            None => std::env::var(URL_ENV)
                .map_err(|_| BackendError::Data(format!("no endpoint given and {URL_ENV} is unset")))?,
        };
        Ok(Self { token: std::env::var(TOKEN_ENV).ok().filter(|t| !t.is_empty()), ..Self::new(base_url) })
    }

    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            token: None,
            timeout: Duration::from_secs(10),
            max_in_flight: 16,
            max_retries: 4,
            backoff: Duration::from_millis(25),
        }
    }
}

/// Counting gate bounding concurrent requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn enter(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().expect("gate lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("gate lock");
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("gate lock") += 1;
        self.0.cv.notify_one();
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub field: String,
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    client: Client,
    gate: Gate,
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| BackendError::Data(format!("http client: {e}")))?;
        let gate = Gate { free: Mutex::new(cfg.max_in_flight.max(1)), cv: Condvar::new() };
        Ok(Self { cfg, client, gate })
    }

    fn post<I: Serialize, O: DeserializeOwned + Serialize>(&self, path: &str, body: &I) -> Result<O, BackendError> {
        let url = format!("{}{path}", self.cfg.base_url.trim_end_matches('/'));
        let body = encode(body);
        let _slot = self.gate.enter();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let mut req = self.client.post(&url).header("content-type", "application/json").body(body.clone());
            if let Some(t) = &self.cfg.token {
                req = req.bearer_auth(t);
            }
            let retry_reason = match req.send() {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| BackendError::Unavailable { attempts: attempt, message: e.to_string() })?;
                    match status {
                        StatusCode::OK => {
                            return decode::<O>(&text, 1, SchemaMode::Strict)
                                .map_err(|e| BackendError::Malformed(vec![e.to_string()]));
                        }
                        StatusCode::BAD_REQUEST => {
                            let b: ErrorBody = serde_json::from_str(&text)
                                .unwrap_or(ErrorBody { error: text.clone(), field: String::new() });
                            return Err(BackendError::Rejected { error: b.error, field: b.field });
                        }
                        StatusCode::SERVICE_UNAVAILABLE => "service unavailable (503)".to_string(),
                        other => return Err(BackendError::Status { status: other.as_u16(), body: text }),
                    }
                }
                Err(e) if e.is_connect() || e.is_timeout() || e.is_request() => e.to_string(),
                Err(e) => return Err(BackendError::Unavailable { attempts: attempt, message: e.to_string() }),
            };
            if attempt > self.cfg.max_retries {
                return Err(BackendError::Unavailable { attempts: attempt, message: retry_reason });
            }
            log::debug!("retrying {path} after attempt {attempt}: {retry_reason}");
            thread::sleep(self.cfg.backoff * 2u32.pow(attempt - 1));
        }
    }
}

impl DsBackend for RemoteBackend {
    fn ds_evaluate(&self, input: &DsInput) -> Result<DsVerdict, BackendError> {
        let v: DsVerdict = self.post("/v1/ds-evaluate", input)?;
        let problems = v.validate();
        if problems.is_empty() {
            Ok(v)
        } else {
            Err(BackendError::Malformed(problems))
        }
    }
}

impl GpBackend for RemoteBackend {
    fn gp_evaluate(&self, input: &GpInput) -> Result<GpVerdict, BackendError> {
        let v: GpVerdict = self.post("/v1/gp-evaluate", input)?;
        let problems = v.violations_for(input);
        if problems.is_empty() {
            Ok(v)
        } else {
            Err(BackendError::Malformed(problems))
        }
    }
}
