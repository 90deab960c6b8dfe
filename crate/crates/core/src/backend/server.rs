//! Mock reward-model server exposing the oracle backends over HTTP.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::Router;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::oneshot;

use crate::domain::codec::{decode, encode, CodecError, SchemaMode};

use super::remote::ErrorBody;
use super::{BackendError, DsBackend, DsInput, GpBackend, GpInput, OracleDs, OracleGp};

#[derive(Debug, Clone)]
pub struct MockServerConfig {
    /// Required bearer token, if any.
    pub token: Option<String>,
    /// Requests served concurrently before answering 503.
    pub capacity: usize,
}

impl Default for MockServerConfig {
    fn default() -> Self {
        Self { token: None, capacity: 64 }
    }
}

struct Shared {
    ds: OracleDs,
    gp: OracleGp,
    cfg: MockServerConfig,
    in_flight: AtomicUsize,
    fail_next: AtomicUsize,
    served: AtomicUsize,
}

/// Handle to a running server; dropping it shuts the server down.
pub struct MockServer {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Binds `addr` (port 0 picks a free port) and serves on a background
    /// thread.
    pub fn start(addr: SocketAddr, ds: OracleDs, gp: OracleGp, cfg: MockServerConfig) -> std::io::Result<Self> {
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let shared = Arc::new(Shared {
            ds,
            gp,
            cfg,
            in_flight: AtomicUsize::new(0),
            fail_next: AtomicUsize::new(0),
            served: AtomicUsize::new(0),
        });
        let app = Router::new()
            .route("/v1/ds-evaluate", post(ds_handler))
            .route("/v1/gp-evaluate", post(gp_handler))
            .with_state(shared.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).expect("listener from std");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self { addr, shared, stop: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// The next `n` requests are answered with 503.
    pub fn inject_unavailable(&self, n: usize) {
        self.shared.fail_next.store(n, Ordering::SeqCst);
    }

    /// Requests received so far, including refused ones.
    pub fn requests_served(&self) -> usize {
        self.shared.served.load(Ordering::SeqCst)
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn json(status: StatusCode, body: String) -> Response {
    (status, [("content-type", "application/json")], body).into_response()
}

fn error(status: StatusCode, error: String, field: String) -> Response {
    json(status, encode(&ErrorBody { error, field }))
}

struct InFlight<'a>(&'a AtomicUsize);

impl Drop for InFlight<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

fn handle<I, O>(shared: &Shared, path: &str, headers: &HeaderMap, body: &[u8], eval: impl FnOnce(&I) -> Result<O, BackendError>) -> Response
where
    I: DeserializeOwned + Serialize,
    O: Serialize,
{
    shared.served.fetch_add(1, Ordering::SeqCst);
    let response = (|| {
        if let Some(token) = &shared.cfg.token {
            let expected = format!("Bearer {token}");
            if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some(expected.as_str()) {
                return error(StatusCode::UNAUTHORIZED, "missing or invalid bearer token".into(), "authorization".into());
            }
        }
        let injected = shared.fail_next.fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1)).is_ok();
        if injected {
            return error(StatusCode::SERVICE_UNAVAILABLE, "overloaded".into(), String::new());
        }
        let _guard = InFlight(&shared.in_flight);
        if shared.in_flight.fetch_add(1, Ordering::SeqCst) >= shared.cfg.capacity {
            return error(StatusCode::SERVICE_UNAVAILABLE, "overloaded".into(), String::new());
        }
        let text = match std::str::from_utf8(body) {
            Ok(t) => t,
            Err(_) => return error(StatusCode::BAD_REQUEST, "body is not UTF-8".into(), String::new()),
        };
        let input: I = match decode(text, 1, SchemaMode::Strict) {
            Ok(i) => i,
            Err(e) => {
                let field = e.field().unwrap_or_default().to_string();
                let msg = match &e {
                    CodecError::Parse { message, .. } => message.clone(),
                    other => other.to_string(),
                };
                return error(StatusCode::BAD_REQUEST, msg, field);
            }
        };
        match eval(&input) {
            Ok(v) => json(StatusCode::OK, encode(&v)),
            Err(BackendError::Data(m)) => error(StatusCode::BAD_REQUEST, m, "context".into()),
            Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), String::new()),
        }
    })();
    log::info!("POST {path} {}", response.status().as_u16());
    response
}

async fn ds_handler(State(s): State<Arc<Shared>>, headers: HeaderMap, body: Bytes) -> Response {
    handle::<DsInput, _>(&s, "/v1/ds-evaluate", &headers, &body, |i| s.ds.ds_evaluate(i))
}

async fn gp_handler(State(s): State<Arc<Shared>>, headers: HeaderMap, body: Bytes) -> Response {
    handle::<GpInput, _>(&s, "/v1/gp-evaluate", &headers, &body, |i| s.gp.gp_evaluate(i))
}
