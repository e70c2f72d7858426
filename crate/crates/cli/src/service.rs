//! Loopback HTTP and WebSocket translation service.
//!
//! Routes: `GET /health`, `POST /translate`, `GET /stream` (WebSocket).
//! Payload field names are documented in `docs/api.md`.

use std::io;
use std::net::{IpAddr, SocketAddr};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use hyper_util::rt::{TokioExecutor, TokioIo};
use hyper_util::server::conn::auto;
use hyper_util::service::TowerToHyperService;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, OwnedSemaphorePermit, Semaphore};
use vien_core::pipeline::{Direction, PipelineError, Session, StreamToken, TranslationTurn};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub addr: SocketAddr,
    /// Accept peers other than loopback. Off by default.
    pub allow_nonlocal: bool,
    /// Requests allowed to wait behind the running one.
    pub queue_depth: usize,
    /// Longest a request waits for its turn before BUSY_TIMEOUT.
    pub busy_timeout: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            addr: SocketAddr::from(([127, 0, 0, 1], 8787)),
            allow_nonlocal: false,
            queue_depth: 8,
            busy_timeout: Duration::from_secs(30),
        }
    }
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("refusing to bind non-loopback address {0} without allow_nonlocal")]
    NonLocalBind(SocketAddr),
    #[error("bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiTranslateRequest {
    pub text: String,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiTranslateResponse {
    pub translation: String,
    pub direction: Direction,
    pub timing_ms: f64,
    pub prompt_tokens: usize,
    pub generated_tokens: usize,
    pub truncated: bool,
}

impl From<TranslationTurn> for ApiTranslateResponse {
    fn from(turn: TranslationTurn) -> Self {
        ApiTranslateResponse {
            translation: turn.output_text,
            direction: turn.direction,
            timing_ms: turn.timing.total_ms,
            prompt_tokens: turn.token_counts.prompt,
            generated_tokens: turn.token_counts.generated,
            truncated: turn.truncated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthResponse {
    pub status: String,
    pub model: String,
    pub quant_type: String,
    /// Always true: the build has no outbound network client.
    pub offline: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    EmptyInput,
    ContextOverflow,
    BusyTimeout,
    /// Malformed request payload.
    BadRequest,
    Internal,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::EmptyInput => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::ContextOverflow => StatusCode::PAYLOAD_TOO_LARGE,
            ErrorCode::BusyTimeout => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
}

impl ApiError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
        }
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let code = match e {
            PipelineError::EmptyInput => ErrorCode::EmptyInput,
            PipelineError::ContextOverflow { .. } => ErrorCode::ContextOverflow,
            _ => ErrorCode::Internal,
        };
        ApiError::new(code, e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ApiError,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(ErrorBody { error: self })).into_response()
    }
}

/// One WebSocket message from the service. Serializes as `{"token": ...}`,
/// `{"done": ...}` or `{"error": ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamEvent {
    Token(StreamToken),
    Done(ApiTranslateResponse),
    Error(ApiError),
}

/// Single-slot inference queue with bounded waiting.
struct Queue {
    slot: Arc<Semaphore>,
    waiting: AtomicUsize,
    depth: usize,
    timeout: Duration,
}

impl Queue {
    async fn enter(&self) -> Result<OwnedSemaphorePermit, ApiError> {
        if let Ok(permit) = self.slot.clone().try_acquire_owned() {
            return Ok(permit);
        }
        if self.waiting.fetch_add(1, Ordering::SeqCst) >= self.depth {
            self.waiting.fetch_sub(1, Ordering::SeqCst);
            return Err(ApiError::new(ErrorCode::BusyTimeout, "queue is full"));
        }
        let got = tokio::time::timeout(self.timeout, self.slot.clone().acquire_owned()).await;
        self.waiting.fetch_sub(1, Ordering::SeqCst);
        match got {
            Ok(Ok(permit)) => Ok(permit),
            _ => Err(ApiError::new(
                ErrorCode::BusyTimeout,
                format!("no inference slot within {} ms", self.timeout.as_millis()),
            )),
        }
    }
}

pub struct AppState {
    session: Arc<Session>,
    health: HealthResponse,
    queue: Queue,
}

impl AppState {
    pub fn new(session: Session, model: impl Into<String>, quant_type: impl Into<String>, config: &ServiceConfig) -> Self {
        AppState {
            session: Arc::new(session),
            health: HealthResponse {
                status: "ok".into(),
                model: model.into(),
                quant_type: quant_type.into(),
                offline: true,
            },
            queue: Queue {
                slot: Arc::new(Semaphore::new(1)),
                waiting: AtomicUsize::new(0),
                depth: config.queue_depth,
                timeout: config.busy_timeout,
            },
        }
    }

    /// Waits for the inference slot, then translates on a blocking thread.
    /// Tokens go to `tokens` as they are produced.
    async fn translate(
        &self,
        req: ApiTranslateRequest,
        tokens: Option<mpsc::UnboundedSender<StreamToken>>,
    ) -> Result<ApiTranslateResponse, ApiError> {
        if req.text.trim().is_empty() {
            return Err(PipelineError::EmptyInput.into());
        }
        let permit = self.queue.enter().await?;
        let session = self.session.clone();
        let turn = tokio::task::spawn_blocking(move || {
            let _permit = permit;
            session.translate_as(req.direction, &req.text, &mut |t| {
                if let Some(tx) = &tokens {
                    let _ = tx.send(t.clone());
                }
            })
        })
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))??;
        Ok(turn.into())
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/translate", post(translate))
        .route("/stream", get(stream))
        .with_state(state)
}

async fn health(State(state): State<Arc<AppState>>) -> Json<HealthResponse> {
    Json(state.health.clone())
}

async fn translate(
    State(state): State<Arc<AppState>>,
    body: Result<Json<ApiTranslateRequest>, JsonRejection>,
) -> Result<Json<ApiTranslateResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError::new(ErrorCode::BadRequest, e.body_text()))?;
    Ok(Json(state.translate(req, None).await?))
}

async fn stream(State(state): State<Arc<AppState>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| stream_session(socket, state))
}

async fn send_event(socket: &mut WebSocket, event: &StreamEvent) -> bool {
    let text = serde_json::to_string(event).expect("events serialize");
    socket.send(Message::Text(text)).await.is_ok()
}

/// Each text message is one request; its events are sent in order before the
/// next message is read.
async fn stream_session(mut socket: WebSocket, state: Arc<AppState>) {
    while let Some(Ok(msg)) = socket.recv().await {
        let text = match msg {
            Message::Text(t) => t,
            Message::Close(_) => break,
            Message::Binary(_) => {
                let err = ApiError::new(ErrorCode::BadRequest, "expected a text message");
                if !send_event(&mut socket, &StreamEvent::Error(err)).await {
                    break;
                }
                continue;
            }
            _ => continue,
        };
        let req: ApiTranslateRequest = match serde_json::from_str(&text) {
            Ok(r) => r,
            Err(e) => {
                let err = ApiError::new(ErrorCode::BadRequest, e.to_string());
                if !send_event(&mut socket, &StreamEvent::Error(err)).await {
                    break;
                }
                continue;
            }
        };
        let (tx, mut rx) = mpsc::unbounded_channel();
        let worker = {
            let state = state.clone();
            tokio::spawn(async move { state.translate(req, Some(tx)).await })
        };
        let mut open = true;
        while let Some(tok) = rx.recv().await {
            if open && !send_event(&mut socket, &StreamEvent::Token(tok)).await {
                open = false;
            }
        }
        let event = match worker.await {
            Ok(Ok(resp)) => StreamEvent::Done(resp),
            Ok(Err(e)) => StreamEvent::Error(e),
            Err(e) => StreamEvent::Error(ApiError::new(ErrorCode::Internal, e.to_string())),
        };
        if !open || !send_event(&mut socket, &event).await {
            break;
        }
    }
}

pub fn is_loopback(ip: IpAddr) -> bool {
    match ip {
        IpAddr::V4(v4) => v4.is_loopback(),
        IpAddr::V6(v6) => v6.is_loopback() || v6.to_ipv4_mapped().is_some_and(|v4| v4.is_loopback()),
    }
}

pub fn peer_allowed(peer: IpAddr, allow_nonlocal: bool) -> bool {
    allow_nonlocal || is_loopback(peer)
}

pub async fn bind(config: &ServiceConfig) -> Result<TcpListener, ServiceError> {
    if !config.allow_nonlocal && !is_loopback(config.addr.ip()) {
        return Err(ServiceError::NonLocalBind(config.addr));
    }
    TcpListener::bind(config.addr).await.map_err(|source| ServiceError::Bind {
        addr: config.addr,
        source,
    })
}

/// Accept loop. Connections from disallowed peers are closed before any
/// byte is read.
pub async fn serve_listener(listener: TcpListener, app: Router, allow_nonlocal: bool) -> io::Result<()> {
    loop {
        let (stream, peer) = match listener.accept().await {
            Ok(conn) => conn,
            Err(e) => {
                tracing::warn!("accept failed: {e}");
                tokio::time::sleep(Duration::from_millis(50)).await;
                continue;
            }
        };
        if !peer_allowed(peer.ip(), allow_nonlocal) {
            tracing::warn!(%peer, "rejected non-loopback connection");
            drop(stream);
            continue;
        }
        let svc = TowerToHyperService::new(app.clone());
        tokio::spawn(async move {
            if let Err(e) = auto::Builder::new(TokioExecutor::new())
                .serve_connection_with_upgrades(TokioIo::new(stream), svc)
                .await
            {
                tracing::debug!(%peer, "connection ended: {e}");
            }
        });
    }
}
