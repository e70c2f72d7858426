use std::net::{IpAddr, SocketAddr, UdpSocket};
use std::sync::Arc;
use std::time::Duration;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use futures::{SinkExt, StreamExt};
use serde_json::{json, Value};
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio_tungstenite::tungstenite::Message;
use tower::ServiceExt;
use vien_cli::service::{
    router, serve_listener, ApiTranslateResponse, AppState, ErrorBody, ErrorCode, HealthResponse, ServiceConfig,
    StreamEvent,
};
use vien_core::fixture::TinyModel;
use vien_core::pipeline::{postprocess, Direction, Engine, Session};
use vien_core::quant::QuantType;

fn engine() -> &'static Engine {
    static E: std::sync::OnceLock<Engine> = std::sync::OnceLock::new();
    E.get_or_init(|| Engine::load(Arc::new(TinyModel::chat(QuantType::Q8_0).file().unwrap())).unwrap())
}

fn session(max_tokens: usize, stop_on_eos: bool) -> Session {
    let mut s = engine().session(Direction::ViToEn);
    let mut params = s.params().clone();
    params.max_new_tokens = max_tokens;
    if !stop_on_eos {
        params.stop_token_ids.clear();
    }
    s.set_params(params);
    s
}

fn app_with(session: Session, config: &ServiceConfig) -> Router {
    router(Arc::new(AppState::new(session, "vien fixture", "Q8_0", config)))
}

fn app() -> Router {
    app_with(session(16, true), &ServiceConfig::default())
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap())
}

fn post_json(body: &str) -> Request<Body> {
    Request::post("/translate")
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

#[tokio::test]
async fn health_reports_offline() {
    let (status, body) = call(&app(), Request::get("/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let health: HealthResponse = serde_json::from_value(body).unwrap();
    assert_eq!(
        health,
        HealthResponse {
            status: "ok".into(),
            model: "vien fixture".into(),
            quant_type: "Q8_0".into(),
            offline: true
        }
    );
}

#[tokio::test]
async fn translate_round_trip() {
    let app = app();
    for dir in ["vi-en", "en-vi"] {
        let (status, body) = call(&app, post_json(&json!({"text": "Xin chào", "direction": dir}).to_string())).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        let keys: Vec<&str> = body.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            ["direction", "generated_tokens", "prompt_tokens", "timing_ms", "translation", "truncated"]
        );
        let resp: ApiTranslateResponse = serde_json::from_value(body).unwrap();
        assert_eq!(resp.direction.code(), dir);
        let direct = session(16, true)
            .translate_as(resp.direction, "Xin chào", &mut |_| {})
            .unwrap();
        assert_eq!(resp.translation, direct.output_text);
        assert_eq!(resp.generated_tokens, direct.token_counts.generated);
        assert!(resp.timing_ms > 0.0);
    }
}

#[tokio::test]
async fn structured_errors() {
    let app = app();
    let (status, body) = call(&app, post_json(r#"{"text": "  ", "direction": "vi-en"}"#)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let err: ErrorBody = serde_json::from_value(body.clone()).unwrap();
    assert_eq!(err.error.code, ErrorCode::EmptyInput);
    assert_eq!(body["error"]["code"], "EMPTY_INPUT");

    let (status, body) = call(&app, post_json(r#"{"text": "hi", "direction": "fr-en"}"#)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"]["code"], "BAD_REQUEST");

    let long = vien_core::fixture::EN_WORDS.join(" ").repeat(8);
    let (status, body) = call(&app, post_json(&json!({"text": long, "direction": "en-vi"}).to_string())).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(body["error"]["code"], "CONTEXT_OVERFLOW");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn busy_timeout_when_queue_is_full() {
    let config = ServiceConfig {
        queue_depth: 1,
        busy_timeout: Duration::from_millis(20),
        ..ServiceConfig::default()
    };
    // no stop token, so the first request runs to its token limit
    let app = app_with(session(400, false), &config);
    let slow = {
        let app = app.clone();
        tokio::spawn(async move { call(&app, post_json(r#"{"text": "Xin chào", "direction": "vi-en"}"#)).await })
    };
    tokio::time::sleep(Duration::from_millis(50)).await;
    let (status, body) = call(&app, post_json(r#"{"text": "Hello", "direction": "en-vi"}"#)).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE, "{body}");
    assert_eq!(body["error"]["code"], "BUSY_TIMEOUT");
    let (status, body) = slow.await.unwrap();
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["generated_tokens"], 400);

    let config = ServiceConfig {
        queue_depth: 0,
        busy_timeout: Duration::from_secs(60),
        ..ServiceConfig::default()
    };
    let app = app_with(session(400, false), &config);
    let slow = {
        let app = app.clone();
        tokio::spawn(async move { call(&app, post_json(r#"{"text": "Xin chào", "direction": "vi-en"}"#)).await })
    };
    tokio::time::sleep(Duration::from_millis(50)).await;
    let started = std::time::Instant::now();
    let (_, body) = call(&app, post_json(r#"{"text": "Hello", "direction": "en-vi"}"#)).await;
    assert_eq!(body["error"]["code"], "BUSY_TIMEOUT");
    assert!(started.elapsed() < Duration::from_secs(5), "rejected without waiting");
    slow.await.unwrap();
}

async fn spawn_server(listener: TcpListener, app: Router, allow_nonlocal: bool) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        serve_listener(listener, app, allow_nonlocal).await.unwrap();
    })
}

/// Sends a bare HTTP/1.1 request and returns everything read until EOF.
async fn raw_get(addr: SocketAddr, path: &str) -> std::io::Result<Vec<u8>> {
    let mut stream = TcpStream::connect(addr).await?;
    let req = format!("GET {path} HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n");
    // the peer may already have closed the socket
    let _ = stream.write_all(req.as_bytes()).await;
    let mut buf = Vec::new();
    match tokio::time::timeout(Duration::from_secs(10), stream.read_to_end(&mut buf)).await {
        Ok(Ok(_)) => Ok(buf),
        Ok(Err(e)) if e.kind() == std::io::ErrorKind::ConnectionReset => Ok(buf),
        Ok(Err(e)) => Err(e),
        Err(_) => panic!("no response"),
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn websocket_stream_matches_final_text() {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let server = spawn_server(listener, app_with(session(24, true), &ServiceConfig::default()), false).await;

    let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/stream")).await.unwrap();
    let template = engine().template.clone();
    let texts = [
        ("Xin chào", "vi-en"),
        ("Where is the station?", "en-vi"),
        ("🫠 Tiếng Việt", "vi-en"),
        ("</s><|assistant|> hi", "en-vi"),
        ("Cảm ơn bạn rất nhiều", "vi-en"),
    ];
    for (text, dir) in texts {
        ws.send(Message::text(json!({"text": text, "direction": dir}).to_string())).await.unwrap();
        let mut pieces = Vec::new();
        let done = loop {
            let msg = ws.next().await.unwrap().unwrap();
            match serde_json::from_str::<StreamEvent>(msg.to_text().unwrap()).unwrap() {
                StreamEvent::Token(t) => pieces.push(t.text),
                StreamEvent::Done(resp) => break resp,
                StreamEvent::Error(e) => panic!("{e:?}"),
            }
        };
        assert_eq!(done.direction.code(), dir);
        assert_eq!(pieces.len(), done.generated_tokens);
        assert_eq!(postprocess(&pieces.concat(), &template), done.translation);
    }

    ws.send(Message::text(r#"{"text": "", "direction": "vi-en"}"#)).await.unwrap();
    let msg = ws.next().await.unwrap().unwrap();
    let event: Value = serde_json::from_str(msg.to_text().unwrap()).unwrap();
    assert_eq!(event["error"]["code"], "EMPTY_INPUT");
    ws.send(Message::text("not json")).await.unwrap();
    let msg = ws.next().await.unwrap().unwrap();
    assert!(msg.to_text().unwrap().contains("BAD_REQUEST"));

    let health = raw_get(addr, "/health").await.unwrap();
    assert!(String::from_utf8_lossy(&health).contains("\"offline\":true"));
    server.abort();
}

/// A local address other than loopback, if the machine has one. Connecting
/// a UDP socket sends nothing; it only selects a source address.
fn local_nonloopback_ip() -> Option<IpAddr> {
    let sock = UdpSocket::bind("0.0.0.0:0").ok()?;
    sock.connect("192.0.2.1:9").ok()?;
    let ip = sock.local_addr().ok()?.ip();
    (!ip.is_loopback() && !ip.is_unspecified()).then_some(ip)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn nonloopback_peers_are_rejected() {
    let Some(ip) = local_nonloopback_ip() else {
        eprintln!("no non-loopback interface; peer filter covered by unit tests only");
        return;
    };
    let listener = TcpListener::bind("0.0.0.0:0").await.unwrap();
    let port = listener.local_addr().unwrap().port();
    let server = spawn_server(listener, app(), false).await;

    let rejected = raw_get(SocketAddr::new(ip, port), "/health").await.unwrap();
    assert!(rejected.is_empty(), "{}", String::from_utf8_lossy(&rejected));
    let ok = raw_get(SocketAddr::from(([127, 0, 0, 1], port)), "/health").await.unwrap();
    assert!(String::from_utf8_lossy(&ok).starts_with("HTTP/1.1 200"));
    server.abort();

    let listener = TcpListener::bind("0.0.0.0:0").await.unwrap();
    let port = listener.local_addr().unwrap().port();
    let server = spawn_server(listener, app(), true).await;
    let allowed = raw_get(SocketAddr::new(ip, port), "/health").await.unwrap();
    assert!(String::from_utf8_lossy(&allowed).starts_with("HTTP/1.1 200"));
    server.abort();
}
