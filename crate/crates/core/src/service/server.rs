//! HTTP and WebSocket transport for [`SessionManager`].
//!
//! | route | method | body |
//! |-------|--------|------|
//! | `/health` | GET | `{"status":"ok","protocol_version":1,"sessions":n}` |
//! | `/sessions` | POST | a `create` payload; answers like a `create` message |
//! | `/messages` | POST | any protocol message; answers with its response |
//! | `/ws` | GET | WebSocket upgrade; one response per text frame |
//!
//! Anything else is served from the optional static asset directory.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use super::{SessionManager, PROTOCOL_VERSION};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    /// Static files (the manual-mode UI build) served under `/`.
    pub assets: Option<PathBuf>,
}

pub fn router(manager: Arc<SessionManager>, assets: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/messages", post(message))
        .route("/ws", get(ws_upgrade))
        .with_state(manager);
    match assets {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

/// Bind and serve until the process is stopped.
pub async fn serve(config: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "erd session service listening");
    axum::serve(listener, router(Arc::new(SessionManager::new()), config.assets)).await
}

async fn health(State(m): State<Arc<SessionManager>>) -> Json<Value> {
    Json(json!({ "status": "ok", "protocol_version": PROTOCOL_VERSION, "sessions": m.len() }))
}

fn json_response(text: String) -> Response {
    let status = match serde_json::from_str::<Value>(&text) {
        Ok(v) if v["type"] == "error" => match v["payload"]["code"].as_str() {
            Some("not_found") => StatusCode::NOT_FOUND,
            Some("internal") => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        },
        _ => StatusCode::OK,
    };
    (status, [(header::CONTENT_TYPE, "application/json")], text).into_response()
}

async fn create_session(State(m): State<Arc<SessionManager>>, body: String) -> Response {
    let payload: Value = if body.trim().is_empty() {
        Value::Null
    } else {
        match serde_json::from_str(&body) {
            Ok(v) => v,
            // let the manager produce the structured error
            Err(_) => return json_response(m.handle(&body)),
        }
    };
    let msg = json!({ "type": "create", "payload": payload }).to_string();
    json_response(m.handle(&msg))
}

async fn message(State(m): State<Arc<SessionManager>>, body: String) -> Response {
    json_response(m.handle(&body))
}

async fn ws_upgrade(State(m): State<Arc<SessionManager>>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| ws_loop(socket, m))
}

async fn ws_loop(mut socket: WebSocket, m: Arc<SessionManager>) {
    while let Some(Ok(msg)) = socket.recv().await {
        let reply = match msg {
            Message::Text(text) => m.handle(text.as_str()),
            Message::Binary(bytes) => match std::str::from_utf8(&bytes) {
                Ok(text) => m.handle(text),
                Err(_) => m.handle(""),
            },
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => continue,
        };
        if socket.send(Message::Text(reply.into())).await.is_err() {
            break;
        }
    }
}
