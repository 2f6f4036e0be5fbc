use std::convert::Infallible;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use tokio::sync::{broadcast, oneshot};

use super::{ControlError, Monitor};

pub const DEFAULT_PORT: u16 = 5200;

impl IntoResponse for ControlError {
    fn into_response(self) -> Response {
        let status = match self {
            ControlError::NotFound(_) => StatusCode::NOT_FOUND,
            ControlError::Conflict(_) => StatusCode::CONFLICT,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = State<Arc<Monitor>>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("control handler panicked")
}

async fn status(State(m): Shared) -> impl IntoResponse {
    Json(m.statuses())
}

async fn control(State(m): Shared, Path((kind, endpoint, action)): Path<(String, String, String)>) -> Response {
    let result = blocking(move || match action.as_str() {
        "stop" => m.stop_service(&kind, &endpoint),
        "start" => m.start_service(&kind, &endpoint),
        "restart" => m.restart_service(&kind, &endpoint),
        other => Err(ControlError::NotFound(format!("unknown action `{other}`"))),
    })
    .await;
    match result {
        Ok(s) => Json(s).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn failover(State(m): Shared, Path(kind): Path<String>) -> Response {
    match blocking(move || m.failover(&kind)).await {
        Ok(s) => Json(s).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn wal(State(m): Shared, Path(kind): Path<String>) -> Response {
    match blocking(move || m.wal(&kind)).await {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn events(State(m): Shared) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let stream = futures::stream::unfold(m.subscribe(), |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(s) => {
                    let event = Event::default().event("status").json_data(&s).expect("status serializes");
                    return Some((Ok(event), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

async fn notify(State(m): Shared, Json(body): Json<serde_json::Value>) -> StatusCode {
    let text = |k: &str| match &body[k] {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Null => String::new(),
        v => v.to_string(),
    };
    let kind = text("kind");
    let kind = kind.parse::<crate::messaging::ServiceKind>().map(|k| k.key().to_owned()).unwrap_or(kind);
    m.notify(&kind, &text("endpoint"), &text("event"), &text("detail"));
    StatusCode::NO_CONTENT
}

pub fn router(monitor: Arc<Monitor>) -> Router {
    Router::new()
        .route("/status", get(status))
        .route("/services/{kind}/{endpoint}/{action}", post(control))
        .route("/failover/{kind}", post(failover))
        .route("/wal/{kind}", get(wal))
        .route("/events", get(events))
        .route("/notify", post(notify))
        .with_state(monitor)
}

/// The control plane running on its own runtime thread.
pub struct HttpServer {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl HttpServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn stop(mut self) {
        self.halt();
    }

    fn halt(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.halt();
    }
}

/// Binds `addr` (port 0 picks a free port) and serves the control plane.
pub fn serve_http(monitor: Arc<Monitor>, addr: SocketAddr) -> io::Result<HttpServer> {
    let listener = std::net::TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(monitor);
    let thread = thread::Builder::new().name("monitor-http".into()).spawn(move || {
        runtime.block_on(async move {
            let Ok(listener) = tokio::net::TcpListener::from_std(listener) else { return };
            tokio::select! {
                _ = axum::serve(listener, app) => {}
                _ = rx => {}
            }
        });
        runtime.shutdown_background();
    })?;
    Ok(HttpServer { addr, shutdown: Some(tx), thread: Some(thread) })
}
