//! Serves any [`Backend`] over the v1 HTTP protocol.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use tokio::sync::oneshot;

use super::{codes, Backend, BackendError, ErrorBody, GenerationRequest, GenerationResponse, ScoreRequest};

type Shared = Arc<dyn Backend>;

/// A running server. Dropping the handle shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
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

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

fn error_response(err: &BackendError) -> Response {
    let status = match err {
        BackendError::Alignment(_) => StatusCode::UNPROCESSABLE_ENTITY,
        BackendError::InvalidRequest(_) | BackendError::Unsupported(_) => StatusCode::BAD_REQUEST,
        BackendError::Timeout(_) => StatusCode::GATEWAY_TIMEOUT,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    let detail = match err {
        BackendError::Alignment(d)
        | BackendError::InvalidRequest(d)
        | BackendError::Unsupported(d)
        | BackendError::Timeout(d)
        | BackendError::Transport(d)
        | BackendError::UnknownUri(d) => d.clone(),
        BackendError::Remote { detail, .. } => detail.clone(),
    };
    let body = ErrorBody {
        error: err.code().to_string(),
        detail,
    };
    (status, Json(body)).into_response()
}

fn rejection(rej: JsonRejection) -> Response {
    let body = ErrorBody {
        error: codes::INVALID_ARGUMENT.to_string(),
        detail: rej.body_text(),
    };
    (StatusCode::BAD_REQUEST, Json(body)).into_response()
}

async fn generate(State(backend): State<Shared>, req: Result<Json<GenerationRequest>, JsonRejection>) -> Response {
    let Json(req) = match req {
        Ok(r) => r,
        Err(rej) => return rejection(rej),
    };
    if let Err(e) = req.validate() {
        return error_response(&e);
    }
    let result = tokio::task::spawn_blocking(move || backend.generate(&req)).await;
    match result {
        Ok(Ok(text)) => Json(GenerationResponse { text }).into_response(),
        Ok(Err(e)) => error_response(&e),
        Err(join) => error_response(&BackendError::Transport(join.to_string())),
    }
}

async fn score(State(backend): State<Shared>, req: Result<Json<ScoreRequest>, JsonRejection>) -> Response {
    let Json(req) = match req {
        Ok(r) => r,
        Err(rej) => return rejection(rej),
    };
    if let Err(e) = req.validate() {
        return error_response(&e);
    }
    let result = tokio::task::spawn_blocking(move || backend.score(&req)).await;
    match result {
        Ok(Ok(resp)) => Json(resp).into_response(),
        Ok(Err(e)) => error_response(&e),
        Err(join) => error_response(&BackendError::Transport(join.to_string())),
    }
}

pub fn router(backend: Shared) -> Router {
    Router::new()
        .route("/v1/generate", post(generate))
        .route("/v1/score", post(score))
        .with_state(backend)
}

/// Binds `addr` (port 0 picks a free port) and serves on a background
/// thread with its own runtime.
pub fn serve(backend: Shared, addr: SocketAddr) -> std::io::Result<ServerHandle> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    let listener = runtime.block_on(tokio::net::TcpListener::bind(addr))?;
    let local = listener.local_addr()?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(backend);
    let thread = std::thread::Builder::new()
        .name(format!("thinkaudit-serve-{}", local.port()))
        .spawn(move || {
            runtime.block_on(async move {
                let shutdown = async {
                    let _ = rx.await;
                };
                if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
                    tracing::error!("server stopped: {e}");
                }
            });
        })?;
    Ok(ServerHandle {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
