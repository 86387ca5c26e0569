//! Serves any [`LogProbProvider`] over the `/v1` logprob protocol.
//!
//! Requests are independent: the server keeps no state between them, and
//! each logprob computation runs on the blocking pool.

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tokio::sync::oneshot;

use longfilter::backend::wire::{ErrorResponse, LogProbRequest, LogProbResponse, INFO_PATH, LOGPROBS_PATH};
use longfilter::backend::{BackendError, LogProbProvider, ProviderInfo};

type SharedProvider = Arc<dyn LogProbProvider>;

pub fn router(provider: SharedProvider) -> Router {
    Router::new()
        .route(INFO_PATH, get(info))
        .route(LOGPROBS_PATH, post(logprobs))
        .with_state(provider)
}

async fn info(State(provider): State<SharedProvider>) -> Json<ProviderInfo> {
    Json(provider.info())
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(ErrorResponse { error: self.1 })).into_response()
    }
}

impl From<BackendError> for ApiError {
    fn from(e: BackendError) -> Self {
        let status = match e {
            BackendError::Argument(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

async fn logprobs(
    State(provider): State<SharedProvider>,
    body: Result<Json<LogProbRequest>, JsonRejection>,
) -> Result<Json<LogProbResponse>, ApiError> {
    let Json(req) = body.map_err(|e| ApiError(StatusCode::BAD_REQUEST, e.body_text()))?;
    let values = tokio::task::spawn_blocking(move || provider.logprobs(&req.tokens, req.eval_start, req.eval_end))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))??;
    Ok(Json(LogProbResponse { logprobs: values }))
}

/// Serves until `shutdown` resolves.
pub async fn serve<F>(listener: tokio::net::TcpListener, provider: SharedProvider, shutdown: F) -> io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, router(provider))
        .with_graceful_shutdown(shutdown)
        .await
}

/// A server running on its own thread and runtime. Dropping the handle
/// shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops accepting connections, drains in-flight requests and joins
    /// the server thread.
    pub fn shutdown(mut self) -> io::Result<()> {
        self.stop_and_join()
    }

    fn stop_and_join(&mut self) -> io::Result<()> {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| io::Error::other("server thread panicked"))?,
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

/// Binds `bind` (e.g. `127.0.0.1:0`) and serves `provider` in the
/// background. Bind errors are reported here, before the handle exists.
pub fn serve_mock(provider: SharedProvider, bind: &str) -> io::Result<ServerHandle> {
    let std_listener = std::net::TcpListener::bind(bind)?;
    std_listener.set_nonblocking(true)?;
    let addr = std_listener.local_addr()?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .thread_name("longfilter-server")
        .enable_all()
        .build()?;
    let (stop, stopped) = oneshot::channel::<()>();
    let thread = std::thread::Builder::new()
        .name("longfilter-server".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener)?;
                tracing::info!(%addr, "serving logprobs");
                serve(listener, provider, async {
                    let _ = stopped.await;
                })
                .await
            })
        })?;
    Ok(ServerHandle {
        addr,
        stop: Some(stop),
        thread: Some(thread),
    })
}
