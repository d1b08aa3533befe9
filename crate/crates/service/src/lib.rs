//! HTTP session service for human-in-the-loop clinical dialogues.
//!
//! A human plays the chief physician against the assistant model. Gold
//! diagnoses and codes never leave the server before a session is
//! discharged. Sessions persist as append-only event logs and are rebuilt
//! on startup.

pub mod error;
mod routes;
pub mod state;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::Router;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

pub use error::ServiceError;
pub use routes::{CreateSession, PostDischarge, PostMessage};
pub use state::{AppState, ServiceSettings, SessionStatus, SessionView};
pub use store::{IndexEntry, SessionEvent, SessionStore};

/// Builds the application router. `static_dir`, when set, serves the web
/// UI for any path the API does not claim.
pub fn router(state: Arc<AppState>, static_dir: Option<PathBuf>) -> Router {
    let app = routes::api(state);
    let app = match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    };
    app.layer(CorsLayer::permissive())
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let restored = state.restore().await.map_err(std::io::Error::other)?;
    tracing::info!(restored, "sessions restored");
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state, static_dir)).await
}
