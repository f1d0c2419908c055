use std::convert::Infallible;
use std::future::Future;
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use serde::Deserialize;
use serde_json::json;

use super::{Gateway, GatewayError};
use crate::plans::Action;
use crate::runner::{ClearanceId, Command};
use crate::units::Callsign;

impl IntoResponse for GatewayError {
    fn into_response(self) -> Response {
        let (status, kind) = match &self {
            GatewayError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            GatewayError::Range { .. } => (StatusCode::RANGE_NOT_SATISFIABLE, "range"),
            GatewayError::Rejected(_) => (StatusCode::CONFLICT, "rejected"),
            GatewayError::ReadOnly => (StatusCode::CONFLICT, "read_only"),
            GatewayError::Episode(_) => (StatusCode::INTERNAL_SERVER_ERROR, "episode"),
        };
        (status, Json(json!({ "error": kind, "message": self.to_string() }))).into_response()
    }
}

type Reply = Result<Json<serde_json::Value>, GatewayError>;

fn done(detail: String) -> Reply {
    Ok(Json(json!({ "ok": true, "detail": detail })))
}

#[derive(Deserialize)]
struct TimeQuery {
    t: f64,
}

async fn snapshot(State(g): State<Gateway>) -> Json<super::SnapshotView> {
    Json(g.snapshot())
}

async fn plan(State(g): State<Gateway>, Path(cs): Path<String>) -> Result<Json<super::PlanView>, GatewayError> {
    g.plan(&Callsign::new(cs)).map(Json)
}

async fn tsr(State(g): State<Gateway>) -> Json<crate::conflict::TechnicalSafetyRecord> {
    Json(g.tsr())
}

async fn traces(State(g): State<Gateway>) -> Json<Vec<super::TraceView>> {
    Json(g.traces())
}

async fn timeline(State(g): State<Gateway>, Query(q): Query<TimeQuery>) -> Result<Json<super::TimelineFrame>, GatewayError> {
    g.timeline(q.t).map(Json)
}

async fn clearances(State(g): State<Gateway>) -> Json<Vec<crate::runner::Clearance>> {
    Json(g.clearances())
}

async fn approve(State(g): State<Gateway>, Path(id): Path<u64>) -> Reply {
    done(g.approve(ClearanceId(id))?)
}

async fn reject(State(g): State<Gateway>, Path(id): Path<u64>) -> Reply {
    done(g.reject(ClearanceId(id))?)
}

async fn modify(State(g): State<Gateway>, Path(id): Path<u64>, Json(action): Json<Action>) -> Reply {
    done(g.modify(ClearanceId(id), action)?)
}

async fn control(State(g): State<Gateway>, Json(cmd): Json<Command>) -> Reply {
    done(g.command(cmd)?)
}

async fn stream(State(g): State<Gateway>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = g.subscribe();
    let s = futures::stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let event = Event::default().event("cycle").json_data(&ev).unwrap_or_default();
                    return Some((Ok(event), rx));
                }
                Err(tokio::sync::broadcast::error::RecvError::Lagged(_)) => continue,
                Err(tokio::sync::broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(s).keep_alive(KeepAlive::default())
}

async fn versioned(mut r: Response) -> Response {
    r.headers_mut().insert("x-skylane-schema", HeaderValue::from(super::GATEWAY_SCHEMA_VERSION));
    r
}

/// HTTP routes over a gateway.
pub fn router(g: Gateway) -> Router {
    Router::new()
        .route("/snapshot", get(snapshot))
        .route("/aircraft/{callsign}/plan", get(plan))
        .route("/tsr", get(tsr))
        .route("/traces", get(traces))
        .route("/timeline", get(timeline))
        .route("/clearances", get(clearances))
        .route("/clearances/{id}/approve", post(approve))
        .route("/clearances/{id}/reject", post(reject))
        .route("/clearances/{id}/modify", post(modify))
        .route("/control", post(control))
        .route("/stream", get(stream))
        .layer(axum::middleware::map_response(versioned))
        .with_state(g)
}

/// Drives the session at one cycle per `pace` until it finishes.
pub async fn drive(g: Gateway, pace: Duration) -> Result<(), GatewayError> {
    let mut every = tokio::time::interval(pace);
    while !g.is_finished() {
        every.tick().await;
        let gg = g.clone();
        tokio::task::spawn_blocking(move || gg.tick())
            .await
            .map_err(|e| GatewayError::Rejected(format!("driver task failed: {e}")))??;
    }
    Ok(())
}

/// Serves the gateway on `port` until `shutdown` resolves.
pub async fn serve(g: Gateway, port: u16, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    axum::serve(listener, router(g)).with_graceful_shutdown(shutdown).await
}
