// SPDX-License-Identifier: Apache-2.0

//! Review HTTP API.
//!
//! | method | path | body |
//! |---|---|---|
//! | GET | `/sessions/{id}/timeline` | |
//! | GET | `/sessions/{id}/next?reviewer=R` | |
//! | POST | `/sessions/{id}/actions` | `ReviewerAction` |
//! | POST | `/sessions/{id}/qa` | `{"op": "draw"}` or `{"op": "judge", ...}` |
//! | GET | `/sessions/{id}/audit` | |
//! | POST | `/sessions/{id}/finalize` | `{"questionnaire": ..., "reviewer_id": ...}` |
//! | GET | `/sessions/{id}/nudges` | |
//! | GET | `/sessions/{id}/media/...` | static session files |
//!
//! Every mutation rewrites `review/audit.jsonl` before responding.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gaze_core::clock::Clock;
use gaze_core::fusion::FusionPolicy;
use gaze_core::io::read_json;
use gaze_core::review::audit::to_jsonl;
use gaze_core::review::{QuestionnaireResponse, ReviewError, ReviewSession, ReviewerAction};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use crate::autoreview::{open_review, persist_audit, persist_finalize};
use crate::layout;

pub struct SessionEntry {
    pub dir: PathBuf,
    pub review: ReviewSession,
    pub qa_fraction: f64,
    pub qa_seed: u64,
}

#[derive(Default)]
pub struct AppState {
    sessions: Mutex<BTreeMap<String, SessionEntry>>,
}

impl AppState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads a processed session directory (timeline, skips and any existing
    /// audit log).
    pub async fn add_session(
        &self,
        session_id: &str,
        dir: PathBuf,
        clock: Arc<dyn Clock>,
        qa_fraction: f64,
        qa_seed: u64,
    ) -> anyhow::Result<()> {
        let review = open_review(&dir, session_id, clock)?;
        self.sessions.lock().await.insert(
            session_id.to_string(),
            SessionEntry {
                dir,
                review,
                qa_fraction,
                qa_seed,
            },
        );
        Ok(())
    }
}

#[derive(Debug)]
pub struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        let code = match &e {
            ReviewError::SessionUnknown(_) | ReviewError::UnknownItem(_) => StatusCode::NOT_FOUND,
            ReviewError::NotLocked(_)
            | ReviewError::InvalidTransition(_)
            | ReviewError::PendingItemsRemain(_)
            | ReviewError::AlreadyFinalized
            | ReviewError::NothingAccepted
            | ReviewError::NoPairs => StatusCode::CONFLICT,
            ReviewError::MissingRationale | ReviewError::QuestionnaireInvalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            ReviewError::Chain(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(code, e.to_string())
    }
}

fn io_error(e: impl std::fmt::Display) -> ApiError {
    ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
}

type Shared = Arc<AppState>;

macro_rules! entry {
    ($guard:ident, $id:expr) => {
        $guard
            .get_mut(&$id)
            .ok_or_else(|| ApiError::from(ReviewError::SessionUnknown($id.clone())))?
    };
}

async fn timeline(State(st): State<Shared>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let mut g = st.sessions.lock().await;
    let e = entry!(g, id);
    Ok(Json(json!({
        "session_id": id,
        "items": e.review.items(),
        "skips": e.review.skips(),
        "finalized": e.review.is_finalized(),
        "outstanding": e.review.outstanding(),
    })))
}

#[derive(Deserialize)]
struct NextQuery {
    reviewer: String,
}

async fn next(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<NextQuery>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let mut g = st.sessions.lock().await;
    let e = entry!(g, id);
    let before = e.review.chain().len();
    let n = e.review.next_item(&q.reviewer)?;
    if e.review.chain().len() != before {
        persist_audit(&e.dir, &e.review).map_err(io_error)?;
    }
    Ok(Json(serde_json::to_value(n).map_err(io_error)?))
}

async fn actions(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Json(action): Json<ReviewerAction>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let mut g = st.sessions.lock().await;
    let e = entry!(g, id);
    let rec = e.review.apply_action(&action);
    persist_audit(&e.dir, &e.review).map_err(io_error)?;
    Ok(Json(serde_json::to_value(rec?).map_err(io_error)?))
}

#[derive(Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
enum QaRequest {
    Draw {
        #[serde(default)]
        fraction: Option<f64>,
        #[serde(default)]
        seed: Option<u64>,
        reviewer_id: String,
    },
    Judge {
        timeline_id: String,
        reviewer_id: String,
        agree: bool,
        #[serde(default)]
        dwell_ms: u64,
    },
}

async fn qa(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<QaRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let mut g = st.sessions.lock().await;
    let e = entry!(g, id);
    let out = match req {
        QaRequest::Draw {
            fraction,
            seed,
            reviewer_id,
        } => {
            let r = e.review.draw_qa_sample(
                fraction.unwrap_or(e.qa_fraction),
                seed.unwrap_or(e.qa_seed),
                &reviewer_id,
            );
            persist_audit(&e.dir, &e.review).map_err(io_error)?;
            serde_json::to_value(r?)
        }
        QaRequest::Judge {
            timeline_id,
            reviewer_id,
            agree,
            dwell_ms,
        } => {
            if e.review.item(&timeline_id).is_none() {
                return Err(ReviewError::UnknownItem(timeline_id).into());
            }
            let r = e.review.judge_qa(&timeline_id, &reviewer_id, agree, dwell_ms);
            persist_audit(&e.dir, &e.review).map_err(io_error)?;
            serde_json::to_value(r?)
        }
    };
    Ok(Json(out.map_err(io_error)?))
}

async fn audit(State(st): State<Shared>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let mut g = st.sessions.lock().await;
    let e = entry!(g, id);
    let body = to_jsonl(e.review.chain());
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], body).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FinalizeRequest {
    questionnaire: QuestionnaireResponse,
    reviewer_id: String,
}

async fn finalize(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Json(req): Json<FinalizeRequest>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let mut g = st.sessions.lock().await;
    let e = entry!(g, id);
    let outcome = e.review.finalize(&req.questionnaire, &req.reviewer_id)?;
    persist_finalize(&e.dir, &e.review, &outcome, &req.questionnaire).map_err(io_error)?;
    Ok(Json(serde_json::to_value(&outcome).map_err(io_error)?))
}

async fn nudges(State(st): State<Shared>, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let mut g = st.sessions.lock().await;
    let e = entry!(g, id);
    let policy: FusionPolicy = read_json(&e.dir.join(layout::POLICY)).unwrap_or_default();
    Ok(Json(serde_json::to_value(e.review.threshold_nudges(&policy)).map_err(io_error)?))
}

/// Builds the router. Static media routes are mounted for every session
/// loaded into `state` at call time.
pub async fn router(state: Shared) -> Router {
    let mut app = Router::new()
        .route("/sessions/{id}/timeline", get(timeline))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/actions", post(actions))
        .route("/sessions/{id}/qa", post(qa))
        .route("/sessions/{id}/audit", get(audit))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/nudges", get(nudges));
    for (id, e) in state.sessions.lock().await.iter() {
        app = app.nest_service(&format!("/sessions/{id}/media"), ServeDir::new(&e.dir));
    }
    app.with_state(state)
}

pub async fn serve(addr: std::net::SocketAddr, state: Shared) -> anyhow::Result<()> {
    let app = router(state).await;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, app).await?;
    Ok(())
}
