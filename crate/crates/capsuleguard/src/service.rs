//! HTTP/JSON surface over the capsule store.
//!
//! Every route is a thin adapter onto [`crate::manager::Manager`]; no
//! policy or analysis logic lives here. Responses use canonical JSON, and
//! every error body has the shape `{code, message, detail}` with a stable
//! machine-readable code.
//!
//! | Route | Meaning |
//! |---|---|
//! | `POST /capsules` | multipart upload: `csv`, `policy`, and the owner token (`owner` + `key`, or `token` = `owner:keyhex`) → `{id}` |
//! | `GET /capsules/{id}` | capsule metadata; never the payload |
//! | `GET /capsules/{id}/open?analyst=a` | payload when policy permits, else 403 with the residual |
//! | `POST /grants` | `{owner, analyst, roles[], purposes[], scope}` → `{id}` |
//! | `DELETE /grants/{id}?owner=o` | revoke |
//! | `POST /jobs` | `{analyst, program, purpose, inputs[], seed?, notes?}` → `{job_id}`; processing is asynchronous |
//! | `GET /jobs/{id}` | `{status, result, diagnostics, …}`; never the program source |

use axum::body::Body;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as JsonValue};
use std::collections::BTreeSet;
use std::sync::Arc;

use crate::manager::{
    crypto, ErrorCode, GrantScope, Job, JobResult, JobStatus, Manager, ManagerError,
};

/// The banner a server must show: this build *simulates* a trusted
/// execution environment with an ordinary process boundary.
pub const TEE_BANNER: &str = "\
==============================================================================
 SIMULATED TRUSTED EXECUTION ENVIRONMENT
 The manager runs as an ordinary process. Confidentiality against the host
 machine is NOT provided: anyone who can read the store directory (notably
 manager.key and keys.jsonl) can read every payload. See docs/threat-model.md.
==============================================================================";

/// Builds the service router over a shared manager.
pub fn router(manager: Arc<Manager>) -> Router {
    Router::new()
        .route("/capsules", post(create_capsule))
        .route("/capsules/:id", get(capsule_meta))
        .route("/capsules/:id/open", get(open_capsule))
        .route("/grants", post(add_grant))
        .route("/grants/:id", delete(revoke_grant))
        .route("/jobs", post(submit_job))
        .route("/jobs/:id", get(job_status))
        .with_state(manager)
}

// ----------------------------------------------------------------------
// Error mapping

/// A manager error rendered as `{code, message, detail}` with a fitting
/// HTTP status. `detail` carries structured extras (the printed residual,
/// for instance) and is `null` otherwise.
struct ApiError(ManagerError);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let code = self.0.code();
        let status = match code {
            ErrorCode::PolicySyntax
            | ErrorCode::CsvMalformed
            | ErrorCode::ParseFailed => StatusCode::BAD_REQUEST,
            ErrorCode::DuplicateCapsule => StatusCode::CONFLICT,
            ErrorCode::NotOwner
            | ErrorCode::UnknownPrincipal
            | ErrorCode::NotAuthorized
            | ErrorCode::PolicyPending
            | ErrorCode::DecryptFailed => StatusCode::FORBIDDEN,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::AnalysisFailed | ErrorCode::ExecFailed => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            ErrorCode::StoreCorrupt | ErrorCode::Io => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let detail = match &self.0 {
            ManagerError::PolicyPending { residual } => json!({ "residual": residual }),
            _ => JsonValue::Null,
        };
        let body = json!({
            "code": code.to_string(),
            "message": self.0.to_string(),
            "detail": detail,
        });
        (status, Json(body)).into_response()
    }
}

impl From<ManagerError> for ApiError {
    fn from(e: ManagerError) -> ApiError {
        ApiError(e)
    }
}

/// A request that never reached the manager (missing field, bad hex, …).
fn bad_request(message: impl Into<String>) -> Response {
    let body = json!({
        "code": "BadRequest",
        "message": message.into(),
        "detail": JsonValue::Null,
    });
    (StatusCode::BAD_REQUEST, Json(body)).into_response()
}

// ----------------------------------------------------------------------
// Capsules

async fn create_capsule(
    State(manager): State<Arc<Manager>>,
    mut multipart: Multipart,
) -> Response {
    let mut csv: Option<Vec<u8>> = None;
    let mut policy: Option<String> = None;
    let mut owner: Option<String> = None;
    let mut key_hex: Option<String> = None;
    loop {
        let field = match multipart.next_field().await {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e) => return bad_request(format!("malformed multipart body: {e}")),
        };
        let name = field.name().unwrap_or_default().to_string();
        let data = match field.bytes().await {
            Ok(d) => d,
            Err(e) => return bad_request(format!("reading field {name:?}: {e}")),
        };
        match name.as_str() {
            "csv" => csv = Some(data.to_vec()),
            "policy" => policy = Some(String::from_utf8_lossy(&data).into_owned()),
            "owner" => owner = Some(String::from_utf8_lossy(&data).trim().to_string()),
            "key" => key_hex = Some(String::from_utf8_lossy(&data).trim().to_string()),
            // The combined form: `token` is `<owner>:<keyhex>`.
            "token" => {
                let text = String::from_utf8_lossy(&data).trim().to_string();
                match text.split_once(':') {
                    Some((o, k)) => {
                        owner = Some(o.to_string());
                        key_hex = Some(k.to_string());
                    }
                    None => return bad_request("token must be <owner>:<keyhex>"),
                }
            }
            _ => return bad_request(format!("unknown multipart field {name:?}")),
        }
    }
    let (Some(csv), Some(policy), Some(owner), Some(key_hex)) = (csv, policy, owner, key_hex)
    else {
        return bad_request("fields csv, policy, and the owner token (owner + key) are required");
    };
    let Some(key) = crypto::key_from_hex(&key_hex) else {
        return bad_request("key must be 64 hex digits");
    };
    match manager.create_capsule(&owner, &csv, &policy, &key) {
        Ok(id) => (StatusCode::CREATED, Json(json!({ "id": id }))).into_response(),
        Err(e) => ApiError(e).into_response(),
    }
}

async fn capsule_meta(
    State(manager): State<Arc<Manager>>,
    Path(id): Path<String>,
) -> Response {
    let Some(c) = manager.capsule(&id) else {
        return ApiError(ManagerError::NotFound { kind: "capsule", id }).into_response();
    };
    let schema: Vec<JsonValue> = c
        .schema
        .iter()
        .map(|(name, ty)| json!({ "name": name, "type": ty.to_string() }))
        .collect();
    let lineage: Vec<JsonValue> = c
        .lineage
        .iter()
        .map(|l| json!({ "parent": l.parent, "program_hash": l.program_hash }))
        .collect();
    Json(json!({
        "id": c.id,
        "owner": c.owner,
        "policy": c.policy.to_string(),
        "schema": schema,
        "row_count": c.row_count,
        "lineage": lineage,
        "derived": c.is_derived(),
    }))
    .into_response()
}

#[derive(Deserialize)]
struct OpenQuery {
    analyst: Option<String>,
}

async fn open_capsule(
    State(manager): State<Arc<Manager>>,
    Path(id): Path<String>,
    Query(q): Query<OpenQuery>,
) -> Response {
    let Some(analyst) = q.analyst else {
        return bad_request("query parameter `analyst` is required");
    };
    let manager = manager.clone();
    let result =
        tokio::task::spawn_blocking(move || manager.open_capsule(&analyst, &id)).await;
    match result {
        Ok(Ok(payload)) => (
            StatusCode::OK,
            [(header::CONTENT_TYPE, "text/csv; charset=utf-8")],
            Body::from(payload),
        )
            .into_response(),
        Ok(Err(e)) => ApiError(e).into_response(),
        Err(e) => bad_request(format!("open task failed: {e}")),
    }
}

// ----------------------------------------------------------------------
// Grants

#[derive(Deserialize)]
struct GrantBody {
    owner: String,
    analyst: String,
    #[serde(default)]
    roles: BTreeSet<String>,
    #[serde(default)]
    purposes: BTreeSet<String>,
    scope: ScopeBody,
}

/// Scope in request bodies: the string `"all"` or `{"capsules": [ids]}`.
#[derive(Deserialize)]
#[serde(untagged)]
enum ScopeBody {
    Word(String),
    Capsules { capsules: BTreeSet<String> },
}

async fn add_grant(
    State(manager): State<Arc<Manager>>,
    Json(body): Json<GrantBody>,
) -> Response {
    let scope = match body.scope {
        ScopeBody::Word(w) if w.eq_ignore_ascii_case("all") => GrantScope::All,
        ScopeBody::Word(w) => {
            return bad_request(format!("scope must be \"all\" or {{\"capsules\": […]}}, got {w:?}"))
        }
        ScopeBody::Capsules { capsules } => GrantScope::Capsules(capsules),
    };
    match manager.grant(&body.owner, &body.analyst, body.roles, body.purposes, scope) {
        Ok(id) => (StatusCode::CREATED, Json(json!({ "id": id }))).into_response(),
        Err(e) => ApiError(e).into_response(),
    }
}

#[derive(Deserialize)]
struct RevokeQuery {
    owner: Option<String>,
}

async fn revoke_grant(
    State(manager): State<Arc<Manager>>,
    Path(id): Path<String>,
    Query(q): Query<RevokeQuery>,
) -> Response {
    let Some(owner) = q.owner else {
        return bad_request("query parameter `owner` is required");
    };
    match manager.revoke(&owner, &id) {
        Ok(()) => Json(json!({ "id": id, "revoked": true })).into_response(),
        Err(e) => ApiError(e).into_response(),
    }
}

// ----------------------------------------------------------------------
// Jobs

#[derive(Deserialize)]
struct JobBody {
    analyst: String,
    program: String,
    purpose: String,
    #[serde(default)]
    inputs: Vec<String>,
    seed: Option<u64>,
    notes: Option<String>,
}

async fn submit_job(
    State(manager): State<Arc<Manager>>,
    Json(body): Json<JobBody>,
) -> Response {
    let submitted = manager.submit_job(
        &body.analyst,
        &body.program,
        &body.purpose,
        &body.inputs,
        body.seed,
        body.notes,
    );
    let id = match submitted {
        Ok(id) => id,
        Err(e) => return ApiError(e).into_response(),
    };
    // The pipeline runs in the background; callers poll GET /jobs/{id}.
    let background = manager.clone();
    let job_id = id.clone();
    tokio::task::spawn_blocking(move || {
        let _ = background.process_job(&job_id);
    });
    (StatusCode::ACCEPTED, Json(json!({ "job_id": id }))).into_response()
}

/// The externally visible form of a job. The program source is omitted by
/// construction: data owners following a job must never see it.
#[derive(Serialize)]
struct JobView {
    id: String,
    analyst: String,
    purpose: String,
    program_hash: String,
    status: String,
    seed: u64,
    notes: Option<String>,
    result: JsonValue,
    diagnostics: Option<String>,
}

impl JobView {
    fn from_job(job: Job) -> JobView {
        let diagnostics = match &job.result {
            JobResult::Error { message, .. } => Some(message.clone()),
            _ => None,
        };
        let result = match &job.result {
            JobResult::Pending => json!({ "kind": "pending" }),
            other => serde_json::to_value(other).expect("job results serialize"),
        };
        JobView {
            id: job.id,
            analyst: job.analyst,
            purpose: job.purpose,
            program_hash: job.program_hash,
            status: job.status.to_string(),
            seed: job.seed,
            notes: job.notes,
            result,
            diagnostics,
        }
    }
}

async fn job_status(State(manager): State<Arc<Manager>>, Path(id): Path<String>) -> Response {
    let Some(job) = manager.job(&id) else {
        return ApiError(ManagerError::NotFound { kind: "job", id }).into_response();
    };
    // A queued job may still be in flight; reflect the stored state as-is.
    let _known_states = [JobStatus::Queued, JobStatus::Analyzed, JobStatus::Executed, JobStatus::Rejected];
    Json(serde_json::to_value(JobView::from_job(job)).expect("job views serialize")).into_response()
}
