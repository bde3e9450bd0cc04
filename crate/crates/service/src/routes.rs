use std::collections::HashMap;
use std::sync::Arc;

use axum::body::{Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use medagent_core::dataset::parse_csv;
use medagent_core::grid::GridSpec;
use medagent_core::vault::ModelRegistry;
use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower_http::services::ServeDir;

use crate::config::ServiceConfig;
use crate::error::ApiError;
use crate::jobs::JobManager;
use crate::session::{unix_time, Flow, FlowState, PromptContext, Session, SessionError, SessionStore};
use crate::survey::{SurveyLog, SurveyRecord};

#[derive(Clone)]
pub struct AppState {
    pub config: Arc<ServiceConfig>,
    pub registry: Arc<ModelRegistry>,
    pub sessions: Arc<SessionStore>,
    pub jobs: Arc<JobManager>,
    pub survey: Arc<SurveyLog>,
}

impl AppState {
    pub fn new(config: ServiceConfig, registry: ModelRegistry) -> Self {
        Self {
            registry: Arc::new(registry),
            sessions: Arc::new(SessionStore::new(std::time::Duration::from_secs(config.session_idle_secs))),
            jobs: Arc::new(JobManager::new(
                config.max_jobs,
                config.max_queued,
                config.workers,
                config.grid_cap,
            )),
            survey: Arc::new(SurveyLog::new(config.survey_log.clone())),
            config: Arc::new(config),
        }
    }

    fn prompt_context(&self) -> PromptContext {
        PromptContext {
            horizons: self.registry.horizons(),
            upload_limit: self.config.upload_limit,
            grid_cap: self.config.grid_cap,
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let s = self.sessions.get(id).ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "UnknownSession",
                format!("no live session {id:?}; it may have expired"),
            )
        })?;
        self.sync_job(&mut s.lock());
        Ok(s)
    }

    /// Move a Running session on once its job has finished.
    fn sync_job(&self, s: &mut Session) {
        if s.state() != FlowState::Running {
            return;
        }
        if let Some(outcome) = s.job_id().and_then(|id| self.jobs.get(id)).and_then(|j| j.session_outcome()) {
            s.finish_job(outcome);
        }
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::WrongState { .. } => StatusCode::CONFLICT,
            SessionError::InvalidValue { .. } | SessionError::RatingOutOfRange(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Prediction(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let details = match &e {
            SessionError::WrongState { state, action } => json!({ "state": state.name(), "action": action }),
            SessionError::InvalidValue {
                predictor,
                value,
                allowed,
            } => json!({ "predictor": predictor, "value": value, "allowed": allowed }),
            SessionError::RatingOutOfRange(r) => json!({ "rating": r, "min": 1, "max": 5 }),
            SessionError::Prediction(_) => Value::Null,
        };
        ApiError::new(status, e.code(), e.to_string()).with_details(details)
    }
}

fn json_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("InvalidJson", format!("malformed request body: {e}")))
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/api/health", get(health))
        .route("/api/models", get(list_models))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/answer", post(answer))
        .route(
            "/api/sessions/{id}/dataset",
            post(upload_dataset).layer(DefaultBodyLimit::disable()),
        )
        .route("/api/sessions/{id}/confirm", post(confirm))
        .route("/api/sessions/{id}/train", post(start_training))
        .route("/api/sessions/{id}/survey", post(submit_survey))
        .route("/api/jobs/{job_id}", get(job_status))
        .route("/api/jobs/{job_id}/model", get(job_model))
        .route("/api/jobs/{job_id}/roc.svg", get(job_roc))
        .route("/api/{*rest}", axum::routing::any(api_not_found))
        .method_not_allowed_fallback(method_not_allowed);

    let router = match state.config.static_dir.as_ref().filter(|d| d.is_dir()) {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.route("/", get(placeholder_index)),
    };
    router.with_state(state)
}

async fn placeholder_index() -> Html<&'static str> {
    Html(
        "<!doctype html><html><head><meta charset=\"utf-8\"><title>medagent</title></head>\
         <body><p>The chat interface is not installed. The JSON API is served under <code>/api</code>.</p></body></html>",
    )
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "MethodNotAllowed", "method not allowed for this endpoint")
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn list_models(State(app): State<AppState>) -> Json<Value> {
    let models: Vec<Value> = app
        .registry
        .list()
        .into_iter()
        .map(|e| {
            json!({
                "horizon": e.horizon,
                "provenance": e.provenance,
                "predictors": e.predictors,
                "file": e.path.file_name().map(|f| f.to_string_lossy().into_owned()),
            })
        })
        .collect();
    Json(json!({ "horizons": app.registry.horizons(), "models": models }))
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    flow: Flow,
}

async fn create_session(State(app): State<AppState>, body: Bytes) -> Result<(StatusCode, Json<Value>), ApiError> {
    let req: CreateSession = json_body(&body)?;
    app.sessions.sweep();
    let s = app.sessions.create(req.flow);
    let view = s.lock().view(&app.prompt_context());
    Ok((StatusCode::CREATED, Json(view)))
}

async fn get_session(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let s = app.session(&id)?;
    let view = s.lock().view(&app.prompt_context());
    Ok(Json(view))
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct Answer {
    value: String,
}

async fn answer(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: Answer = json_body(&body)?;
    let s = app.session(&id)?;
    let mut s = s.lock();
    let ctx = app.prompt_context();
    match s.answer(&req.value, &app.registry) {
        Ok(()) => Ok(Json(s.view(&ctx))),
        Err(e @ SessionError::InvalidValue { .. }) => {
            let mut err = ApiError::from(e);
            err.details["prompt"] = s.prompt(&ctx);
            Err(err)
        }
        Err(e) => Err(e.into()),
    }
}

fn too_large(size: Option<usize>, limit: usize) -> ApiError {
    let message = match size {
        Some(n) => format!("upload of {n} bytes exceeds the {limit}-byte limit"),
        None => format!("upload exceeds the {limit}-byte limit"),
    };
    ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "PayloadTooLarge", message).with_details(json!({ "size": size, "limit": limit }))
}

fn is_length_limit(e: &(dyn std::error::Error + 'static)) -> bool {
    let mut cur = Some(e);
    while let Some(err) = cur {
        if err.is::<http_body_util::LengthLimitError>() {
            return true;
        }
        cur = err.source();
    }
    false
}

async fn upload_dataset(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<HashMap<String, String>>,
    headers: HeaderMap,
    body: Body,
) -> Result<Json<Value>, ApiError> {
    let limit = app.config.upload_limit;
    let session = app.session(&id)?;
    session.lock().expect(FlowState::AwaitUpload, "upload a dataset")?;

    let declared = headers
        .get(header::CONTENT_LENGTH)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(n) = declared.filter(|&n| n > limit) {
        return Err(too_large(Some(n), limit));
    }
    let label = query
        .get("label")
        .filter(|l| !l.is_empty())
        .ok_or_else(|| ApiError::bad_request("MissingLabel", "the `label` query parameter names the label column"))?;
    let bytes = axum::body::to_bytes(body, limit).await.map_err(|e| {
        let inner = e.into_inner();
        if is_length_limit(inner.as_ref()) {
            too_large(None, limit)
        } else {
            ApiError::bad_request("BodyReadFailed", format!("could not read the upload: {inner}"))
        }
    })?;

    let dataset = parse_csv(&bytes, label).map_err(|e| {
        ApiError::unprocessable(e.code(), e.to_string()).with_details(serde_json::to_value(&e).unwrap_or(Value::Null))
    })?;
    let mut s = session.lock();
    s.accept_dataset(dataset)?;
    Ok(Json(s.view(&app.prompt_context())))
}

async fn confirm(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let s = app.session(&id)?;
    let mut s = s.lock();
    s.confirm()?;
    Ok(Json(s.view(&app.prompt_context())))
}

/// `{"grid": "defaults"}`, `{"grid": {...}}` or a bare GridSpec object;
/// the first two forms may carry a `seed`.
fn parse_train_request(body: &Bytes, default_seed: u64) -> Result<(GridSpec, u64), ApiError> {
    let invalid = |m: String| ApiError::unprocessable("InvalidGrid", m);
    let v: Value = if body.iter().all(u8::is_ascii_whitespace) {
        json!({ "grid": "defaults" })
    } else {
        json_body(body)?
    };
    let Value::Object(mut obj) = v else {
        return Err(invalid("expected a JSON object".into()));
    };
    let Some(grid) = obj.remove("grid") else {
        let spec = serde_json::from_value(Value::Object(obj)).map_err(|e| invalid(e.to_string()))?;
        return Ok((spec, default_seed));
    };
    let seed = match obj.remove("seed") {
        None => default_seed,
        Some(s) => s.as_u64().ok_or_else(|| invalid("seed must be a non-negative integer".into()))?,
    };
    if let Some(extra) = obj.keys().next() {
        return Err(invalid(format!("unknown field {extra:?}")));
    }
    let spec = match grid {
        Value::String(s) if s == "defaults" => GridSpec::defaults(),
        Value::Object(_) => serde_json::from_value(grid).map_err(|e| invalid(e.to_string()))?,
        other => return Err(invalid(format!("grid must be \"defaults\" or an object, got {other}"))),
    };
    Ok((spec, seed))
}

async fn start_training(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let s = app.session(&id)?;
    let mut s = s.lock();
    s.expect(FlowState::ConfigureGrid, "start training")?;
    let (grid, seed) = parse_train_request(&body, app.config.train_seed)?;
    let dataset = s.dataset().cloned().expect("dataset present once configured");
    let job = app.jobs.submit(dataset, grid.clone(), seed)?;
    s.start_job(job.id.clone(), grid)?;
    let mut view = s.view(&app.prompt_context());
    view["job_id"] = json!(job.id);
    view["settings"] = json!(job.settings);
    view["seed"] = json!(seed);
    Ok(Json(view))
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct Survey {
    rating: i64,
    #[serde(default)]
    comment: Option<String>,
}

async fn submit_survey(State(app): State<AppState>, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: Survey = json_body(&body)?;
    let s = app.session(&id)?;
    let mut s = s.lock();
    s.check_survey(req.rating)?;
    let record = SurveyRecord {
        timestamp: unix_time(),
        session_id: s.id.clone(),
        flow: s.flow,
        rating: req.rating as u8,
        comment: req.comment.filter(|c| !c.trim().is_empty()),
        horizon: s.horizon(),
        job_id: s.job_id().map(str::to_string),
    };
    app.survey.append(&record).map_err(|e| {
        tracing::error!("survey log {}: {e}", app.survey.path().display());
        ApiError::internal("could not record the survey")
    })?;
    s.complete_survey();
    let mut view = s.view(&app.prompt_context());
    view["acknowledged"] = json!(true);
    Ok(Json(view))
}

fn job(app: &AppState, id: &str) -> Result<Arc<crate::jobs::Job>, ApiError> {
    app.jobs
        .get(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "UnknownJob", format!("no training job {id:?}")))
}

fn not_finished(id: &str) -> ApiError {
    ApiError::new(
        StatusCode::CONFLICT,
        "JobNotSucceeded",
        format!("training job {id:?} has not produced a model"),
    )
}

async fn job_status(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    Ok(Json(job(&app, &id)?.snapshot()))
}

async fn job_model(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let j = job(&app, &id)?;
    let r = j.result().ok_or_else(|| not_finished(&id))?;
    Ok((
        [
            (header::CONTENT_TYPE, "application/octet-stream".to_string()),
            (header::CONTENT_DISPOSITION, format!("attachment; filename=\"model-{id}.imbm\"")),
        ],
        r.model_bytes.clone(),
    )
        .into_response())
}

async fn job_roc(State(app): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let j = job(&app, &id)?;
    let r = j.result().ok_or_else(|| not_finished(&id))?;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], r.roc_svg.clone()).into_response())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_request_forms() {
        let (g, seed) = parse_train_request(&Bytes::from_static(br#"{"grid":"defaults"}"#), 9).unwrap();
        assert_eq!((g, seed), (GridSpec::defaults(), 9));
        let (g, seed) = parse_train_request(&Bytes::from_static(br#"{"grid":{"epochs":[5]},"seed":3}"#), 9).unwrap();
        assert_eq!(g.epochs, vec![5]);
        assert_eq!(seed, 3);
        let (g, _) = parse_train_request(&Bytes::from_static(br#"{"learning_rate":[0.1,0.2]}"#), 9).unwrap();
        assert_eq!(g.learning_rate, vec![0.1, 0.2]);
        let (g, _) = parse_train_request(&Bytes::new(), 9).unwrap();
        assert_eq!(g, GridSpec::defaults());
        for bad in [&br#"{"grid":"best"}"#[..], br#"{"grid":"defaults","x":1}"#, br#"{"colour":[1]}"#, b"[1]"] {
            let e = parse_train_request(&Bytes::copy_from_slice(bad), 9).unwrap_err();
            assert_eq!(e.code, "InvalidGrid", "{}", String::from_utf8_lossy(bad));
        }
    }
}
