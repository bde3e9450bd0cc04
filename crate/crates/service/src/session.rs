//! Conversation state machines, independent of HTTP.
//!
//! Prediction: ChooseHorizon → AskPredictor(0..K) → ShowPrediction → Survey → Done.
//! Training: AwaitUpload → ReviewDataset → ConfigureGrid → Running → ShowResults → Done.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use medagent_core::dataset::Dataset;
use medagent_core::grid::GridSpec;
use medagent_core::vault::{ModelArtifact, ModelRegistry};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

/// Rows echoed back for review after an upload.
pub const PREVIEW_ROWS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flow {
    Prediction,
    Training,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlowState {
    ChooseHorizon,
    AskPredictor(usize),
    ShowPrediction,
    Survey,
    AwaitUpload,
    ReviewDataset,
    ConfigureGrid,
    Running,
    ShowResults,
    Done,
}

impl FlowState {
    pub fn name(&self) -> &'static str {
        match self {
            FlowState::ChooseHorizon => "ChooseHorizon",
            FlowState::AskPredictor(_) => "AskPredictor",
            FlowState::ShowPrediction => "ShowPrediction",
            FlowState::Survey => "Survey",
            FlowState::AwaitUpload => "AwaitUpload",
            FlowState::ReviewDataset => "ReviewDataset",
            FlowState::ConfigureGrid => "ConfigureGrid",
            FlowState::Running => "Running",
            FlowState::ShowResults => "ShowResults",
            FlowState::Done => "Done",
        }
    }
}

impl std::fmt::Display for FlowState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FlowState::AskPredictor(i) => write!(f, "AskPredictor({i})"),
            other => f.write_str(other.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SessionError {
    #[error("cannot {action} in state {state}")]
    WrongState { state: FlowState, action: &'static str },
    #[error("{value:?} is not an allowed value of {predictor} (allowed: {})", allowed.join(", "))]
    InvalidValue {
        predictor: String,
        value: String,
        allowed: Vec<String>,
    },
    #[error("rating {0} is outside 1..=5")]
    RatingOutOfRange(i64),
    #[error("model cannot score these answers: {0}")]
    Prediction(String),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::WrongState { .. } => "WrongState",
            SessionError::InvalidValue { .. } => "InvalidValue",
            SessionError::RatingOutOfRange(_) => "RatingOutOfRange",
            SessionError::Prediction(_) => "PredictionFailed",
        }
    }
}

/// Values the prompts need from outside the session.
#[derive(Debug, Clone)]
pub struct PromptContext {
    pub horizons: Vec<u32>,
    pub upload_limit: usize,
    pub grid_cap: usize,
}

pub fn unix_time() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub flow: Flow,
    pub created_at: u64,
    pub last_active: Instant,
    state: FlowState,
    horizon: Option<u32>,
    model: Option<Arc<ModelArtifact>>,
    answers: BTreeMap<String, String>,
    probability: Option<f64>,
    dataset: Option<Arc<Dataset>>,
    summary: Option<Value>,
    grid: Option<GridSpec>,
    job_id: Option<String>,
    outcome: Option<Value>,
}

impl Session {
    pub fn new(id: String, flow: Flow) -> Self {
        Self {
            id,
            flow,
            created_at: unix_time(),
            last_active: Instant::now(),
            state: match flow {
                Flow::Prediction => FlowState::ChooseHorizon,
                Flow::Training => FlowState::AwaitUpload,
            },
            horizon: None,
            model: None,
            answers: BTreeMap::new(),
            probability: None,
            dataset: None,
            summary: None,
            grid: None,
            job_id: None,
            outcome: None,
        }
    }

    pub fn state(&self) -> FlowState {
        self.state
    }

    pub fn horizon(&self) -> Option<u32> {
        self.horizon
    }

    pub fn answers(&self) -> &BTreeMap<String, String> {
        &self.answers
    }

    pub fn probability(&self) -> Option<f64> {
        self.probability
    }

    pub fn model(&self) -> Option<&Arc<ModelArtifact>> {
        self.model.as_ref()
    }

    pub fn dataset(&self) -> Option<&Arc<Dataset>> {
        self.dataset.as_ref()
    }

    pub fn grid(&self) -> Option<&GridSpec> {
        self.grid.as_ref()
    }

    pub fn job_id(&self) -> Option<&str> {
        self.job_id.as_deref()
    }

    pub fn expect(&self, state: FlowState, action: &'static str) -> Result<(), SessionError> {
        if self.state == state {
            Ok(())
        } else {
            Err(self.wrong(action))
        }
    }

    fn wrong(&self, action: &'static str) -> SessionError {
        SessionError::WrongState {
            state: self.state,
            action,
        }
    }

    /// Answer the current question. An invalid value leaves the state as is.
    pub fn answer(&mut self, value: &str, registry: &ModelRegistry) -> Result<(), SessionError> {
        match self.state {
            FlowState::ChooseHorizon => {
                let horizons = registry.horizons();
                let model = value
                    .trim()
                    .parse::<u32>()
                    .ok()
                    .filter(|h| horizons.contains(h))
                    .and_then(|h| registry.lookup(h).ok());
                let Some(model) = model else {
                    return Err(SessionError::InvalidValue {
                        predictor: "horizon".into(),
                        value: value.into(),
                        allowed: horizons.iter().map(u32::to_string).collect(),
                    });
                };
                self.horizon = model.horizon;
                self.model = Some(model);
                self.answers.clear();
                self.advance_from(0)
            }
            FlowState::AskPredictor(i) => {
                let model = self.model.clone().expect("model chosen before predictors");
                let predictor = &model.catalog.predictors[i];
                if !predictor.values.iter().any(|v| v == value) {
                    return Err(SessionError::InvalidValue {
                        predictor: predictor.name.clone(),
                        value: value.into(),
                        allowed: predictor.values.clone(),
                    });
                }
                self.answers.insert(predictor.name.clone(), value.to_string());
                self.advance_from(i + 1)
            }
            _ => Err(self.wrong("answer")),
        }
    }

    fn advance_from(&mut self, next: usize) -> Result<(), SessionError> {
        let model = self.model.clone().expect("model chosen");
        if next < model.catalog.predictors.len() {
            self.state = FlowState::AskPredictor(next);
            return Ok(());
        }
        let answers: HashMap<String, String> = self.answers.clone().into_iter().collect();
        let p = model
            .predict(&answers)
            .map_err(|e| SessionError::Prediction(e.to_string()))?;
        self.probability = Some(p);
        self.state = FlowState::ShowPrediction;
        Ok(())
    }

    pub fn accept_dataset(&mut self, d: Dataset) -> Result<(), SessionError> {
        self.expect(FlowState::AwaitUpload, "upload a dataset")?;
        self.summary = Some(summarize(&d));
        self.dataset = Some(Arc::new(d));
        self.state = FlowState::ReviewDataset;
        Ok(())
    }

    /// ReviewDataset → ConfigureGrid, or ShowPrediction → Survey.
    pub fn confirm(&mut self) -> Result<(), SessionError> {
        self.state = match self.state {
            FlowState::ReviewDataset => FlowState::ConfigureGrid,
            FlowState::ShowPrediction => FlowState::Survey,
            _ => return Err(self.wrong("confirm")),
        };
        Ok(())
    }

    pub fn start_job(&mut self, job_id: String, grid: GridSpec) -> Result<(), SessionError> {
        self.expect(FlowState::ConfigureGrid, "start training")?;
        self.job_id = Some(job_id);
        self.grid = Some(grid);
        self.state = FlowState::Running;
        Ok(())
    }

    /// Record a finished job: results lead to ShowResults, a failure ends
    /// the conversation.
    pub fn finish_job(&mut self, outcome: Result<Value, Value>) {
        if self.state != FlowState::Running {
            return;
        }
        self.state = if outcome.is_ok() {
            FlowState::ShowResults
        } else {
            FlowState::Done
        };
        self.outcome = Some(match outcome {
            Ok(v) | Err(v) => v,
        });
    }

    pub fn check_survey(&self, rating: i64) -> Result<(), SessionError> {
        if !matches!(self.state, FlowState::Survey | FlowState::ShowResults) {
            return Err(self.wrong("submit a survey"));
        }
        if !(1..=5).contains(&rating) {
            return Err(SessionError::RatingOutOfRange(rating));
        }
        Ok(())
    }

    pub fn complete_survey(&mut self) {
        self.state = FlowState::Done;
    }

    pub fn prompt(&self, ctx: &PromptContext) -> Value {
        match self.state {
            FlowState::ChooseHorizon => json!({
                "kind": "choices",
                "field": "horizon",
                "question": "Which prediction horizon (years) should be used?",
                "allowed": ctx.horizons.iter().map(u32::to_string).collect::<Vec<_>>(),
            }),
            FlowState::AskPredictor(i) => {
                let model = self.model.as_ref().expect("model chosen");
                let p = &model.catalog.predictors[i];
                json!({
                    "kind": "choices",
                    "field": p.name,
                    "question": p.question,
                    "allowed": p.values,
                    "index": i,
                    "total": model.catalog.predictors.len(),
                    "horizon": self.horizon,
                })
            }
            FlowState::ShowPrediction => self.prediction_payload(),
            FlowState::Survey => json!({
                "kind": "survey",
                "question": "How would you rate this experience?",
                "min": 1,
                "max": 5,
                "prediction": self.prediction_payload(),
            }),
            FlowState::AwaitUpload => json!({
                "kind": "upload",
                "limit_bytes": ctx.upload_limit,
                "message": "Upload a categorical CSV dataset with a binary label column.",
            }),
            FlowState::ReviewDataset => json!({
                "kind": "review",
                "summary": self.summary,
            }),
            FlowState::ConfigureGrid => json!({
                "kind": "grid",
                "defaults": GridSpec::defaults(),
                "cap": ctx.grid_cap,
            }),
            FlowState::Running => json!({
                "kind": "progress",
                "job_id": self.job_id,
            }),
            FlowState::ShowResults => json!({
                "kind": "results",
                "job_id": self.job_id,
                "result": self.outcome,
            }),
            FlowState::Done => json!({
                "kind": "done",
                "outcome": self.outcome,
            }),
        }
    }

    fn prediction_payload(&self) -> Value {
        let model = self.model.as_ref().expect("model chosen");
        let p = self.probability.expect("prediction computed");
        json!({
            "kind": "prediction",
            "horizon": self.horizon,
            "probability": p,
            "probability_text": format!("{p:.4}"),
            "answers": self.answers,
            "provenance": model.provenance,
        })
    }

    pub fn view(&self, ctx: &PromptContext) -> Value {
        json!({
            "session_id": self.id,
            "flow": self.flow,
            "state": self.state.name(),
            "prompt": self.prompt(ctx),
        })
    }
}

/// Row count, per-column categories, class balance and the first rows.
pub fn summarize(d: &Dataset) -> Value {
    let columns: Vec<Value> = d
        .columns
        .iter()
        .map(|c| {
            json!({
                "name": c.name,
                "role": c.role,
                "category_count": c.categories.len(),
                "categories": c.categories,
            })
        })
        .collect();
    let label = d.label_schema();
    let counts = d.class_counts();
    json!({
        "rows": d.n_rows(),
        "label": d.label_column,
        "feature_columns": d.feature_columns().count(),
        "columns": columns,
        "class_balance": [
            { "value": label.categories[0], "count": counts[0] },
            { "value": label.categories[1], "count": counts[1] },
        ],
        "header": d.columns.iter().map(|c| c.name.as_str()).collect::<Vec<_>>(),
        "preview": d.rows.iter().take(PREVIEW_ROWS).collect::<Vec<_>>(),
    })
}

/// In-memory sessions with idle expiry, each behind its own lock.
#[derive(Debug)]
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    idle: Duration,
}

impl SessionStore {
    pub fn new(idle: Duration) -> Self {
        Self {
            sessions: RwLock::new(HashMap::new()),
            idle,
        }
    }

    pub fn create(&self, flow: Flow) -> Arc<Mutex<Session>> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let s = Arc::new(Mutex::new(Session::new(id.clone(), flow)));
        self.sessions.write().insert(id, s.clone());
        s
    }

    /// The live session `id`, touched. Expired sessions are dropped.
    pub fn get(&self, id: &str) -> Option<Arc<Mutex<Session>>> {
        let s = self.sessions.read().get(id).cloned()?;
        let mut guard = s.lock();
        if guard.last_active.elapsed() > self.idle {
            drop(guard);
            self.sessions.write().remove(id);
            return None;
        }
        guard.last_active = Instant::now();
        drop(guard);
        Some(s)
    }

    pub fn sweep(&self) -> usize {
        let mut map = self.sessions.write();
        let before = map.len();
        map.retain(|_, s| s.try_lock().is_none_or(|g| g.last_active.elapsed() <= self.idle));
        before - map.len()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
