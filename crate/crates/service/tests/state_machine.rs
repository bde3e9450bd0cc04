//! Exhaustive enumeration of short action traces against the session
//! machines.

use std::collections::HashSet;

use medagent_core::catalog::PredictorCatalog;
use medagent_core::dataset::{encode, parse_csv, Dataset};
use medagent_core::hyper::HyperparameterSetting;
use medagent_core::network::init_weights;
use medagent_core::vault::{ModelArtifact, ModelRegistry};
use medagent_service::session::{Flow, FlowState, Session, SessionError};
use serde_json::json;

const TINY: &str = "size,colour,y\nsmall,red,no\nlarge,blue,yes\nsmall,blue,no\nlarge,red,yes\nsmall,red,yes\nlarge,blue,no\n";

fn tiny_registry(dir: &std::path::Path) -> ModelRegistry {
    let d = parse_csv(TINY.as_bytes(), "y").unwrap();
    let (m, enc) = encode(&d);
    let setting = HyperparameterSetting {
        hidden_layer_count: 1,
        hidden_units: 3,
        ..Default::default()
    };
    let weights = init_weights(&setting, m.width, 1);
    let a = ModelArtifact::new(Some(5), setting, enc.clone(), PredictorCatalog::from_encoder(&enc), weights, "test model");
    let reg = ModelRegistry::open(dir).unwrap();
    reg.register(a).unwrap();
    reg
}

#[derive(Debug, Clone, Copy)]
enum Act {
    Answer(&'static str),
    Confirm,
    Survey(i64),
}

const PREDICTION_ACTS: [Act; 10] = [
    Act::Answer("5"),
    Act::Answer("10"),
    Act::Answer("large"),
    Act::Answer("small"),
    Act::Answer("red"),
    Act::Answer("blue"),
    Act::Answer("green"),
    Act::Confirm,
    Act::Survey(4),
    Act::Survey(0),
];

fn apply(s: &mut Session, act: Act, reg: &ModelRegistry) -> Result<(), SessionError> {
    match act {
        Act::Answer(v) => s.answer(v, reg),
        Act::Confirm => s.confirm(),
        Act::Survey(r) => s.check_survey(r).map(|()| s.complete_survey()),
    }
}

fn prediction_edge_allowed(from: FlowState, to: FlowState, k: usize) -> bool {
    use FlowState::*;
    match (from, to) {
        (ChooseHorizon, AskPredictor(0)) => true,
        (AskPredictor(i), AskPredictor(j)) => j == i + 1 && j < k,
        (AskPredictor(i), ShowPrediction) => i + 1 == k,
        (ShowPrediction, Survey) | (Survey, Done) => true,
        _ => false,
    }
}

struct Walk<'a> {
    reg: &'a ModelRegistry,
    k: usize,
    visited: usize,
    reached_prediction: usize,
    seen_states: HashSet<FlowState>,
}

impl Walk<'_> {
    /// `valid_answers` counts successful answers to predictor questions on
    /// this trace.
    fn dfs(&mut self, s: &Session, valid_answers: usize, depth: usize) {
        self.visited += 1;
        self.seen_states.insert(s.state());
        if matches!(s.state(), FlowState::ShowPrediction | FlowState::Survey | FlowState::Done) {
            if s.state() == FlowState::ShowPrediction {
                self.reached_prediction += 1;
            }
            assert_eq!(valid_answers, self.k, "prediction reached with {valid_answers} answers");
            let model = s.model().unwrap();
            assert_eq!(s.answers().len(), self.k);
            for p in &model.catalog.predictors {
                assert!(p.values.contains(&s.answers()[&p.name]));
            }
            assert!(s.probability().is_some());
        }
        if depth == 0 {
            return;
        }
        for act in PREDICTION_ACTS {
            let mut next = s.clone();
            let before = next.state();
            match apply(&mut next, act, self.reg) {
                Ok(()) => {
                    assert!(
                        prediction_edge_allowed(before, next.state(), self.k),
                        "{before} -> {} via {act:?}",
                        next.state()
                    );
                    let counted = matches!((before, act), (FlowState::AskPredictor(_), Act::Answer(_)));
                    self.dfs(&next, valid_answers + counted as usize, depth - 1);
                }
                Err(_) => {
                    assert_eq!(next.state(), before, "{act:?} failed but changed state");
                    assert_eq!(next.answers(), s.answers());
                    self.dfs(&next, valid_answers, depth - 1);
                }
            }
        }
    }
}

#[test]
fn prediction_traces_need_one_valid_answer_per_predictor() {
    let dir = tempfile::tempdir().unwrap();
    let reg = tiny_registry(dir.path());
    let k = reg.lookup(5).unwrap().catalog.len();
    assert_eq!(k, 2);
    let mut walk = Walk {
        reg: &reg,
        k,
        visited: 0,
        reached_prediction: 0,
        seen_states: HashSet::new(),
    };
    walk.dfs(&Session::new("s".into(), Flow::Prediction), 0, 6);
    assert_eq!(walk.visited, (0..=6).map(|d| 10usize.pow(d)).sum::<usize>());
    // 2 values per predictor, so 4 answer paths reach a prediction
    assert!(walk.reached_prediction >= 4);
    for st in [
        FlowState::ChooseHorizon,
        FlowState::AskPredictor(0),
        FlowState::AskPredictor(1),
        FlowState::ShowPrediction,
        FlowState::Survey,
        FlowState::Done,
    ] {
        assert!(walk.seen_states.contains(&st), "{st} never reached");
    }
}

#[test]
fn invalid_answer_reports_allowed_values() {
    let dir = tempfile::tempdir().unwrap();
    let reg = tiny_registry(dir.path());
    let mut s = Session::new("s".into(), Flow::Prediction);
    let err = s.answer("7", &reg).unwrap_err();
    assert_eq!(
        err,
        SessionError::InvalidValue {
            predictor: "horizon".into(),
            value: "7".into(),
            allowed: vec!["5".into()]
        }
    );
    s.answer("5", &reg).unwrap();
    let err = s.answer("huge", &reg).unwrap_err();
    assert_eq!(err.code(), "InvalidValue");
    assert_eq!(s.state(), FlowState::AskPredictor(0));
}

#[derive(Debug, Clone, Copy)]
enum TrainAct {
    Upload,
    Confirm,
    Start,
    JobOk,
    JobFailed,
    Survey,
}

fn training_edge_allowed(from: FlowState, to: FlowState) -> bool {
    use FlowState::*;
    matches!(
        (from, to),
        (AwaitUpload, ReviewDataset)
            | (ReviewDataset, ConfigureGrid)
            | (ConfigureGrid, Running)
            | (Running, ShowResults)
            | (Running, Done)
            | (ShowResults, Done)
    )
}

fn train_apply(s: &mut Session, act: TrainAct, d: &Dataset) -> Result<(), SessionError> {
    match act {
        TrainAct::Upload => s.accept_dataset(d.clone()),
        TrainAct::Confirm => s.confirm(),
        TrainAct::Start => s.start_job("job".into(), Default::default()),
        TrainAct::JobOk => {
            s.finish_job(Ok(json!({"validation_auc": 1.0})));
            Ok(())
        }
        TrainAct::JobFailed => {
            s.finish_job(Err(json!({"code": "NonFiniteLoss"})));
            Ok(())
        }
        TrainAct::Survey => s.check_survey(5).map(|()| s.complete_survey()),
    }
}

fn train_dfs(s: &Session, d: &Dataset, depth: usize, seen: &mut HashSet<FlowState>) {
    seen.insert(s.state());
    if matches!(s.state(), FlowState::ReviewDataset | FlowState::ConfigureGrid | FlowState::Running) {
        assert!(s.dataset().is_some());
    }
    if s.state() == FlowState::Running {
        assert_eq!(s.job_id(), Some("job"));
    }
    if depth == 0 {
        return;
    }
    use TrainAct::*;
    for act in [Upload, Confirm, Start, JobOk, JobFailed, Survey] {
        let mut next = s.clone();
        let before = next.state();
        let r = train_apply(&mut next, act, d);
        if next.state() != before {
            assert!(r.is_ok());
            assert!(training_edge_allowed(before, next.state()), "{before} -> {} via {act:?}", next.state());
        }
        train_dfs(&next, d, depth - 1, seen);
    }
}

#[test]
fn training_traces_follow_the_machine() {
    let d = parse_csv(TINY.as_bytes(), "y").unwrap();
    let mut seen = HashSet::new();
    train_dfs(&Session::new("t".into(), Flow::Training), &d, 7, &mut seen);
    assert_eq!(seen.len(), 6);
}

#[test]
fn survey_rating_bounds_and_terminal_done() {
    let dir = tempfile::tempdir().unwrap();
    let reg = tiny_registry(dir.path());
    let mut s = Session::new("s".into(), Flow::Prediction);
    for v in ["5", "large", "red"] {
        s.answer(v, &reg).unwrap();
    }
    assert_eq!(s.state(), FlowState::ShowPrediction);
    assert_eq!(s.check_survey(5).unwrap_err().code(), "WrongState");
    s.confirm().unwrap();
    assert_eq!(s.check_survey(0), Err(SessionError::RatingOutOfRange(0)));
    assert_eq!(s.check_survey(6), Err(SessionError::RatingOutOfRange(6)));
    s.check_survey(5).unwrap();
    s.complete_survey();
    assert_eq!(s.check_survey(5).unwrap_err().code(), "WrongState");
    assert_eq!(s.confirm().unwrap_err().code(), "WrongState");
}
