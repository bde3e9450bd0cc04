#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use medagent_service::{ServiceConfig, Server};
use serde_json::Value;

pub fn repo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn demo_csv() -> Vec<u8> {
    std::fs::read(repo().join("data/demo_separable.csv")).unwrap()
}

pub struct TestServer {
    pub base: String,
    pub client: reqwest::Client,
    pub survey_log: PathBuf,
    server: Server,
    _dir: tempfile::TempDir,
}

pub async fn spawn(tweak: impl FnOnce(&mut ServiceConfig)) -> TestServer {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ServiceConfig {
        listen: "127.0.0.1:0".into(),
        model_dir: repo().join("models"),
        survey_log: dir.path().join("survey.ndjson"),
        ..ServiceConfig::default()
    };
    tweak(&mut cfg);
    let survey_log = cfg.survey_log.clone();
    let server = medagent_service::start(cfg).await.unwrap();
    TestServer {
        base: format!("http://{}", server.addr),
        client: reqwest::Client::new(),
        survey_log,
        server,
        _dir: dir,
    }
}

async fn decode(r: reqwest::Response) -> (u16, Value) {
    let status = r.status().as_u16();
    let bytes = r.bytes().await.unwrap();
    let v = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, v)
}

impl TestServer {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        decode(self.client.get(self.url(path)).send().await.unwrap()).await
    }

    pub async fn get_bytes(&self, path: &str) -> (u16, Vec<u8>) {
        let r = self.client.get(self.url(path)).send().await.unwrap();
        (r.status().as_u16(), r.bytes().await.unwrap().to_vec())
    }

    pub async fn post(&self, path: &str, body: Value) -> (u16, Value) {
        decode(self.client.post(self.url(path)).json(&body).send().await.unwrap()).await
    }

    pub async fn post_raw(&self, path: &str, body: Vec<u8>) -> (u16, Value) {
        decode(
            self.client
                .post(self.url(path))
                .header("content-type", "text/csv")
                .body(body)
                .send()
                .await
                .unwrap(),
        )
        .await
    }

    pub async fn session(&self, flow: &str) -> (String, Value) {
        let (status, v) = self.post("/api/sessions", serde_json::json!({ "flow": flow })).await;
        assert_eq!(status, 201, "{v}");
        (v["session_id"].as_str().unwrap().to_string(), v)
    }

    /// Poll until the job is terminal.
    pub async fn wait_job(&self, job_id: &str, limit: Duration) -> Value {
        let start = Instant::now();
        loop {
            let (status, v) = self.get(&format!("/api/jobs/{job_id}")).await;
            assert_eq!(status, 200, "{v}");
            if v["status"] == "succeeded" || v["status"] == "failed" {
                return v;
            }
            assert!(start.elapsed() < limit, "job {job_id} still {} after {limit:?}", v["status"]);
            tokio::time::sleep(Duration::from_millis(50)).await;
        }
    }

    pub async fn stop(self) {
        self.server.shutdown().await.unwrap();
    }
}
