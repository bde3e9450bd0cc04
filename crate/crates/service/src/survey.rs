//! Append-only newline-delimited JSON survey log.

use std::io::Write;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use serde::Serialize;

use crate::session::Flow;

#[derive(Debug, Clone, Serialize)]
pub struct SurveyRecord {
    pub timestamp: u64,
    pub session_id: String,
    pub flow: Flow,
    pub rating: u8,
    pub comment: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
}

#[derive(Debug)]
pub struct SurveyLog {
    path: PathBuf,
    lock: Mutex<()>,
}

impl SurveyLog {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            lock: Mutex::new(()),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &SurveyRecord) -> std::io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(std::io::Error::other)?;
        line.push(b'\n');
        let _guard = self.lock.lock();
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(&line)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn appends_one_line_per_record() {
        let dir = tempfile::tempdir().unwrap();
        let log = SurveyLog::new(dir.path().join("logs/survey.ndjson"));
        for rating in [5, 2] {
            log.append(&SurveyRecord {
                timestamp: 1,
                session_id: "s".into(),
                flow: Flow::Prediction,
                rating,
                comment: None,
                horizon: Some(5),
                job_id: None,
            })
            .unwrap();
        }
        let text = std::fs::read_to_string(log.path()).unwrap();
        let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[1]["rating"], 2);
        assert_eq!(lines[0]["flow"], "prediction");
    }
}
