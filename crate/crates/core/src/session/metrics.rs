//! Append-only line-delimited JSON logs.
//!
//! `metrics.log` receives every round summary, evaluation and curriculum
//! event; `events.log` receives only the events and doubles as a script for
//! the scripted source.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::SessionError;
use crate::curriculum::{CurriculumEvent, RoundRecord};
use crate::eval::EvalReport;

pub const METRICS_FILE: &str = "metrics.log";
pub const EVENTS_FILE: &str = "events.log";

/// Fields that legitimately differ between otherwise identical runs.
pub const VOLATILE_FIELDS: &[&str] = &["wall_clock", "steps_per_sec"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MetricRecord {
    Round(RoundRecord),
    Eval(EvalRecord),
    Event(CurriculumEvent),
}

pub struct MetricsWriter {
    metrics: File,
    events: File,
    dir: PathBuf,
}

fn append(path: &Path) -> Result<File, SessionError> {
    Ok(OpenOptions::new().create(true).append(true).open(path)?)
}

impl MetricsWriter {
    pub fn open(run_dir: &Path) -> Result<Self, SessionError> {
        Ok(Self {
            metrics: append(&run_dir.join(METRICS_FILE))?,
            events: append(&run_dir.join(EVENTS_FILE))?,
            dir: run_dir.to_path_buf(),
        })
    }

    pub fn run_dir(&self) -> &Path {
        &self.dir
    }

    /// One line per call, flushed immediately so readers can tail the file.
    pub fn append(&mut self, record: &MetricRecord) -> Result<(), SessionError> {
        let mut line = serde_json::to_string(record)?;
        line.push('\n');
        self.metrics.write_all(line.as_bytes())?;
        if let MetricRecord::Event(event) = record {
            let mut line = serde_json::to_string(event)?;
            line.push('\n');
            self.events.write_all(line.as_bytes())?;
        }
        Ok(())
    }
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SessionError> {
    let file = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line)
            .map_err(|e| SessionError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(value);
    }
    Ok(out)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>, SessionError> {
    read_lines(path)
}

pub fn read_events(path: &Path) -> Result<Vec<CurriculumEvent>, SessionError> {
    read_lines(path)
}

fn strip(value: &mut Value, fields: &[&str]) {
    match value {
        Value::Object(map) => {
            for f in fields {
                map.remove(*f);
            }
            map.values_mut().for_each(|v| strip(v, fields));
        }
        Value::Array(items) => items.iter_mut().for_each(|v| strip(v, fields)),
        _ => {}
    }
}

/// Re-serializes every line with `fields` removed at any depth.
pub fn comparable_lines(text: &str, fields: &[&str]) -> Result<Vec<String>, SessionError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let mut value: Value = serde_json::from_str(line)?;
            strip(&mut value, fields);
            Ok(serde_json::to_string(&value)?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogComparison {
    pub left_lines: usize,
    pub right_lines: usize,
    /// Index of the first differing line, if any.
    pub first_mismatch: Option<usize>,
}

impl LogComparison {
    pub fn identical(&self) -> bool {
        self.first_mismatch.is_none() && self.left_lines == self.right_lines
    }
}

pub fn compare_logs(left: &Path, right: &Path, ignore: &[&str]) -> Result<LogComparison, SessionError> {
    let a = comparable_lines(&std::fs::read_to_string(left)?, ignore)?;
    let b = comparable_lines(&std::fs::read_to_string(right)?, ignore)?;
    let first_mismatch = a
        .iter()
        .zip(&b)
        .position(|(x, y)| x != y)
        .or_else(|| (a.len() != b.len()).then(|| a.len().min(b.len())));
    Ok(LogComparison { left_lines: a.len(), right_lines: b.len(), first_mismatch })
}
