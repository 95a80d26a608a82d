//! Trace files: a header line carrying the scenario and run options, then one
//! record per line. Replaying re-runs the scenario and diffs the records.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::TraceRecord;

use super::format;
use super::runner::{self, ReplayOptions, RunReport};

pub const TRACE_FORMAT: &str = "handoff-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub options: ReplayOptions,
    pub scenario: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceFile {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ReplayError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("embedded scenario: {0}")]
    Scenario(#[from] format::ScenarioError),
    #[error("trace diverges at seq {seq}")]
    TraceDivergence {
        seq: u64,
        expected: Option<String>,
        actual: Option<String>,
    },
}

impl TraceFile {
    pub fn new(options: ReplayOptions, scenario: String, records: Vec<TraceRecord>) -> Self {
        Self {
            header: TraceHeader {
                format: TRACE_FORMAT.into(),
                version: TRACE_VERSION,
                options,
                scenario,
            },
            records,
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = serde_json::to_string(&self.header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }
}

fn split(text: &str) -> Result<(TraceHeader, Vec<&str>), ReplayError> {
    let mut lines = text.lines();
    let first = lines.next().ok_or(ReplayError::Parse {
        line: 1,
        msg: "empty trace".into(),
    })?;
    let header: TraceHeader = serde_json::from_str(first).map_err(|e| ReplayError::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    if header.format != TRACE_FORMAT || header.version != TRACE_VERSION {
        return Err(ReplayError::Parse {
            line: 1,
            msg: format!("not a {TRACE_FORMAT} v{TRACE_VERSION} file"),
        });
    }
    Ok((header, lines.filter(|l| !l.trim().is_empty()).collect()))
}

pub fn parse(text: &str) -> Result<TraceFile, ReplayError> {
    let (header, lines) = split(text)?;
    let records = lines
        .iter()
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ReplayError::Parse {
                line: i + 2,
                msg: e.to_string(),
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(TraceFile { header, records })
}

/// Re-executes the run a trace describes and checks every record matches
/// byte for byte.
pub fn replay(text: &str) -> Result<RunReport, ReplayError> {
    let (header, recorded) = split(text)?;
    let scenario = format::parse(&header.scenario)?;
    let options =
        runner::options_from(&header.options).map_err(|msg| ReplayError::Parse { line: 1, msg })?;
    let outcome = runner::run(&scenario, options)?;
    let fresh: Vec<String> = outcome
        .trace
        .map(|t| t.records.iter().map(TraceRecord::to_line).collect())
        .unwrap_or_default();
    for i in 0..recorded.len().max(fresh.len()) {
        let expected = fresh.get(i);
        let actual = recorded.get(i).copied();
        if expected.map(String::as_str) != actual {
            return Err(ReplayError::TraceDivergence {
                seq: i as u64,
                expected: expected.cloned(),
                actual: actual.map(str::to_string),
            });
        }
    }
    Ok(outcome.report)
}
