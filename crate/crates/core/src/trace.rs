//! Trace records emitted by the engine, one JSON object per line.

use serde::{Deserialize, Serialize};

use crate::authz::{Outcome, Verdict};
use crate::domain::{EventId, MediatedEvent, ProgramId, Timestamp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Preliminary,
    Main,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    High,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Admission {
    /// Handed to an idle program straight away.
    Delivered,
    /// Same input as the one being processed; folded into it.
    Repeat,
    /// Queued until the target program finishes its current event.
    Held,
    /// Queue bound exceeded.
    Rejected,
    /// Operation requests go to the monitor, not to a program queue.
    Monitored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceBody {
    Admit {
        event: MediatedEvent,
        outcome: Admission,
    },
    Hold {
        event: EventId,
        program: ProgramId,
        level: Level,
    },
    Deliver {
        event: EventId,
        program: ProgramId,
        delay_ms: u64,
        repeat: bool,
    },
    Expire {
        event: EventId,
        program: ProgramId,
    },
    /// A delivered handoff joined a graph, or failed to.
    Handoff {
        event: EventId,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        root: Option<EventId>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        error: Option<String>,
    },
    /// An operation request was attributed to a graph, or failed to.
    Request {
        event: EventId,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        root: Option<EventId>,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        error: Option<String>,
    },
    Prompt {
        #[serde(skip_serializing_if = "Option::is_none", default)]
        root: Option<EventId>,
        text: String,
        verdict: Verdict,
    },
    Decision {
        request: EventId,
        #[serde(flatten)]
        outcome: Outcome,
        #[serde(skip_serializing_if = "Option::is_none", default)]
        path: Option<Vec<EventId>>,
    },
    Complete {
        event: EventId,
        program: ProgramId,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub seq: u64,
    pub t: Timestamp,
    pub phase: Phase,
    #[serde(flatten)]
    pub body: TraceBody,
}

impl TraceRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("trace records serialize")
    }
}
