//! Append-only run log: one JSON event per line.

use std::io::Write;

use chrono::{SecondsFormat, Utc};
use serde::Serialize;

use crate::aov::SubtaskId;

/// Event tokens, in the order they typically appear in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Planned,
    Selected,
    Dispatched,
    Completed,
    Verified,
    VerifyFailed,
    Failed,
    Masked,
    UpdateProposed,
    UpdateMerged,
    NoChange,
    StaleResult,
    BudgetExhausted,
    Done,
}

impl EventKind {
    pub fn token(self) -> &'static str {
        match self {
            EventKind::Planned => "planned",
            EventKind::Selected => "selected",
            EventKind::Dispatched => "dispatched",
            EventKind::Completed => "completed",
            EventKind::Verified => "verified",
            EventKind::VerifyFailed => "verify_failed",
            EventKind::Failed => "failed",
            EventKind::Masked => "masked",
            EventKind::UpdateProposed => "update_proposed",
            EventKind::UpdateMerged => "update_merged",
            EventKind::NoChange => "no_change",
            EventKind::StaleResult => "stale_result",
            EventKind::BudgetExhausted => "budget_exhausted",
            EventKind::Done => "done",
        }
    }
}

/// One run-log line: `{"ts", "revision", "event", "subtask", "agent",
/// "detail"}`.
#[derive(Debug, Clone, Serialize)]
pub struct RunEvent {
    pub ts: String,
    pub revision: u64,
    pub event: EventKind,
    pub subtask: Option<SubtaskId>,
    /// `"role#clone"` when an agent instance was involved.
    pub agent: Option<String>,
    pub detail: String,
}

/// In-memory event list with an optional JSONL write-through sink.
pub struct RunLog {
    events: Vec<RunEvent>,
    sink: Option<Box<dyn Write + Send>>,
}

impl RunLog {
    pub fn new(sink: Option<Box<dyn Write + Send>>) -> Self {
        RunLog {
            events: Vec::new(),
            sink,
        }
    }

    pub fn in_memory() -> Self {
        RunLog::new(None)
    }

    pub fn push(
        &mut self,
        revision: u64,
        event: EventKind,
        subtask: Option<&SubtaskId>,
        agent: Option<String>,
        detail: impl Into<String>,
    ) {
        let event = RunEvent {
            ts: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
            revision,
            event,
            subtask: subtask.cloned(),
            agent,
            detail: detail.into(),
        };
        if let Some(sink) = &mut self.sink {
            let line = serde_json::to_string(&event).expect("event serialization cannot fail");
            if let Err(e) = writeln!(sink, "{line}") {
                log::warn!("run log write failed: {e}");
            }
        }
        self.events.push(event);
    }

    pub fn events(&self) -> &[RunEvent] {
        &self.events
    }

    pub fn into_events(mut self) -> Vec<RunEvent> {
        if let Some(sink) = &mut self.sink {
            let _ = sink.flush();
        }
        self.events
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn events_write_through_as_jsonl() {
        use std::sync::{Arc, Mutex};

        #[derive(Clone)]
        struct Shared(Arc<Mutex<Vec<u8>>>);
        impl Write for Shared {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.lock().unwrap().extend_from_slice(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }

        let buffer = Shared(Arc::new(Mutex::new(Vec::new())));
        let mut log = RunLog::new(Some(Box::new(buffer.clone())));
        log.push(0, EventKind::Planned, None, None, "k=3");
        log.push(
            1,
            EventKind::Dispatched,
            Some(&"A".into()),
            Some("writer#0".into()),
            "",
        );
        let events = log.into_events();
        assert_eq!(events.len(), 2);

        let raw = buffer.0.lock().unwrap().clone();
        let text = String::from_utf8(raw).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let parsed: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(parsed["event"], "dispatched");
        assert_eq!(parsed["subtask"], "A");
        assert_eq!(parsed["agent"], "writer#0");
        assert_eq!(parsed["revision"], 1);
        assert!(parsed["ts"].as_str().unwrap().contains('T'));
    }
}
