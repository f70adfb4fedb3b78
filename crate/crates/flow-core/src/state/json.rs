//! Snapshot serialization: UTF-8 JSON with top level
//! `{ "goal": text, "revision": int, "tasks": { id: record } }` and canonical
//! record keys `requirement`, `status`, `data`, `num_parents_not_completed`,
//! `child`, `agent`.
//!
//! The loader accepts `"subtask requirement"` as an alias for `requirement`
//! and `"next"` as an alias for `child`; a `"prev"` list is accepted and
//! ignored (it is derivable). Counters in documents are advisory: they are
//! recomputed on load and mismatches are corrected with a warning.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use super::{SubtaskRecord, SubtaskStatus, WorkflowState};
use crate::aov::{validate, SubtaskId};

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("malformed document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("document root is not a JSON object")]
    NotAnObject,
    #[error("missing key '{key}'")]
    MissingKey { key: String },
    #[error("'{key}' has the wrong type: expected {expected}")]
    WrongType { key: String, expected: &'static str },
    #[error("'{key}' is empty")]
    EmptyValue { key: String },
    #[error("unknown status token '{token}' at '{key}'")]
    UnknownStatus { key: String, token: String },
    #[error("'{parent}' lists child '{child}' which is not a task key")]
    DanglingChild { parent: String, child: String },
    #[error("task structure is cyclic: {summary}")]
    Cyclic { summary: String },
}

/// A state loaded from a document, plus any corrections that were applied.
#[derive(Debug)]
pub struct LoadedSnapshot {
    pub state: WorkflowState,
    pub warnings: Vec<String>,
}

/// One record as read from a task map, before consistency checks.
#[derive(Debug, Clone)]
pub struct RawSubtask {
    pub requirement: String,
    pub status: Option<SubtaskStatus>,
    pub data: Option<String>,
    /// Advisory counter as written in the document.
    pub counter: Option<u64>,
    pub children: Vec<SubtaskId>,
    pub agent: String,
}

#[derive(Serialize)]
struct TaskDoc<'a> {
    requirement: &'a str,
    status: &'static str,
    data: Option<&'a str>,
    num_parents_not_completed: usize,
    child: &'a [SubtaskId],
    agent: &'a str,
}

#[derive(Serialize)]
struct SnapshotDoc<'a> {
    goal: &'a str,
    revision: u64,
    tasks: BTreeMap<&'a str, TaskDoc<'a>>,
}

pub(super) fn to_json(state: &WorkflowState) -> String {
    let tasks = state
        .records()
        .iter()
        .map(|(id, r)| {
            (
                id.as_str(),
                TaskDoc {
                    requirement: &r.requirement,
                    status: r.status.token(),
                    data: r.data.as_deref(),
                    num_parents_not_completed: r.num_parents_not_completed,
                    child: &r.children,
                    agent: &r.agent,
                },
            )
        })
        .collect();
    let doc = SnapshotDoc {
        goal: state.goal(),
        revision: state.revision(),
        tasks,
    };
    serde_json::to_string_pretty(&doc).expect("snapshot serialization cannot fail")
}

fn string_field(
    obj: &Map<String, Value>,
    key_path: &str,
    names: &[&str],
) -> Result<Option<String>, SnapshotError> {
    for name in names {
        match obj.get(*name) {
            None => continue,
            Some(Value::String(s)) => return Ok(Some(s.clone())),
            Some(_) => {
                return Err(SnapshotError::WrongType {
                    key: format!("{key_path}.{name}"),
                    expected: "string",
                })
            }
        }
    }
    Ok(None)
}

/// Parses one `{ id: record }` map with the key shim applied. Shared by the
/// snapshot loader and the planner response parser.
pub fn parse_task_map(
    tasks: &Map<String, Value>,
    key_path: &str,
) -> Result<(BTreeMap<SubtaskId, RawSubtask>, Vec<String>), SnapshotError> {
    let mut parsed = BTreeMap::new();
    let mut warnings = Vec::new();

    for (id, value) in tasks {
        let task_path = format!("{key_path}.{id}");
        if id.trim().is_empty() {
            return Err(SnapshotError::EmptyValue { key: task_path });
        }
        let obj = value.as_object().ok_or_else(|| SnapshotError::WrongType {
            key: task_path.clone(),
            expected: "object",
        })?;

        let requirement = string_field(obj, &task_path, &["requirement", "subtask requirement", "subtask_requirement"])?
            .ok_or_else(|| SnapshotError::MissingKey {
                key: format!("{task_path}.requirement"),
            })?;
        if requirement.trim().is_empty() {
            return Err(SnapshotError::EmptyValue {
                key: format!("{task_path}.requirement"),
            });
        }

        let status = match string_field(obj, &task_path, &["status"])? {
            None => None,
            Some(token) => Some(SubtaskStatus::parse_token(&token).ok_or_else(|| {
                SnapshotError::UnknownStatus {
                    key: format!("{task_path}.status"),
                    token,
                }
            })?),
        };

        let data = match obj.get("data") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) => {
                // planners occasionally emit structured data; keep it as text
                warnings.push(format!(
                    "'{task_path}.data' is not a string; stored as JSON text"
                ));
                Some(other.to_string())
            }
        };

        let counter = match obj.get("num_parents_not_completed") {
            None | Some(Value::Null) => None,
            Some(Value::Number(n)) => n.as_u64(),
            Some(_) => {
                return Err(SnapshotError::WrongType {
                    key: format!("{task_path}.num_parents_not_completed"),
                    expected: "nonnegative integer",
                })
            }
        };

        let children_value = obj.get("child").or_else(|| obj.get("next"));
        let children = match children_value {
            None | Some(Value::Null) => Vec::new(),
            Some(Value::Array(items)) => {
                let mut children = Vec::with_capacity(items.len());
                for item in items {
                    match item {
                        Value::String(s) => children.push(SubtaskId::new(s.clone())),
                        _ => {
                            return Err(SnapshotError::WrongType {
                                key: format!("{task_path}.child"),
                                expected: "array of strings",
                            })
                        }
                    }
                }
                children.sort();
                children.dedup();
                children
            }
            Some(Value::String(s)) => vec![SubtaskId::new(s.clone())],
            Some(_) => {
                return Err(SnapshotError::WrongType {
                    key: format!("{task_path}.child"),
                    expected: "array of strings",
                })
            }
        };

        let agent = string_field(obj, &task_path, &["agent"])?.ok_or_else(|| {
            SnapshotError::MissingKey {
                key: format!("{task_path}.agent"),
            }
        })?;

        parsed.insert(
            SubtaskId::new(id.clone()),
            RawSubtask {
                requirement,
                status,
                data,
                counter,
                children,
                agent,
            },
        );
    }

    Ok((parsed, warnings))
}

pub(super) fn from_json(text: &str) -> Result<LoadedSnapshot, SnapshotError> {
    let value: Value = serde_json::from_str(text)?;
    let root = value.as_object().ok_or(SnapshotError::NotAnObject)?;

    let goal = match root.get("goal") {
        None | Some(Value::Null) => String::new(),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            return Err(SnapshotError::WrongType {
                key: "goal".into(),
                expected: "string",
            })
        }
    };
    let revision = match root.get("revision") {
        None | Some(Value::Null) => 0,
        Some(Value::Number(n)) => n.as_u64().ok_or(SnapshotError::WrongType {
            key: "revision".into(),
            expected: "nonnegative integer",
        })?,
        Some(_) => {
            return Err(SnapshotError::WrongType {
                key: "revision".into(),
                expected: "nonnegative integer",
            })
        }
    };
    let tasks = root
        .get("tasks")
        .ok_or(SnapshotError::MissingKey { key: "tasks".into() })?
        .as_object()
        .ok_or(SnapshotError::WrongType {
            key: "tasks".into(),
            expected: "object",
        })?;

    let (raw, mut warnings) = parse_task_map(tasks, "tasks")?;

    // structure checks: children resolve, graph acyclic
    for (id, task) in &raw {
        for child in &task.children {
            if !raw.contains_key(child) {
                return Err(SnapshotError::DanglingChild {
                    parent: id.to_string(),
                    child: child.to_string(),
                });
            }
        }
    }

    let mut records: BTreeMap<SubtaskId, SubtaskRecord> = raw
        .iter()
        .map(|(id, task)| {
            let status = task.status.unwrap_or(SubtaskStatus::NotStarted);
            let mut data = task.data.clone();
            if data.is_some() && status != SubtaskStatus::Completed {
                warnings.push(format!(
                    "task '{id}' carries data but is {status}; data dropped"
                ));
                data = None;
            }
            (
                id.clone(),
                SubtaskRecord {
                    requirement: task.requirement.clone(),
                    status,
                    data,
                    num_parents_not_completed: 0, // recomputed below
                    children: task.children.clone(),
                    agent: task.agent.clone(),
                },
            )
        })
        .collect();

    // acyclicity via the implied graph
    let mut state_probe = WorkflowState::from_records(String::new(), 0, records.clone());
    let report = validate(&state_probe.to_graph());
    if report.has_cycle() {
        return Err(SnapshotError::Cyclic {
            summary: report.summary(),
        });
    }

    // counters: recompute from structure, warn on documented mismatches
    state_probe.recompute_counters();
    for (id, record) in state_probe.records() {
        let recomputed = record.num_parents_not_completed;
        if let Some(documented) = raw[id].counter {
            if documented != recomputed as u64 {
                warnings.push(format!(
                    "counter for '{id}' was {documented}, corrected to {recomputed}"
                ));
            }
        }
        records.get_mut(id).unwrap().num_parents_not_completed = recomputed;
    }

    Ok(LoadedSnapshot {
        state: WorkflowState::from_records(goal, revision, records),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aov::AovGraph;

    fn workflow_one_state() -> WorkflowState {
        let g = AovGraph::from_parts(
            &[
                ("A", "writer", "part a"),
                ("B", "writer", "part b"),
                ("C", "builder", "combine"),
                ("D", "reviewer", "review"),
            ],
            &[("A", "C"), ("B", "C"), ("A", "D"), ("B", "D"), ("C", "D")],
        );
        WorkflowState::from_graph(&g, "build it").unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let state = workflow_one_state();
        let json = state.to_json();
        let loaded = WorkflowState::from_json(&json).unwrap();
        assert!(loaded.warnings.is_empty());
        assert_eq!(loaded.state, state);
        assert_eq!(loaded.state.to_json(), json);
    }

    #[test]
    fn round_trip_preserves_progress() {
        let mut state = workflow_one_state();
        state.mark_in_progress(&"A".into()).unwrap();
        state.mark_completed(&"A".into(), "html skeleton").unwrap();
        state.mark_in_progress(&"B".into()).unwrap();

        let loaded = WorkflowState::from_json(&state.to_json()).unwrap();
        assert_eq!(loaded.state, state);
    }

    #[test]
    fn counter_mismatch_is_corrected_with_warning() {
        let doc = r#"{
            "goal": "g",
            "revision": 1,
            "tasks": {
                "A": {"requirement": "a", "status": "not_started", "data": null,
                      "num_parents_not_completed": 0, "child": ["C"], "agent": "r"},
                "B": {"requirement": "b", "status": "not_started", "data": null,
                      "num_parents_not_completed": 0, "child": ["C"], "agent": "r"},
                "C": {"requirement": "c", "status": "not_started", "data": null,
                      "num_parents_not_completed": 5, "child": [], "agent": "r"}
            }
        }"#;
        let loaded = WorkflowState::from_json(doc).unwrap();
        assert_eq!(
            loaded.state.record(&"C".into()).unwrap().num_parents_not_completed,
            2
        );
        assert_eq!(loaded.warnings.len(), 1);
        assert!(loaded.warnings[0].contains("'C'"), "{:?}", loaded.warnings);
    }

    #[test]
    fn spaced_key_and_next_aliases_load() {
        let doc = r#"{
            "tasks": {
                "A": {"subtask requirement": "write it", "status": "not started",
                      "next": ["B"], "prev": [], "agent": "writer"},
                "B": {"subtask requirement": "check it", "status": "pending",
                      "next": [], "prev": ["A"], "agent": "reviewer"}
            }
        }"#;
        let loaded = WorkflowState::from_json(doc).unwrap();
        let a = loaded.state.record(&"A".into()).unwrap();
        assert_eq!(a.requirement, "write it");
        assert_eq!(a.status, SubtaskStatus::NotStarted);
        assert_eq!(a.children, vec![SubtaskId::new("B")]);
        let b = loaded.state.record(&"B".into()).unwrap();
        assert_eq!(b.status, SubtaskStatus::NotStarted);
        assert_eq!(b.num_parents_not_completed, 1);
    }

    #[test]
    fn dangling_child_is_a_parse_error() {
        let doc = r#"{
            "tasks": {
                "A": {"requirement": "a", "status": "not_started", "child": ["MISSING"], "agent": "r"}
            }
        }"#;
        let err = WorkflowState::from_json(doc).unwrap_err();
        match err {
            SnapshotError::DanglingChild { parent, child } => {
                assert_eq!(parent, "A");
                assert_eq!(child, "MISSING");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn unknown_status_names_the_key() {
        let doc = r#"{
            "tasks": {
                "A": {"requirement": "a", "status": "paused", "child": [], "agent": "r"}
            }
        }"#;
        let err = WorkflowState::from_json(doc).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("tasks.A.status"), "{message}");
        assert!(message.contains("paused"), "{message}");
    }

    #[test]
    fn cyclic_document_is_rejected() {
        let doc = r#"{
            "tasks": {
                "A": {"requirement": "a", "status": "not_started", "child": ["B"], "agent": "r"},
                "B": {"requirement": "b", "status": "not_started", "child": ["A"], "agent": "r"}
            }
        }"#;
        assert!(matches!(
            WorkflowState::from_json(doc).unwrap_err(),
            SnapshotError::Cyclic { .. }
        ));
    }

    #[test]
    fn data_on_uncompleted_task_is_dropped_with_warning() {
        let doc = r#"{
            "tasks": {
                "A": {"requirement": "a", "status": "failed", "data": "stale", "child": [], "agent": "r"}
            }
        }"#;
        let loaded = WorkflowState::from_json(doc).unwrap();
        assert!(loaded.state.record(&"A".into()).unwrap().data.is_none());
        assert_eq!(loaded.warnings.len(), 1);
    }

    #[test]
    fn missing_tasks_key_is_an_error() {
        assert!(matches!(
            WorkflowState::from_json(r#"{"goal": "g"}"#).unwrap_err(),
            SnapshotError::MissingKey { .. }
        ));
        assert!(matches!(
            WorkflowState::from_json("[1, 2]").unwrap_err(),
            SnapshotError::NotAnObject
        ));
        assert!(matches!(
            WorkflowState::from_json("not json at all").unwrap_err(),
            SnapshotError::Malformed(_)
        ));
    }
}
