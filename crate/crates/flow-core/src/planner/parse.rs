//! Parsing of planner responses: strips surrounding prose and code fences,
//! extracts the first JSON object, applies the key shim, and validates the
//! resulting structure.

use serde_json::Value;
use thiserror::Error;

use super::PlannerResponse;
use crate::aov::{validate, AgentRole, AovGraph};
use crate::state::{parse_task_map, ProposedSubtask, SnapshotError, StructuralUpdate};

/// Whether a task map in the response should be read as a candidate workflow
/// or as a structural update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseContext {
    Initial,
    Update,
}

/// Parse failure with a diagnosis suitable for a retry prompt.
#[derive(Debug, Error)]
pub enum ParseError {
    #[error("no JSON object found")]
    NoJsonObject,
    #[error("the JSON object never closes (unbalanced braces)")]
    Unbalanced,
    #[error("invalid JSON: {0}")]
    Json(String),
    #[error("schema violation: {0}")]
    Schema(#[from] SnapshotError),
    #[error("invalid workflow structure: {0}")]
    InvalidStructure(String),
}

impl ParseError {
    /// Human-readable diagnosis for a retry prompt.
    pub fn diagnosis(&self) -> String {
        self.to_string()
    }
}

/// Extracts the first balanced JSON object from `text`, skipping anything
/// around it (prose, code fences).
fn extract_json_object(text: &str) -> Result<&str, ParseError> {
    let bytes = text.as_bytes();
    let start = text.find('{').ok_or(ParseError::NoJsonObject)?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, &byte) in bytes[start..].iter().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if byte == b'\\' {
                escaped = true;
            } else if byte == b'"' {
                in_string = false;
            }
            continue;
        }
        match byte {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Ok(&text[start..=start + offset]);
                }
            }
            _ => {}
        }
    }
    Err(ParseError::Unbalanced)
}

/// Accepts either a bare task map or a snapshot-style wrapper with a
/// `tasks` key next to `goal`/`revision`.
fn unwrap_task_map(value: &Value) -> Result<&serde_json::Map<String, Value>, ParseError> {
    let object = value
        .as_object()
        .ok_or_else(|| ParseError::Json("top level is not an object".to_string()))?;
    if let Some(tasks) = object.get("tasks") {
        if object.contains_key("goal") || object.contains_key("revision") {
            return tasks
                .as_object()
                .ok_or_else(|| ParseError::Json("'tasks' is not an object".to_string()));
        }
    }
    Ok(object)
}

/// Parses a planner response.
///
/// The empty object maps to [`PlannerResponse::NoChange`]. A task map
/// becomes a candidate graph (initial context) or a structural update
/// (update context); both are checked for dangling children and cycles.
pub fn parse_workflow_response(
    text: &str,
    context: ParseContext,
) -> Result<PlannerResponse, ParseError> {
    let slice = extract_json_object(text)?;
    let value: Value =
        serde_json::from_str(slice).map_err(|e| ParseError::Json(e.to_string()))?;

    let tasks = unwrap_task_map(&value)?;
    if tasks.is_empty() {
        return Ok(PlannerResponse::NoChange);
    }

    let (raw, _warnings) = parse_task_map(tasks, "response")?;

    match context {
        ParseContext::Initial => {
            let mut graph = AovGraph::new();
            for (id, task) in &raw {
                graph.add_subtask(
                    id.clone(),
                    AgentRole::new(task.agent.clone()),
                    task.requirement.clone(),
                );
            }
            for (id, task) in &raw {
                for child in &task.children {
                    graph.add_edge(id.clone(), child.clone());
                }
            }
            let report = validate(&graph);
            if !report.is_ok() {
                return Err(ParseError::InvalidStructure(report.summary()));
            }
            Ok(PlannerResponse::Candidates(vec![graph]))
        }
        ParseContext::Update => {
            let mut update = StructuralUpdate::new();
            for (id, task) in raw {
                update.insert(
                    id,
                    ProposedSubtask {
                        requirement: task.requirement,
                        children: task.children,
                        agent: task.agent,
                        status: task.status,
                    },
                );
            }
            let report = validate(&update.to_graph());
            if !report.is_ok() {
                return Err(ParseError::InvalidStructure(report.summary()));
            }
            Ok(PlannerResponse::Update(update))
        }
    }
}

/// Parses a completion-verification verdict: a leading YES/NO token followed
/// by the rationale.
pub fn parse_verdict(text: &str) -> Option<super::Verdict> {
    let trimmed = text.trim();
    let first_word: String = trimmed
        .chars()
        .take_while(|c| c.is_ascii_alphabetic())
        .collect();
    let pass = match first_word.to_ascii_uppercase().as_str() {
        "YES" => true,
        "NO" => false,
        _ => return None,
    };
    let rationale = trimmed[first_word.len()..]
        .trim_start_matches([':', ',', '-', '.', ' '])
        .trim()
        .to_string();
    Some(super::Verdict { pass, rationale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aov::AovGraph;
    use crate::state::WorkflowState;

    #[test]
    fn fenced_empty_object_is_no_change() {
        let response = parse_workflow_response("```json\n{}\n```", ParseContext::Update).unwrap();
        assert!(matches!(response, PlannerResponse::NoChange));
    }

    #[test]
    fn task_map_with_aliases_parses_via_shim() {
        let text = r#"Here is the plan you asked for:
```json
{
  "A": {"subtask requirement": "collect data", "status": "not started",
        "next": ["B"], "agent": "collector"},
  "B": {"subtask requirement": "summarize", "status": "pending",
        "next": [], "prev": ["A"], "agent": "writer"}
}
```
Let me know if you need anything else."#;
        let response = parse_workflow_response(text, ParseContext::Initial).unwrap();
        let PlannerResponse::Candidates(graphs) = response else {
            panic!("expected candidates");
        };
        let graph = &graphs[0];
        assert_eq!(graph.vertex_count(), 2);
        assert!(graph.has_edge(&"A".into(), &"B".into()));
        assert_eq!(graph.requirement_of(&"A".into()), Some("collect data"));
        assert_eq!(graph.agent_of(&"B".into()).unwrap().name, "writer");
    }

    #[test]
    fn prose_without_braces_is_a_parse_error() {
        let err = parse_workflow_response("I could not produce a plan.", ParseContext::Initial)
            .unwrap_err();
        assert!(matches!(err, ParseError::NoJsonObject));
        assert_eq!(err.diagnosis(), "no JSON object found");
    }

    #[test]
    fn unbalanced_object_is_reported() {
        let err =
            parse_workflow_response("{\"A\": {\"requirement\": \"x\"", ParseContext::Initial)
                .unwrap_err();
        assert!(matches!(err, ParseError::Unbalanced));
    }

    #[test]
    fn cyclic_structure_is_rejected() {
        let text = r#"{
  "A": {"requirement": "a", "child": ["B"], "agent": "r"},
  "B": {"requirement": "b", "child": ["A"], "agent": "r"}
}"#;
        for context in [ParseContext::Initial, ParseContext::Update] {
            let err = parse_workflow_response(text, context).unwrap_err();
            assert!(matches!(err, ParseError::InvalidStructure(_)), "{context:?}");
        }
    }

    #[test]
    fn braces_inside_strings_do_not_confuse_extraction() {
        let text = r#"note the { in prose is ignored only after the object:
{"A": {"requirement": "use {curly} braces", "child": [], "agent": "r"}}"#;
        // the first '{' starts before the object; extraction balances it as
        // prose-opened object and fails to parse as JSON, so the parser
        // reports invalid JSON rather than panicking
        let result = parse_workflow_response(text, ParseContext::Initial);
        assert!(result.is_err());

        let clean = r#"{"A": {"requirement": "use {curly} braces", "child": [], "agent": "r"}}"#;
        let response = parse_workflow_response(clean, ParseContext::Initial).unwrap();
        assert!(matches!(response, PlannerResponse::Candidates(_)));
    }

    #[test]
    fn parser_accepts_its_own_serializer() {
        let g = AovGraph::from_parts(
            &[("A", "r", "a"), ("B", "r", "b"), ("C", "r", "c")],
            &[("A", "B"), ("A", "C")],
        );
        let mut state = WorkflowState::from_graph(&g, "goal").unwrap();
        state.mark_in_progress(&"A".into()).unwrap();
        state.mark_completed(&"A".into(), "done").unwrap();

        let response =
            parse_workflow_response(&state.to_json(), ParseContext::Update).unwrap();
        let PlannerResponse::Update(update) = response else {
            panic!("expected update");
        };
        assert_eq!(update.len(), 3);
        let a = update.get(&"A".into()).unwrap();
        assert_eq!(a.requirement, "a");
        assert_eq!(a.children.len(), 2);

        // merging the parsed structure back is a no-op on structure
        let mut copy = state.clone();
        copy.merge_update(&update).unwrap();
        assert_eq!(copy.to_graph(), state.to_graph());
        assert_eq!(copy.record(&"A".into()).unwrap().data.as_deref(), Some("done"));
    }

    #[test]
    fn verdict_parsing_handles_leading_token() {
        let no = parse_verdict("NO: missing the CSS file").unwrap();
        assert!(!no.pass);
        assert_eq!(no.rationale, "missing the CSS file");

        let yes = parse_verdict("yes - everything checks out").unwrap();
        assert!(yes.pass);
        assert_eq!(yes.rationale, "everything checks out");

        assert!(parse_verdict("maybe?").is_none());
        assert!(parse_verdict("").is_none());
    }
}
