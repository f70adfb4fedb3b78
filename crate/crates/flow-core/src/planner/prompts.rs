//! Prompt construction from editable text templates with `{{task}}`,
//! `{{state}}`, and `{{format}}` placeholders.

use std::path::Path;

use serde_json::{json, Value};

use super::TaskSpec;
use crate::state::WorkflowState;

/// Output-format exemplar appended to planner prompts: the canonical task-map
/// schema plus the accepted aliases.
pub const FORMAT_EXEMPLAR: &str = r#"Respond with a single JSON object that maps each subtask id to a record:
{
  "Task_A": { "requirement": "...", "status": "not_started", "data": null,
              "num_parents_not_completed": 0, "child": ["Task_B"], "agent": "Agent_1" },
  "Task_B": { "requirement": "...", "status": "not_started", "data": null,
              "num_parents_not_completed": 1, "child": [], "agent": "Agent_2" }
}
"child" lists the ids of subtasks that depend on the task. The keys
"subtask requirement" (for "requirement") and "next" (for "child") are
accepted as aliases; a "prev" list is ignored."#;

/// Marker substituted for completed data dropped by the context budget.
pub const TRUNCATION_MARKER: &str = "[truncated]";

/// The three prompt templates. Defaults are compiled in; [`from_dir`] loads
/// editable copies (`init.txt`, `update.txt`, `verify.txt`).
///
/// [`from_dir`]: PromptTemplates::from_dir
#[derive(Debug, Clone)]
pub struct PromptTemplates {
    pub init: String,
    pub update: String,
    pub verify: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            init: include_str!("../../templates/init.txt").to_string(),
            update: include_str!("../../templates/update.txt").to_string(),
            verify: include_str!("../../templates/verify.txt").to_string(),
        }
    }
}

impl PromptTemplates {
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        Ok(PromptTemplates {
            init: std::fs::read_to_string(dir.join("init.txt"))?,
            update: std::fs::read_to_string(dir.join("update.txt"))?,
            verify: std::fs::read_to_string(dir.join("verify.txt"))?,
        })
    }
}

fn fill(template: &str, replacements: &[(&str, &str)]) -> String {
    let mut text = template.to_string();
    for (name, value) in replacements {
        text = text.replace(&format!("{{{{{name}}}}}"), value);
    }
    text
}

fn task_with_constraints(task: &TaskSpec) -> String {
    let mut text = task.requirement.clone();
    if !task.constraints.is_empty() {
        text.push_str("\n\nConstraints:");
        for constraint in &task.constraints {
            text.push_str("\n- ");
            text.push_str(constraint);
        }
    }
    text
}

/// Prompt asking for one candidate workflow for `task`.
pub fn build_init_prompt(task: &TaskSpec, templates: &PromptTemplates) -> String {
    fill(
        &templates.init,
        &[
            ("task", &task_with_constraints(task)),
            ("format", FORMAT_EXEMPLAR),
        ],
    )
}

/// Prompt asking for a structural update given the serialized state
/// (completed data included, truncated oldest-first past `context_budget`
/// characters).
pub fn build_update_prompt(
    task: &TaskSpec,
    state: &WorkflowState,
    templates: &PromptTemplates,
    context_budget: usize,
) -> String {
    fill(
        &templates.update,
        &[
            ("task", &task_with_constraints(task)),
            ("state", &render_state_for_prompt(state, context_budget)),
            ("format", FORMAT_EXEMPLAR),
        ],
    )
}

/// Prompt asking whether a completed subtask's output fulfils its
/// requirement.
pub fn build_verify_prompt(
    requirement: &str,
    data: &str,
    templates: &PromptTemplates,
) -> String {
    fill(&templates.verify, &[("task", requirement), ("state", data)])
}

/// Serializes the state for inclusion in a prompt. When the rendering
/// exceeds `budget` characters, completed data payloads are replaced by
/// [`TRUNCATION_MARKER`] oldest-first until it fits (or nothing is left to
/// truncate).
pub fn render_state_for_prompt(state: &WorkflowState, budget: usize) -> String {
    let mut truncated: Vec<_> = Vec::new();
    loop {
        let rendered = render_state(state, &truncated);
        if rendered.len() <= budget {
            return rendered;
        }
        let oldest_untruncated = state
            .completed_in_order()
            .into_iter()
            .find(|id| !truncated.contains(id));
        match oldest_untruncated {
            Some(id) => truncated.push(id),
            None => return rendered,
        }
    }
}

fn render_state(state: &WorkflowState, truncated: &[crate::aov::SubtaskId]) -> String {
    let mut tasks = serde_json::Map::new();
    for (id, record) in state.records() {
        let data = match &record.data {
            Some(_) if truncated.contains(id) => Value::String(TRUNCATION_MARKER.to_string()),
            Some(data) => Value::String(data.clone()),
            None => Value::Null,
        };
        tasks.insert(
            id.to_string(),
            json!({
                "requirement": record.requirement,
                "status": record.status.token(),
                "data": data,
                "num_parents_not_completed": record.num_parents_not_completed,
                "child": record.children,
                "agent": record.agent,
            }),
        );
    }
    let doc = json!({
        "goal": state.goal(),
        "revision": state.revision(),
        "tasks": tasks,
    });
    serde_json::to_string_pretty(&doc).expect("state rendering cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aov::AovGraph;

    fn sample_state() -> WorkflowState {
        let g = AovGraph::from_parts(
            &[("A", "writer", "write intro"), ("B", "writer", "write body")],
            &[("A", "B")],
        );
        WorkflowState::from_graph(&g, "write an article").unwrap()
    }

    #[test]
    fn init_prompt_carries_task_and_format() {
        let task = TaskSpec::new("build a gobang game with a naive AI");
        let prompt = build_init_prompt(&task, &PromptTemplates::default());
        assert!(prompt.contains("workflow planner"));
        assert!(prompt.contains("build a gobang game with a naive AI"));
        assert!(prompt.contains("\"child\""));
        assert!(prompt.contains("parallel"));
        assert!(!prompt.contains("{{"));
    }

    #[test]
    fn constraints_append_after_requirement() {
        let mut task = TaskSpec::new("design a site");
        let without = build_init_prompt(&task, &PromptTemplates::default());
        assert!(!without.contains("Constraints:"));

        task.constraints.push("use at most 3 agent roles".to_string());
        let with = build_init_prompt(&task, &PromptTemplates::default());
        let req_pos = with.find("design a site").unwrap();
        let clause_pos = with.find("use at most 3 agent roles").unwrap();
        assert!(clause_pos > req_pos);
    }

    #[test]
    fn update_prompt_embeds_completed_data() {
        let mut state = sample_state();
        state.mark_in_progress(&"A".into()).unwrap();
        state.mark_completed(&"A".into(), "the intro text").unwrap();

        let task = TaskSpec::new("write an article");
        let prompt =
            build_update_prompt(&task, &state, &PromptTemplates::default(), 24_000);
        assert!(prompt.contains("workflow updater"));
        assert!(prompt.contains("the intro text"));
        assert!(prompt.contains("Modify"));
        assert!(prompt.contains("Add"));
        assert!(prompt.contains("Remove"));
        assert!(prompt.contains("empty JSON object"));
    }

    #[test]
    fn fresh_state_still_produces_a_prompt() {
        let task = TaskSpec::new("write an article");
        let prompt =
            build_update_prompt(&task, &sample_state(), &PromptTemplates::default(), 24_000);
        assert!(prompt.contains("\"not_started\""));
    }

    #[test]
    fn oversized_state_truncates_oldest_completed_first() {
        let mut state = sample_state();
        state.mark_in_progress(&"A".into()).unwrap();
        state.mark_completed(&"A".into(), "x".repeat(500)).unwrap();
        state.mark_in_progress(&"B".into()).unwrap();
        state.mark_completed(&"B".into(), "y".repeat(500)).unwrap();

        let full = render_state_for_prompt(&state, 24_000);
        assert!(full.contains(&"x".repeat(500)));

        // budget forces only the older payload out
        let trimmed = render_state_for_prompt(&state, full.len() - 100);
        assert!(!trimmed.contains(&"x".repeat(500)));
        assert!(trimmed.contains(TRUNCATION_MARKER));
        assert!(trimmed.contains(&"y".repeat(500)));
    }

    #[test]
    fn templates_load_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["init.txt", "update.txt", "verify.txt"] {
            std::fs::write(dir.path().join(name), format!("custom {name}: {{{{task}}}}")).unwrap();
        }
        let templates = PromptTemplates::from_dir(dir.path()).unwrap();
        let prompt = build_init_prompt(&TaskSpec::new("T"), &templates);
        assert_eq!(prompt, "custom init.txt: T");
    }
}
