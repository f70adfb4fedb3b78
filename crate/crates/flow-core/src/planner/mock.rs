//! Deterministic fixture-driven planner for tests, simulations, and offline
//! runs.
//!
//! Candidate generation cycles through a fixed list of fixture graphs. The
//! repair action replaces every failed subtask with a fresh stand-in that
//! inherits its dependencies and dependents, mirroring a planner that adds
//! bridging subtasks to take over for bad ones. Completion verification
//! passes iff the output is present and is not the masking sentinel.

use std::collections::BTreeMap;

use super::{Planner, PlannerConfig, PlannerError, PlannerResponse, TaskSpec, Verdict};
use crate::aov::{AgentRole, AovGraph, SubtaskId};
use crate::state::{ProposedSubtask, StructuralUpdate, SubtaskRecord, SubtaskStatus, WorkflowState};

/// Output token that marks a masked/absent payload.
pub const MASK_SENTINEL: &str = "none";

/// Fixture-driven planner. The `attempt` index selects a candidate from the
/// fixture list round-robin, so K requests yield K (cycling) candidates.
#[derive(Debug, Clone)]
pub struct MockPlanner {
    candidates: Vec<AovGraph>,
}

impl MockPlanner {
    pub fn new(candidates: Vec<AovGraph>) -> Self {
        assert!(!candidates.is_empty(), "mock planner needs fixtures");
        MockPlanner { candidates }
    }

    pub fn single(graph: AovGraph) -> Self {
        MockPlanner::new(vec![graph])
    }

    /// The three four-subtask example workflows used throughout the tests:
    /// same vertices, different dependency shapes.
    pub fn paper_workflows() -> Self {
        MockPlanner::new(vec![
            Self::workflow_one(),
            Self::workflow_two(),
            Self::workflow_three(),
        ])
    }

    /// Dense shape: A->C, B->C, A->D, B->D, C->D.
    pub fn workflow_one() -> AovGraph {
        Self::four_vertex_fixture(&[("A", "C"), ("B", "C"), ("A", "D"), ("B", "D"), ("C", "D")])
    }

    /// Sparse shape: A->C, B->C, C->D.
    pub fn workflow_two() -> AovGraph {
        Self::four_vertex_fixture(&[("A", "C"), ("B", "C"), ("C", "D")])
    }

    /// Chain: A->B->C->D.
    pub fn workflow_three() -> AovGraph {
        Self::four_vertex_fixture(&[("A", "B"), ("B", "C"), ("C", "D")])
    }

    fn four_vertex_fixture(edges: &[(&str, &str)]) -> AovGraph {
        let mut graph = AovGraph::new();
        graph.add_subtask(
            "A",
            AgentRole::with_persona("writer", "You draft workflow components."),
            "Draft component A of the deliverable",
        );
        graph.add_subtask(
            "B",
            AgentRole::with_persona("writer", "You draft workflow components."),
            "Draft component B of the deliverable",
        );
        graph.add_subtask(
            "C",
            AgentRole::with_persona("builder", "You assemble drafted components."),
            "Assemble the drafted components",
        );
        graph.add_subtask(
            "D",
            AgentRole::with_persona("reviewer", "You review assembled work."),
            "Review and finalize the deliverable",
        );
        for (from, to) in edges {
            graph.add_edge(*from, *to);
        }
        graph
    }

    /// Builds the repair update: the full current structure with every
    /// failed subtask replaced by a fresh stand-in wired to the same parents
    /// and children. Returns `None` when nothing is failed.
    fn repair_update(state: &WorkflowState) -> Option<StructuralUpdate> {
        let failed: Vec<SubtaskId> = state
            .records()
            .iter()
            .filter(|(_, r)| r.status == SubtaskStatus::Failed)
            .map(|(id, _)| id.clone())
            .collect();
        if failed.is_empty() {
            return None;
        }

        // name the stand-ins first so children lists can be rewritten in one
        // pass, including failed subtasks that depend on each other
        let mut replacement_of: BTreeMap<SubtaskId, SubtaskId> = BTreeMap::new();
        for id in &failed {
            let mut candidate = format!("{id}_fix");
            let mut counter = 2;
            while state.records().contains_key(&SubtaskId::new(candidate.clone()))
                || replacement_of.values().any(|r| r.as_str() == candidate)
            {
                candidate = format!("{id}_fix{counter}");
                counter += 1;
            }
            replacement_of.insert(id.clone(), SubtaskId::new(candidate));
        }
        let rewire = |children: &[SubtaskId]| -> Vec<SubtaskId> {
            children
                .iter()
                .map(|c| replacement_of.get(c).unwrap_or(c).clone())
                .collect()
        };

        let mut update = StructuralUpdate::new();
        for (id, record) in state.records() {
            if let Some(replacement) = replacement_of.get(id) {
                update.insert(
                    replacement.clone(),
                    ProposedSubtask {
                        requirement: format!(
                            "Take over for the failed subtask '{id}' and produce its output: {}",
                            record.requirement
                        ),
                        children: rewire(&record.children),
                        agent: record.agent.clone(),
                        status: Some(SubtaskStatus::NotStarted),
                    },
                );
            } else {
                update.insert(
                    id.clone(),
                    ProposedSubtask {
                        requirement: record.requirement.clone(),
                        children: rewire(&record.children),
                        agent: record.agent.clone(),
                        status: Some(record.status),
                    },
                );
            }
        }
        Some(update)
    }
}

impl Planner for MockPlanner {
    fn generate_candidate(
        &self,
        _task: &TaskSpec,
        _config: &PlannerConfig,
        attempt: usize,
    ) -> Result<PlannerResponse, PlannerError> {
        let graph = self.candidates[attempt % self.candidates.len()].clone();
        Ok(PlannerResponse::Candidates(vec![graph]))
    }

    fn generate_update(
        &self,
        _task: &TaskSpec,
        state: &WorkflowState,
        _config: &PlannerConfig,
        _attempt: usize,
    ) -> Result<PlannerResponse, PlannerError> {
        match Self::repair_update(state) {
            Some(update) => Ok(PlannerResponse::Update(update)),
            None => Ok(PlannerResponse::NoChange),
        }
    }

    fn verify_completion(
        &self,
        _id: &SubtaskId,
        record: &SubtaskRecord,
    ) -> Result<Verdict, PlannerError> {
        match record.data.as_deref() {
            Some(data) if data != MASK_SENTINEL => Ok(Verdict {
                pass: true,
                rationale: "output present".to_string(),
            }),
            Some(_) => Ok(Verdict {
                pass: false,
                rationale: format!("output is the masking sentinel '{MASK_SENTINEL}'"),
            }),
            None => Ok(Verdict {
                pass: false,
                rationale: "no output recorded".to_string(),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidates_cycle_through_fixtures() {
        let planner = MockPlanner::paper_workflows();
        let config = PlannerConfig::default();
        let task = TaskSpec::new("t");
        let mut edge_counts = Vec::new();
        for attempt in 0..4 {
            let response = planner.generate_candidate(&task, &config, attempt).unwrap();
            let PlannerResponse::Candidates(graphs) = response else {
                panic!("expected candidates")
            };
            edge_counts.push(graphs[0].edge_count());
        }
        assert_eq!(edge_counts, vec![5, 3, 3, 5]);
    }

    #[test]
    fn healthy_state_yields_no_change() {
        let planner = MockPlanner::paper_workflows();
        let state = WorkflowState::from_graph(&MockPlanner::workflow_two(), "t").unwrap();
        let response = planner
            .generate_update(&TaskSpec::new("t"), &state, &PlannerConfig::default(), 0)
            .unwrap();
        assert!(matches!(response, PlannerResponse::NoChange));
    }

    #[test]
    fn repair_replaces_failed_subtask_and_unblocks_descendants() {
        let mut state = WorkflowState::from_graph(&MockPlanner::workflow_two(), "t").unwrap();
        for id in ["A", "B"] {
            state.mark_in_progress(&id.into()).unwrap();
            state.mark_completed(&id.into(), "ok").unwrap();
        }
        state.mark_in_progress(&"C".into()).unwrap();
        state.mark_failed(&"C".into(), "masked").unwrap();

        let update = MockPlanner::repair_update(&state).unwrap();
        assert!(!update.contains(&"C".into()));
        let fix = SubtaskId::new("C_fix");
        assert!(update.contains(&fix));
        assert_eq!(update.get(&fix).unwrap().children, vec![SubtaskId::new("D")]);
        // parents now point at the stand-in
        assert_eq!(update.get(&"A".into()).unwrap().children, vec![fix.clone()]);

        state.merge_update(&update).unwrap();
        assert!(state.ready_set().contains(&fix));
    }

    #[test]
    fn repair_stand_in_names_avoid_collisions() {
        let mut graph = MockPlanner::workflow_two();
        graph.add_subtask("C_fix", AgentRole::new("builder"), "already taken");
        let mut state = WorkflowState::from_graph(&graph, "t").unwrap();
        state.mark_in_progress(&"C".into()).unwrap();
        state.mark_failed(&"C".into(), "x").unwrap();

        let update = MockPlanner::repair_update(&state).unwrap();
        assert!(update.contains(&"C_fix2".into()));
    }

    #[test]
    fn parallel_failures_each_get_a_stand_in() {
        // A and B both feed C; both fail in the same wave
        let g = AovGraph::from_parts(
            &[("A", "r", "a"), ("B", "r", "b"), ("C", "r", "c")],
            &[("A", "C"), ("B", "C")],
        );
        let mut state = WorkflowState::from_graph(&g, "t").unwrap();
        for id in ["A", "B"] {
            state.mark_in_progress(&id.into()).unwrap();
            state.mark_failed(&id.into(), "x").unwrap();
        }

        let update = MockPlanner::repair_update(&state).unwrap();
        for fix in ["A_fix", "B_fix"] {
            assert!(update.contains(&fix.into()));
            assert_eq!(update.get(&fix.into()).unwrap().children, vec![SubtaskId::new("C")]);
        }

        state.merge_update(&update).unwrap();
        assert_eq!(state.ready_set().len(), 2);
        assert_eq!(state.record(&"C".into()).unwrap().num_parents_not_completed, 2);
        assert!(state.counters_consistent());
    }

    #[test]
    fn verification_rejects_sentinel_and_missing_output() {
        let planner = MockPlanner::paper_workflows();
        let record = |data: Option<&str>| SubtaskRecord {
            requirement: "r".into(),
            status: SubtaskStatus::Completed,
            data: data.map(String::from),
            num_parents_not_completed: 0,
            children: vec![],
            agent: "a".into(),
        };
        assert!(planner
            .verify_completion(&"X".into(), &record(Some("done(X)")))
            .unwrap()
            .pass);
        assert!(!planner
            .verify_completion(&"X".into(), &record(Some("none")))
            .unwrap()
            .pass);
        assert!(!planner.verify_completion(&"X".into(), &record(None)).unwrap().pass);
    }
}
