//! The keyed runtime workflow record: per-subtask requirement, status,
//! output data, outstanding-parent counter, children, and agent role.
//!
//! State is mutated only by a single coordinator; counters are derived
//! bookkeeping and can always be recomputed from the children lists, which
//! are the authoritative structure.

mod json;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::aov::{validate, AgentRole, AovGraph, GraphError, SubtaskId};

pub use json::{parse_task_map, LoadedSnapshot, RawSubtask, SnapshotError};

/// Lifecycle status of a subtask.
///
/// Legal transitions: `not_started -> in_progress`,
/// `in_progress -> completed | failed`, and `failed -> not_started`
/// (re-queue after refinement).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskStatus {
    NotStarted,
    InProgress,
    Completed,
    Failed,
}

impl SubtaskStatus {
    pub fn token(self) -> &'static str {
        match self {
            SubtaskStatus::NotStarted => "not_started",
            SubtaskStatus::InProgress => "in_progress",
            SubtaskStatus::Completed => "completed",
            SubtaskStatus::Failed => "failed",
        }
    }

    /// Parses a status token, tolerating the spaced and hyphenated spellings
    /// that planner-produced documents use (`"not started"`, `"in-progress"`,
    /// `"pending"`).
    pub fn parse_token(token: &str) -> Option<Self> {
        let normalized = token.trim().to_ascii_lowercase().replace([' ', '-'], "_");
        match normalized.as_str() {
            "not_started" | "pending" => Some(SubtaskStatus::NotStarted),
            "in_progress" => Some(SubtaskStatus::InProgress),
            "completed" => Some(SubtaskStatus::Completed),
            "failed" => Some(SubtaskStatus::Failed),
            _ => None,
        }
    }

    fn can_transition_to(self, next: SubtaskStatus) -> bool {
        matches!(
            (self, next),
            (SubtaskStatus::NotStarted, SubtaskStatus::InProgress)
                | (SubtaskStatus::InProgress, SubtaskStatus::Completed)
                | (SubtaskStatus::InProgress, SubtaskStatus::Failed)
                | (SubtaskStatus::Failed, SubtaskStatus::NotStarted)
        )
    }
}

impl fmt::Display for SubtaskStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Runtime record of one subtask.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtaskRecord {
    pub requirement: String,
    pub status: SubtaskStatus,
    /// Output payload; non-null iff the subtask is completed. Opaque text:
    /// the engine never interprets it.
    pub data: Option<String>,
    /// Count of parents whose status is not `completed`.
    pub num_parents_not_completed: usize,
    pub children: Vec<SubtaskId>,
    /// Agent role name; the join key to executor agent instances.
    pub agent: String,
}

#[derive(Debug, Error)]
pub enum StateError {
    #[error("unknown subtask {0}")]
    UnknownSubtask(SubtaskId),
    #[error("illegal status transition for {id}: {from} -> {to}")]
    IllegalTransition {
        id: SubtaskId,
        from: SubtaskStatus,
        to: SubtaskStatus,
    },
    #[error("merge rejected: {0}")]
    MergeRejected(String),
    #[error(transparent)]
    InvalidGraph(#[from] GraphError),
}

/// A structural workflow update as proposed by a planner: requirements,
/// children, and agents, without data payloads. The empty update means
/// "no change".
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StructuralUpdate {
    entries: BTreeMap<SubtaskId, ProposedSubtask>,
}

/// One subtask of a [`StructuralUpdate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProposedSubtask {
    pub requirement: String,
    pub children: Vec<SubtaskId>,
    pub agent: String,
    /// Advisory; merge derives statuses from the current state.
    pub status: Option<SubtaskStatus>,
}

impl StructuralUpdate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<SubtaskId>, proposed: ProposedSubtask) {
        self.entries.insert(id.into(), proposed);
    }

    pub fn remove(&mut self, id: &SubtaskId) -> Option<ProposedSubtask> {
        self.entries.remove(id)
    }

    pub fn get(&self, id: &SubtaskId) -> Option<&ProposedSubtask> {
        self.entries.get(id)
    }

    pub fn get_mut(&mut self, id: &SubtaskId) -> Option<&mut ProposedSubtask> {
        self.entries.get_mut(id)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&SubtaskId, &ProposedSubtask)> {
        self.entries.iter()
    }

    pub fn contains(&self, id: &SubtaskId) -> bool {
        self.entries.contains_key(id)
    }

    /// Snapshot of a state as a structural update (statuses carried along,
    /// data dropped). Starting point for programmatic edits.
    pub fn from_state(state: &WorkflowState) -> Self {
        let mut update = StructuralUpdate::new();
        for (id, record) in &state.records {
            update.insert(
                id.clone(),
                ProposedSubtask {
                    requirement: record.requirement.clone(),
                    children: record.children.clone(),
                    agent: record.agent.clone(),
                    status: Some(record.status),
                },
            );
        }
        update
    }

    /// The dependency graph implied by the update.
    pub fn to_graph(&self) -> AovGraph {
        let mut graph = AovGraph::new();
        for (id, proposed) in &self.entries {
            graph.add_subtask(
                id.clone(),
                AgentRole::new(proposed.agent.clone()),
                proposed.requirement.clone(),
            );
        }
        for (id, proposed) in &self.entries {
            for child in &proposed.children {
                graph.add_edge(id.clone(), child.clone());
            }
        }
        graph
    }
}

/// What a merge changed; removals of completed subtasks carry their data so
/// the caller can retain it in the run log.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MergeReport {
    pub changed: bool,
    pub added: Vec<SubtaskId>,
    pub removed: Vec<SubtaskId>,
    /// Subtasks whose requirement text changed and were reset to
    /// `not_started` with data cleared.
    pub reset: Vec<SubtaskId>,
    /// Data of removed completed subtasks, for the run log.
    pub removed_completed: Vec<(SubtaskId, String)>,
    pub revision: u64,
}

impl MergeReport {
    pub fn summary(&self) -> String {
        format!(
            "added={:?} removed={:?} reset={:?}",
            self.added.iter().map(|i| i.as_str()).collect::<Vec<_>>(),
            self.removed.iter().map(|i| i.as_str()).collect::<Vec<_>>(),
            self.reset.iter().map(|i| i.as_str()).collect::<Vec<_>>(),
        )
    }
}

/// The mutable keyed workflow record for one goal.
#[derive(Debug, Clone)]
pub struct WorkflowState {
    goal: String,
    revision: u64,
    records: BTreeMap<SubtaskId, SubtaskRecord>,
    /// Ids in the order they completed; drives oldest-first truncation of
    /// prompt payloads. Rebuilt in id order when loading a snapshot.
    completion_order: Vec<SubtaskId>,
}

impl PartialEq for WorkflowState {
    fn eq(&self, other: &Self) -> bool {
        // completion_order is derived bookkeeping, not part of identity
        self.goal == other.goal && self.revision == other.revision && self.records == other.records
    }
}

impl WorkflowState {
    /// Builds the initial state of a valid graph: one `not_started` record
    /// per vertex, counters equal to in-degrees, children equal to
    /// out-neighbors, revision zero.
    pub fn from_graph(graph: &AovGraph, goal: impl Into<String>) -> Result<Self, StateError> {
        let report = validate(graph);
        if !report.is_ok() {
            return Err(StateError::InvalidGraph(GraphError::Invalid(report)));
        }
        let records = graph
            .vertices()
            .map(|id| {
                let record = SubtaskRecord {
                    requirement: graph.requirement_of(id).unwrap_or_default().to_string(),
                    status: SubtaskStatus::NotStarted,
                    data: None,
                    num_parents_not_completed: graph.in_degree(id),
                    children: graph.out_neighbors(id),
                    agent: graph.agent_of(id).map(|r| r.name.clone()).unwrap_or_default(),
                };
                (id.clone(), record)
            })
            .collect();
        Ok(WorkflowState {
            goal: goal.into(),
            revision: 0,
            records,
            completion_order: Vec::new(),
        })
    }

    pub(crate) fn from_records(
        goal: String,
        revision: u64,
        records: BTreeMap<SubtaskId, SubtaskRecord>,
    ) -> Self {
        let completion_order = records
            .iter()
            .filter(|(_, r)| r.status == SubtaskStatus::Completed)
            .map(|(id, _)| id.clone())
            .collect();
        WorkflowState {
            goal,
            revision,
            records,
            completion_order,
        }
    }

    pub fn goal(&self) -> &str {
        &self.goal
    }

    pub fn set_goal(&mut self, goal: impl Into<String>) {
        self.goal = goal.into();
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn records(&self) -> &BTreeMap<SubtaskId, SubtaskRecord> {
        &self.records
    }

    pub fn record(&self, id: &SubtaskId) -> Option<&SubtaskRecord> {
        self.records.get(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn status(&self, id: &SubtaskId) -> Option<SubtaskStatus> {
        self.records.get(id).map(|r| r.status)
    }

    /// Parents of `id`, derived from all children lists.
    pub fn parents_of(&self, id: &SubtaskId) -> Vec<SubtaskId> {
        self.records
            .iter()
            .filter(|(_, r)| r.children.contains(id))
            .map(|(pid, _)| pid.clone())
            .collect()
    }

    /// Ids that are `not_started` with zero uncompleted parents: the
    /// dispatch frontier.
    pub fn ready_set(&self) -> BTreeSet<SubtaskId> {
        self.records
            .iter()
            .filter(|(_, r)| {
                r.status == SubtaskStatus::NotStarted && r.num_parents_not_completed == 0
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    pub fn all_completed(&self) -> bool {
        self.records.values().all(|r| r.status == SubtaskStatus::Completed)
    }

    pub fn has_failed(&self) -> bool {
        self.records.values().any(|r| r.status == SubtaskStatus::Failed)
    }

    /// Failed subtasks that block at least one descendant (a child whose
    /// status is not `completed`).
    pub fn failed_blocking(&self) -> Vec<SubtaskId> {
        self.records
            .iter()
            .filter(|(_, r)| r.status == SubtaskStatus::Failed)
            .filter(|(_, r)| {
                r.children.iter().any(|c| {
                    self.records
                        .get(c)
                        .map(|cr| cr.status != SubtaskStatus::Completed)
                        .unwrap_or(false)
                })
            })
            .map(|(id, _)| id.clone())
            .collect()
    }

    /// Completed ids in completion order (oldest first).
    pub fn completed_in_order(&self) -> Vec<SubtaskId> {
        self.completion_order
            .iter()
            .filter(|id| {
                self.records
                    .get(*id)
                    .map(|r| r.status == SubtaskStatus::Completed)
                    .unwrap_or(false)
            })
            .cloned()
            .collect()
    }

    fn transition(&mut self, id: &SubtaskId, to: SubtaskStatus) -> Result<(), StateError> {
        let record = self
            .records
            .get_mut(id)
            .ok_or_else(|| StateError::UnknownSubtask(id.clone()))?;
        if !record.status.can_transition_to(to) {
            return Err(StateError::IllegalTransition {
                id: id.clone(),
                from: record.status,
                to,
            });
        }
        record.status = to;
        Ok(())
    }

    pub fn mark_in_progress(&mut self, id: &SubtaskId) -> Result<(), StateError> {
        self.transition(id, SubtaskStatus::InProgress)
    }

    /// Marks an in-progress subtask completed, stores its output, and
    /// decrements each child's outstanding-parent counter. Returns the
    /// children that became ready.
    pub fn mark_completed(
        &mut self,
        id: &SubtaskId,
        output: impl Into<String>,
    ) -> Result<Vec<SubtaskId>, StateError> {
        self.transition(id, SubtaskStatus::Completed)?;
        let record = self.records.get_mut(id).unwrap();
        record.data = Some(output.into());
        let children = record.children.clone();
        self.completion_order.push(id.clone());

        let mut newly_ready = Vec::new();
        for child in children {
            if let Some(child_record) = self.records.get_mut(&child) {
                debug_assert!(child_record.num_parents_not_completed > 0);
                child_record.num_parents_not_completed =
                    child_record.num_parents_not_completed.saturating_sub(1);
                if child_record.num_parents_not_completed == 0
                    && child_record.status == SubtaskStatus::NotStarted
                {
                    newly_ready.push(child);
                }
            }
        }
        Ok(newly_ready)
    }

    /// Marks an in-progress subtask failed. Counters are untouched, so
    /// downstream subtasks stay blocked; the reason belongs in the run log.
    pub fn mark_failed(&mut self, id: &SubtaskId, reason: &str) -> Result<(), StateError> {
        self.transition(id, SubtaskStatus::Failed)?;
        log::debug!("subtask {id} failed: {reason}");
        Ok(())
    }

    /// Re-queues a failed subtask (`failed -> not_started`).
    pub fn requeue(&mut self, id: &SubtaskId) -> Result<(), StateError> {
        self.transition(id, SubtaskStatus::NotStarted)?;
        self.records.get_mut(id).unwrap().data = None;
        Ok(())
    }

    /// Recomputes every outstanding-parent counter from the children lists.
    pub fn recompute_counters(&mut self) {
        let mut outstanding: BTreeMap<SubtaskId, usize> =
            self.records.keys().map(|id| (id.clone(), 0)).collect();
        for record in self.records.values() {
            if record.status == SubtaskStatus::Completed {
                continue;
            }
            for child in &record.children {
                if let Some(count) = outstanding.get_mut(child) {
                    *count += 1;
                }
            }
        }
        for (id, count) in outstanding {
            self.records.get_mut(&id).unwrap().num_parents_not_completed = count;
        }
    }

    /// True when every counter matches a recomputation from the children
    /// lists.
    pub fn counters_consistent(&self) -> bool {
        let mut copy = self.clone();
        copy.recompute_counters();
        copy.records
            .iter()
            .zip(self.records.iter())
            .all(|((_, a), (_, b))| a.num_parents_not_completed == b.num_parents_not_completed)
    }

    /// Reconstructs the dependency graph implied by the records. Personas
    /// are not stored in state, so roles come back with empty personas.
    pub fn to_graph(&self) -> AovGraph {
        let mut graph = AovGraph::new();
        for (id, record) in &self.records {
            graph.add_subtask(
                id.clone(),
                AgentRole::new(record.agent.clone()),
                record.requirement.clone(),
            );
        }
        for (id, record) in &self.records {
            for child in &record.children {
                graph.add_edge(id.clone(), child.clone());
            }
        }
        graph
    }

    /// Merges a structural update into the state.
    ///
    /// The empty update leaves the state untouched (same revision). Otherwise
    /// subtasks present in both keep their data and completed status unless
    /// the requirement text differs (then they reset to `not_started` with
    /// data cleared); subtasks only in the proposal are added `not_started`;
    /// subtasks only in the current state are removed; counters are
    /// recomputed from scratch; the revision is incremented.
    ///
    /// A cyclic or dangling proposal is rejected and the state is left
    /// unchanged.
    pub fn merge_update(&mut self, update: &StructuralUpdate) -> Result<MergeReport, StateError> {
        if update.is_empty() {
            return Ok(MergeReport {
                changed: false,
                revision: self.revision,
                ..MergeReport::default()
            });
        }

        let proposed_graph = update.to_graph();
        let report = validate(&proposed_graph);
        if !report.is_ok() {
            return Err(StateError::MergeRejected(report.summary()));
        }

        let mut merge = MergeReport {
            changed: true,
            ..MergeReport::default()
        };
        let mut new_records: BTreeMap<SubtaskId, SubtaskRecord> = BTreeMap::new();

        for (id, proposed) in update.entries() {
            let mut children: Vec<SubtaskId> = proposed.children.clone();
            children.sort();
            children.dedup();

            let (status, data) = match self.records.get(id) {
                Some(old) if old.requirement == proposed.requirement => {
                    (old.status, old.data.clone())
                }
                Some(_) => {
                    merge.reset.push(id.clone());
                    (SubtaskStatus::NotStarted, None)
                }
                None => {
                    merge.added.push(id.clone());
                    (SubtaskStatus::NotStarted, None)
                }
            };

            new_records.insert(
                id.clone(),
                SubtaskRecord {
                    requirement: proposed.requirement.clone(),
                    status,
                    data,
                    num_parents_not_completed: 0, // recomputed below
                    children,
                    agent: proposed.agent.clone(),
                },
            );
        }

        for (id, old) in &self.records {
            if !update.contains(id) {
                merge.removed.push(id.clone());
                if old.status == SubtaskStatus::Completed {
                    if let Some(data) = &old.data {
                        merge.removed_completed.push((id.clone(), data.clone()));
                    }
                }
            }
        }

        self.records = new_records;
        self.recompute_counters();
        let records = &self.records;
        self.completion_order.retain(|id| {
            records
                .get(id)
                .map(|r| r.status == SubtaskStatus::Completed)
                .unwrap_or(false)
        });
        self.revision += 1;
        merge.revision = self.revision;
        Ok(merge)
    }

    /// Canonical JSON snapshot of the state.
    pub fn to_json(&self) -> String {
        json::to_json(self)
    }

    /// Loads a snapshot. Counters in the document are advisory: mismatches
    /// are corrected with a warning. Structure (children lists) is
    /// authoritative.
    pub fn from_json(text: &str) -> Result<LoadedSnapshot, SnapshotError> {
        json::from_json(text)
    }
}
