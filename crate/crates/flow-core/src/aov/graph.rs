//! The AOV graph type and structural validation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifier of a subtask, unique within a graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SubtaskId(String);

impl SubtaskId {
    pub fn new(id: impl Into<String>) -> Self {
        SubtaskId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_valid(&self) -> bool {
        !self.0.trim().is_empty()
    }
}

impl fmt::Display for SubtaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SubtaskId {
    fn from(s: &str) -> Self {
        SubtaskId::new(s)
    }
}

impl From<String> for SubtaskId {
    fn from(s: String) -> Self {
        SubtaskId::new(s)
    }
}

/// Role executing a subset of subtasks. The name is the join key between a
/// graph and executor agent instances; the persona is a prompt fragment and
/// may be empty for simulated runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentRole {
    pub name: String,
    #[serde(default)]
    pub persona: String,
}

impl AgentRole {
    pub fn new(name: impl Into<String>) -> Self {
        AgentRole {
            name: name.into(),
            persona: String::new(),
        }
    }

    pub fn with_persona(name: impl Into<String>, persona: impl Into<String>) -> Self {
        AgentRole {
            name: name.into(),
            persona: persona.into(),
        }
    }
}

/// Immutable DAG of subtasks with dependency edges, agent-role labels, and
/// requirement texts.
///
/// Construction does not validate; run [`validate`] to obtain a report of
/// structural violations before handing a graph to leveling or metrics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AovGraph {
    vertices: BTreeSet<SubtaskId>,
    edges: BTreeSet<(SubtaskId, SubtaskId)>,
    agents: BTreeMap<SubtaskId, AgentRole>,
    requirements: BTreeMap<SubtaskId, String>,
}

impl AovGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a vertex with its role and requirement text, replacing any
    /// previous entry for the same id.
    pub fn add_subtask(
        &mut self,
        id: impl Into<SubtaskId>,
        role: AgentRole,
        requirement: impl Into<String>,
    ) {
        let id = id.into();
        self.vertices.insert(id.clone());
        self.agents.insert(id.clone(), role);
        self.requirements.insert(id, requirement.into());
    }

    /// Adds a directed dependency edge `from -> to`. Endpoints are not
    /// required to exist yet; validation reports dangling endpoints.
    pub fn add_edge(&mut self, from: impl Into<SubtaskId>, to: impl Into<SubtaskId>) {
        self.edges.insert((from.into(), to.into()));
    }

    pub fn remove_edge(&mut self, from: &SubtaskId, to: &SubtaskId) -> bool {
        self.edges.remove(&(from.clone(), to.clone()))
    }

    /// Builds a graph from `(id, role_name, requirement)` vertices and
    /// `(from, to)` edges. Convenient for fixtures.
    pub fn from_parts(vertices: &[(&str, &str, &str)], edges: &[(&str, &str)]) -> Self {
        let mut g = AovGraph::new();
        for (id, role, req) in vertices {
            g.add_subtask(*id, AgentRole::new(*role), *req);
        }
        for (from, to) in edges {
            g.add_edge(*from, *to);
        }
        g
    }

    pub fn vertices(&self) -> impl Iterator<Item = &SubtaskId> {
        self.vertices.iter()
    }

    pub fn edges(&self) -> impl Iterator<Item = &(SubtaskId, SubtaskId)> {
        self.edges.iter()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, id: &SubtaskId) -> bool {
        self.vertices.contains(id)
    }

    pub fn has_edge(&self, from: &SubtaskId, to: &SubtaskId) -> bool {
        self.edges.contains(&(from.clone(), to.clone()))
    }

    pub fn agent_of(&self, id: &SubtaskId) -> Option<&AgentRole> {
        self.agents.get(id)
    }

    pub fn requirement_of(&self, id: &SubtaskId) -> Option<&str> {
        self.requirements.get(id).map(String::as_str)
    }

    /// Direct successors of `id`, in id order.
    pub fn out_neighbors(&self, id: &SubtaskId) -> Vec<SubtaskId> {
        self.edges
            .iter()
            .filter(|(from, to)| from == id && self.vertices.contains(to))
            .map(|(_, to)| to.clone())
            .collect()
    }

    /// Direct predecessors of `id`, in id order.
    pub fn in_neighbors(&self, id: &SubtaskId) -> Vec<SubtaskId> {
        let mut preds: Vec<SubtaskId> = self
            .edges
            .iter()
            .filter(|(from, to)| to == id && self.vertices.contains(from))
            .map(|(from, _)| from.clone())
            .collect();
        preds.sort();
        preds
    }

    pub fn in_degree(&self, id: &SubtaskId) -> usize {
        self.in_neighbors(id).len()
    }

    pub fn out_degree(&self, id: &SubtaskId) -> usize {
        self.out_neighbors(id).len()
    }

    /// In-degree plus out-degree, counting only edges with both endpoints
    /// present.
    pub fn total_degree(&self, id: &SubtaskId) -> usize {
        self.in_degree(id) + self.out_degree(id)
    }

    /// All vertices reachable by following edges backwards from `id`
    /// (excluding `id` itself).
    pub fn ancestors_of(&self, id: &SubtaskId) -> BTreeSet<SubtaskId> {
        let mut seen = BTreeSet::new();
        let mut stack = self.in_neighbors(id);
        while let Some(v) = stack.pop() {
            if seen.insert(v.clone()) {
                stack.extend(self.in_neighbors(&v));
            }
        }
        seen
    }

    /// Vertices with no outgoing edges.
    pub fn sinks(&self) -> Vec<SubtaskId> {
        self.vertices
            .iter()
            .filter(|v| self.out_degree(v) == 0)
            .cloned()
            .collect()
    }
}

/// One structural violation found by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    /// A dependency cycle, listing one witness cycle in edge order.
    Cycle { witness: Vec<SubtaskId> },
    /// An edge endpoint that is not a vertex of the graph.
    DanglingEndpoint {
        from: SubtaskId,
        to: SubtaskId,
        missing: SubtaskId,
    },
    /// An edge from a vertex to itself.
    SelfLoop { id: SubtaskId },
    /// A vertex with no agent role, or an empty role name.
    MissingAgent { id: SubtaskId },
    /// A vertex with no requirement text, or an empty one.
    MissingRequirement { id: SubtaskId },
    /// An id that appeared more than once in an external document.
    /// Never produced for in-memory graphs (vertex sets cannot hold
    /// duplicates); raised by loaders that ingest keyed documents.
    DuplicateId { id: SubtaskId },
    /// An id that is empty or whitespace.
    EmptyId,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationIssue::Cycle { witness } => {
                let path: Vec<&str> = witness.iter().map(SubtaskId::as_str).collect();
                write!(f, "cycle: {}", path.join(" -> "))
            }
            ValidationIssue::DanglingEndpoint { from, to, missing } => {
                write!(f, "edge ({from}, {to}) references missing vertex {missing}")
            }
            ValidationIssue::SelfLoop { id } => write!(f, "self-loop on {id}"),
            ValidationIssue::MissingAgent { id } => write!(f, "no agent role for {id}"),
            ValidationIssue::MissingRequirement { id } => {
                write!(f, "missing or empty requirement for {id}")
            }
            ValidationIssue::DuplicateId { id } => write!(f, "duplicate id {id}"),
            ValidationIssue::EmptyId => write!(f, "empty subtask id"),
        }
    }
}

/// Outcome of structural validation. Empty report means the graph is
/// well-formed.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has_cycle(&self) -> bool {
        self.issues
            .iter()
            .any(|i| matches!(i, ValidationIssue::Cycle { .. }))
    }

    pub fn summary(&self) -> String {
        self.issues
            .iter()
            .map(|i| i.to_string())
            .collect::<Vec<_>>()
            .join("; ")
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            f.write_str("ok")
        } else {
            f.write_str(&self.summary())
        }
    }
}

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("invalid graph: {0}")]
    Invalid(ValidationReport),
}

/// Checks a graph for structural violations. Validation never aborts: it
/// reports every cycle witness, dangling endpoint, self-loop, missing agent,
/// and missing requirement it finds.
pub fn validate(graph: &AovGraph) -> ValidationReport {
    let mut issues = Vec::new();

    for id in &graph.vertices {
        if !id.is_valid() {
            issues.push(ValidationIssue::EmptyId);
        }
        match graph.agents.get(id) {
            Some(role) if !role.name.trim().is_empty() => {}
            _ => issues.push(ValidationIssue::MissingAgent { id: id.clone() }),
        }
        match graph.requirements.get(id) {
            Some(req) if !req.trim().is_empty() => {}
            _ => issues.push(ValidationIssue::MissingRequirement { id: id.clone() }),
        }
    }

    for (from, to) in &graph.edges {
        if from == to {
            issues.push(ValidationIssue::SelfLoop { id: from.clone() });
            continue;
        }
        for endpoint in [from, to] {
            if !graph.vertices.contains(endpoint) {
                issues.push(ValidationIssue::DanglingEndpoint {
                    from: from.clone(),
                    to: to.clone(),
                    missing: endpoint.clone(),
                });
            }
        }
    }

    if let Some(witness) = find_cycle(graph) {
        issues.push(ValidationIssue::Cycle { witness });
    }

    ValidationReport { issues }
}

/// Finds one cycle among edges whose endpoints both exist, via iterative DFS
/// with back-edge detection. Self-loops are reported separately.
fn find_cycle(graph: &AovGraph) -> Option<Vec<SubtaskId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Gray,
        Black,
    }

    let mut marks: BTreeMap<&SubtaskId, Mark> =
        graph.vertices.iter().map(|v| (v, Mark::White)).collect();

    for start in &graph.vertices {
        if marks[start] != Mark::White {
            continue;
        }
        // stack of (node, next-neighbor-index); path mirrors the gray chain
        let mut path: Vec<SubtaskId> = Vec::new();
        let mut stack: Vec<(SubtaskId, Vec<SubtaskId>, usize)> = Vec::new();
        marks.insert(start, Mark::Gray);
        path.push(start.clone());
        stack.push((start.clone(), graph.out_neighbors(start), 0));

        while let Some((node, neighbors, idx)) = stack.pop() {
            if idx < neighbors.len() {
                let next = neighbors[idx].clone();
                stack.push((node, neighbors, idx + 1));
                if next == *path.last().unwrap() {
                    continue; // self-loop, reported elsewhere
                }
                match marks.get(&next).copied() {
                    Some(Mark::Gray) => {
                        // back edge: cycle from the first occurrence of `next`
                        let pos = path.iter().position(|p| *p == next).unwrap();
                        return Some(path[pos..].to_vec());
                    }
                    Some(Mark::White) => {
                        marks.insert(graph.vertices.get(&next).unwrap(), Mark::Gray);
                        path.push(next.clone());
                        stack.push((next.clone(), graph.out_neighbors(&next), 0));
                    }
                    _ => {}
                }
            } else {
                marks.insert(graph.vertices.get(&node).unwrap(), Mark::Black);
                path.pop();
            }
        }
    }
    None
}
