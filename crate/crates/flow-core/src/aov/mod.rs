//! Activity-on-vertex workflow graphs: types, validation, topological
//! leveling, modularity metrics, and candidate selection.

mod graph;
mod levels;
mod metrics;

pub use graph::{
    validate, AgentRole, AovGraph, GraphError, SubtaskId, ValidationIssue, ValidationReport,
};
pub use levels::{topological_levels, ExecutionPlan};
pub use metrics::{
    dependency_complexity, graph_metrics, parallelism_average, select_candidate,
    CandidateEvaluation, GraphMetrics, SelectionError, SelectionOutcome, METRIC_TIE_TOLERANCE,
};
