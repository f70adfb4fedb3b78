//! Workflow orchestration over activity-on-vertex (AOV) graphs.
//!
//! A workflow is a DAG whose vertices are subtasks and whose edges are
//! precedence constraints. The crate plans such workflows (candidate
//! generation and metric-based selection), executes independent subtasks
//! concurrently with planner-driven structural refinement on failure, and
//! ships a reliability simulator for the failure-propagation model behind
//! the selection metrics.
//!
//! Module map:
//!
//! - [`aov`]: the graph type, validation, topological leveling, parallelism
//!   and dependency-complexity metrics, candidate selection.
//! - [`state`]: the keyed runtime workflow record, its JSON snapshot format,
//!   status bookkeeping, and structural-update merging.
//! - [`planner`]: the planning contract (initial candidates, updates,
//!   completion verification), prompt construction, response parsing, and a
//!   deterministic mock planner.
//! - [`llm`]: provider-agnostic chat-completion client (OpenAI-compatible
//!   wire protocol) with retry and backoff.
//! - [`executor`]: the run loop — concurrent dispatch, agent cloning, fault
//!   injection, and the two refinement strategies.
//! - [`sim`]: success-probability recursion, exact outcome enumeration,
//!   Monte Carlo trials, random DAG generation, and the edge-addition
//!   experiment.
//! - [`cli`]: command implementations behind the `flow` binary.

pub mod aov;
pub mod llm;
pub mod planner;
pub mod sim;
pub mod state;

pub use aov::{AgentRole, AovGraph, ExecutionPlan, GraphMetrics, SubtaskId};
pub use state::{SubtaskRecord, SubtaskStatus, WorkflowState};
