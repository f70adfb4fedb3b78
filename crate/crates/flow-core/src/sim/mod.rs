//! Reliability simulation for failure propagation over workflow graphs.
//!
//! Two semantics are implemented side by side:
//!
//! - the *recursion model*: `P(v) = (1 - p_f) * prod over immediate
//!   predecessors of P(pred)`, which treats predecessor successes as
//!   independent events, and
//! - *trajectory semantics*: the exact joint model in which a subtask
//!   completes iff its own coin succeeds and every ancestor completed
//!   (evaluated by exhaustive outcome enumeration or Monte Carlo trials).
//!
//! The two agree on forests and diverge on DAGs with shared ancestors (the
//! diamond is the smallest example); both are reported rather than
//! adjudicated.

mod generate;
mod theorem;

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::aov::{topological_levels, AovGraph, GraphError, SubtaskId};

pub use generate::{random_dag, random_out_forest, DagSpec};
pub use theorem::{add_dependency, theorem1_experiment, Theorem1Pair, Theorem1Report};

/// Largest vertex count accepted by exhaustive enumeration (2^20 outcomes).
pub const ENUMERATION_CAP: usize = 20;

/// Independent per-subtask failure probability, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FailureModel {
    p_f: f64,
}

impl FailureModel {
    pub fn new(p_f: f64) -> Result<Self, SimError> {
        if !(p_f > 0.0 && p_f < 1.0) {
            return Err(SimError::InvalidFailureProbability(p_f));
        }
        Ok(FailureModel { p_f })
    }

    pub fn p_f(&self) -> f64 {
        self.p_f
    }

    pub fn success(&self) -> f64 {
        1.0 - self.p_f
    }
}

/// How to evaluate the expected number of completed subtasks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimMethod {
    /// Sum the recursion-model success probabilities.
    Recursion,
    /// Exact trajectory semantics over all 2^|V| coin outcomes.
    Enumeration,
    /// Seeded trajectory-semantics trials with a reported standard error.
    MonteCarlo { trials: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMethodKind {
    Recursion,
    Enumeration,
    MonteCarlo,
}

/// Result of one expected-completion evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    pub expected_completed: f64,
    pub per_node: BTreeMap<SubtaskId, f64>,
    pub method: SimMethodKind,
    pub trials: Option<u64>,
    pub std_error: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("failure probability {0} is outside (0, 1)")]
    InvalidFailureProbability(f64),
    #[error("enumeration supports at most {cap} vertices, got {n}")]
    EnumerationTooLarge { n: usize, cap: usize },
    #[error("at least one Monte Carlo trial is required")]
    NoTrials,
    #[error("unknown vertex {0}")]
    UnknownVertex(SubtaskId),
    #[error("edge ({0}, {1}) already present")]
    EdgeExists(SubtaskId, SubtaskId),
    #[error("adding edge ({0}, {1}) would create a cycle")]
    WouldCreateCycle(SubtaskId, SubtaskId),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Per-subtask success probabilities under the recursion model, memoized in
/// topological order. Sources get `1 - p_f`.
pub fn success_probabilities_recursion(
    graph: &AovGraph,
    model: &FailureModel,
) -> Result<BTreeMap<SubtaskId, f64>, SimError> {
    let plan = topological_levels(graph)?;
    let q = model.success();
    let mut prob: BTreeMap<SubtaskId, f64> = BTreeMap::new();
    for level in &plan.levels {
        for id in level {
            let product: f64 = graph.in_neighbors(id).iter().map(|p| prob[p]).product();
            prob.insert(id.clone(), q * product);
        }
    }
    Ok(prob)
}

/// Expected number of completed subtasks under the chosen method.
pub fn expected_completed(
    graph: &AovGraph,
    model: &FailureModel,
    method: SimMethod,
) -> Result<SimResult, SimError> {
    match method {
        SimMethod::Recursion => {
            let per_node = success_probabilities_recursion(graph, model)?;
            Ok(SimResult {
                expected_completed: per_node.values().sum(),
                per_node,
                method: SimMethodKind::Recursion,
                trials: None,
                std_error: None,
                seed: None,
            })
        }
        SimMethod::Enumeration => enumerate_outcomes(graph, model),
        SimMethod::MonteCarlo { trials, seed } => monte_carlo(graph, model, trials, seed),
    }
}

/// Index-based view of a graph for the trajectory evaluators: vertices in
/// topological order with predecessor index lists.
struct TopoView {
    ids: Vec<SubtaskId>,
    parents: Vec<Vec<usize>>,
}

impl TopoView {
    fn build(graph: &AovGraph) -> Result<Self, SimError> {
        let plan = topological_levels(graph)?;
        let ids: Vec<SubtaskId> = plan.levels.into_iter().flatten().collect();
        let index: BTreeMap<&SubtaskId, usize> =
            ids.iter().enumerate().map(|(i, id)| (id, i)).collect();
        let parents = ids
            .iter()
            .map(|id| graph.in_neighbors(id).iter().map(|p| index[p]).collect())
            .collect();
        Ok(TopoView { ids, parents })
    }
}

fn enumerate_outcomes(graph: &AovGraph, model: &FailureModel) -> Result<SimResult, SimError> {
    let n = graph.vertex_count();
    if n > ENUMERATION_CAP {
        return Err(SimError::EnumerationTooLarge {
            n,
            cap: ENUMERATION_CAP,
        });
    }
    let view = TopoView::build(graph)?;
    let q = model.success();
    let p = model.p_f();

    let mut expected = 0.0;
    let mut per_node = vec![0.0f64; n];
    for mask in 0u64..(1u64 << n) {
        let mut probability = 1.0;
        let mut completed: u64 = 0;
        let mut count = 0u32;
        for i in 0..n {
            let coin = (mask >> i) & 1 == 1;
            probability *= if coin { q } else { p };
            if coin && view.parents[i].iter().all(|&pi| (completed >> pi) & 1 == 1) {
                completed |= 1 << i;
                count += 1;
            }
        }
        expected += probability * count as f64;
        for (i, node_prob) in per_node.iter_mut().enumerate() {
            if (completed >> i) & 1 == 1 {
                *node_prob += probability;
            }
        }
    }

    Ok(SimResult {
        expected_completed: expected,
        per_node: view.ids.into_iter().zip(per_node).collect(),
        method: SimMethodKind::Enumeration,
        trials: None,
        std_error: None,
        seed: None,
    })
}

fn monte_carlo(
    graph: &AovGraph,
    model: &FailureModel,
    trials: u64,
    seed: u64,
) -> Result<SimResult, SimError> {
    if trials == 0 {
        return Err(SimError::NoTrials);
    }
    let view = TopoView::build(graph)?;
    let n = view.ids.len();
    let q = model.success();

    let mut sum = 0.0f64;
    let mut sum_sq = 0.0f64;
    let mut per_node = vec![0u64; n];
    let mut completed = vec![false; n];

    // Per-trial counter-based stream: one independent ChaCha stream per
    // trial, so results do not depend on evaluation order.
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(trial);
        let mut count = 0u64;
        for i in 0..n {
            let coin = rng.random::<f64>() < q;
            completed[i] = coin && view.parents[i].iter().all(|&pi| completed[pi]);
            if completed[i] {
                per_node[i] += 1;
                count += 1;
            }
        }
        sum += count as f64;
        sum_sq += (count * count) as f64;
    }

    let mean = sum / trials as f64;
    let std_error = if trials > 1 {
        let variance = (sum_sq - sum * sum / trials as f64) / (trials - 1) as f64;
        (variance.max(0.0) / trials as f64).sqrt()
    } else {
        0.0
    };

    Ok(SimResult {
        expected_completed: mean,
        per_node: view
            .ids
            .into_iter()
            .zip(per_node.into_iter().map(|c| c as f64 / trials as f64))
            .collect(),
        method: SimMethodKind::MonteCarlo,
        trials: Some(trials),
        std_error: Some(std_error),
        seed: Some(seed),
    })
}
