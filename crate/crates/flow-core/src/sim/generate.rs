//! Seeded random DAG and out-forest generators for simulation fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aov::{AgentRole, AovGraph};

/// Parameters of a seeded random DAG: vertices ranked `1..=n`, each forward
/// edge `(i, j)` with `i < j` included independently with `edge_probability`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DagSpec {
    pub n: usize,
    pub edge_probability: f64,
    pub seed: u64,
}

fn vertex_id(rank: usize, n: usize) -> String {
    let width = n.max(1).to_string().len();
    format!("t{rank:0width$}")
}

/// Generates the DAG described by `spec`. Vertex ids are zero-padded by rank
/// so lexicographic order matches rank order; acyclicity holds by
/// construction because edges only go from lower to higher rank.
pub fn random_dag(spec: &DagSpec) -> AovGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut graph = AovGraph::new();
    for rank in 1..=spec.n {
        let id = vertex_id(rank, spec.n);
        graph.add_subtask(
            id.clone(),
            AgentRole::new("worker"),
            format!("carry out step {id}"),
        );
    }
    for i in 1..=spec.n {
        for j in (i + 1)..=spec.n {
            if rng.random_bool(spec.edge_probability.clamp(0.0, 1.0)) {
                graph.add_edge(vertex_id(i, spec.n), vertex_id(j, spec.n));
            }
        }
    }
    graph
}

/// Generates a seeded random out-forest: every vertex has at most one
/// parent, so no vertex has shared ancestors. On such graphs the recursion
/// model and trajectory semantics coincide.
pub fn random_out_forest(n: usize, seed: u64) -> AovGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graph = AovGraph::new();
    for rank in 1..=n {
        let id = vertex_id(rank, n);
        graph.add_subtask(
            id.clone(),
            AgentRole::new("worker"),
            format!("carry out step {id}"),
        );
    }
    for rank in 2..=n {
        // attach to a uniformly random earlier vertex, or stay a root
        let choice = rng.random_range(0..rank);
        if choice > 0 {
            graph.add_edge(vertex_id(choice, n), vertex_id(rank, n));
        }
    }
    graph
}
