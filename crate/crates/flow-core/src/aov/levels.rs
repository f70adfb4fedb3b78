//! Topological leveling: earliest-start placement by longest path from
//! sources.

use std::collections::BTreeMap;

use serde::Serialize;

use super::graph::{validate, AovGraph, GraphError, SubtaskId};

/// Partition of a graph's subtasks into ordered levels of mutually
/// independent subtasks, plus a linearization consistent with the levels.
///
/// Level of `v` is one plus the length of the longest directed path ending
/// at `v`, so the level count equals the critical-path length and every edge
/// crosses levels strictly forward.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionPlan {
    /// Levels in execution order; ids within a level sorted lexicographically.
    pub levels: Vec<Vec<SubtaskId>>,
    /// Position of each subtask in `1..=|V|`, consistent with the levels;
    /// ties within a level broken by id order.
    pub order: BTreeMap<SubtaskId, usize>,
}

impl ExecutionPlan {
    pub fn level_count(&self) -> usize {
        self.levels.len()
    }

    /// Zero-based index of the level containing `id`.
    pub fn level_index(&self, id: &SubtaskId) -> Option<usize> {
        self.levels.iter().position(|level| level.contains(id))
    }
}

/// Computes the earliest-start execution plan of a valid graph.
///
/// Rejects cyclic or otherwise invalid graphs with the validation report.
pub fn topological_levels(graph: &AovGraph) -> Result<ExecutionPlan, GraphError> {
    let report = validate(graph);
    if !report.is_ok() {
        return Err(GraphError::Invalid(report));
    }

    // Kahn's algorithm over in-degrees, tracking longest-path depth.
    let mut depth: BTreeMap<SubtaskId, usize> = BTreeMap::new();
    let mut indegree: BTreeMap<SubtaskId, usize> =
        graph.vertices().map(|v| (v.clone(), graph.in_degree(v))).collect();

    let mut frontier: Vec<SubtaskId> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(v, _)| v.clone())
        .collect();
    for v in &frontier {
        depth.insert(v.clone(), 0);
    }

    while let Some(v) = frontier.pop() {
        let v_depth = depth[&v];
        for child in graph.out_neighbors(&v) {
            let entry = depth.entry(child.clone()).or_insert(0);
            *entry = (*entry).max(v_depth + 1);
            let d = indegree.get_mut(&child).unwrap();
            *d -= 1;
            if *d == 0 {
                frontier.push(child);
            }
        }
    }

    let max_depth = depth.values().copied().max();
    let mut levels: Vec<Vec<SubtaskId>> = match max_depth {
        Some(d) => vec![Vec::new(); d + 1],
        None => Vec::new(),
    };
    for (v, d) in &depth {
        levels[*d].push(v.clone());
    }
    // BTreeMap iteration already yields ids in order within each level.

    let mut order = BTreeMap::new();
    let mut position = 0usize;
    for level in &levels {
        for id in level {
            position += 1;
            order.insert(id.clone(), position);
        }
    }

    Ok(ExecutionPlan { levels, order })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aov::graph::AovGraph;

    fn ids(level: &[SubtaskId]) -> Vec<&str> {
        level.iter().map(SubtaskId::as_str).collect()
    }

    /// Workflow with dependencies A->C, B->C, A->D, B->D, C->D.
    pub(crate) fn workflow_one() -> AovGraph {
        AovGraph::from_parts(
            &[
                ("A", "writer", "produce part A"),
                ("B", "writer", "produce part B"),
                ("C", "builder", "combine A and B"),
                ("D", "reviewer", "finalize the result"),
            ],
            &[("A", "C"), ("B", "C"), ("A", "D"), ("B", "D"), ("C", "D")],
        )
    }

    #[test]
    fn workflow_one_levels_match_longest_paths() {
        let plan = topological_levels(&workflow_one()).unwrap();
        assert_eq!(plan.level_count(), 3);
        assert_eq!(ids(&plan.levels[0]), vec!["A", "B"]);
        assert_eq!(ids(&plan.levels[1]), vec!["C"]);
        assert_eq!(ids(&plan.levels[2]), vec!["D"]);
    }

    #[test]
    fn chain_of_four_has_one_subtask_per_level() {
        let g = AovGraph::from_parts(
            &[("A", "r", "a"), ("B", "r", "b"), ("C", "r", "c"), ("D", "r", "d")],
            &[("A", "B"), ("B", "C"), ("C", "D")],
        );
        let plan = topological_levels(&g).unwrap();
        assert_eq!(plan.level_count(), 4);
        for level in &plan.levels {
            assert_eq!(level.len(), 1);
        }
    }

    #[test]
    fn isolated_vertices_share_one_level() {
        let g = AovGraph::from_parts(
            &[("A", "r", "a"), ("B", "r", "b"), ("C", "r", "c"), ("D", "r", "d")],
            &[],
        );
        let plan = topological_levels(&g).unwrap();
        assert_eq!(plan.level_count(), 1);
        assert_eq!(plan.levels[0].len(), 4);
    }

    #[test]
    fn order_is_consistent_with_levels_and_edges() {
        let g = workflow_one();
        let plan = topological_levels(&g).unwrap();
        let positions: Vec<usize> = plan.order.values().copied().collect();
        let mut sorted = positions.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (1..=g.vertex_count()).collect::<Vec<_>>());
        for (from, to) in g.edges() {
            assert!(plan.order[from] < plan.order[to], "{from} before {to}");
            assert!(plan.level_index(from).unwrap() < plan.level_index(to).unwrap());
        }
    }

    #[test]
    fn cyclic_graph_is_rejected() {
        let g = AovGraph::from_parts(
            &[("A", "r", "a"), ("B", "r", "b")],
            &[("A", "B"), ("B", "A")],
        );
        assert!(topological_levels(&g).is_err());
    }

    #[test]
    fn empty_graph_yields_empty_plan() {
        let plan = topological_levels(&AovGraph::new()).unwrap();
        assert_eq!(plan.level_count(), 0);
        assert!(plan.order.is_empty());
    }
}
