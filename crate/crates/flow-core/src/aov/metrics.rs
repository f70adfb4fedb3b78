//! Modularity metrics (parallelism average, dependency complexity) and
//! metric-based candidate selection.

use serde::Serialize;
use thiserror::Error;

use super::graph::{validate, AovGraph, GraphError, ValidationReport};
use super::levels::topological_levels;

/// Absolute tolerance under which two metric values count as tied.
pub const METRIC_TIE_TOLERANCE: f64 = 1e-9;

/// Summary metrics of a workflow graph.
///
/// `parallelism_avg` is the mean number of subtasks per level, which equals
/// `|V| / level_count`. `dependency_complexity` is the population standard
/// deviation of total vertex degree (in plus out). The empty graph gets all
/// zeros by convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GraphMetrics {
    pub parallelism_avg: f64,
    pub dependency_complexity: f64,
    pub level_count: usize,
    pub mean_degree: f64,
}

/// Mean subtasks per level of the earliest-start leveling: `|V| / T`.
pub fn parallelism_average(graph: &AovGraph) -> Result<f64, GraphError> {
    Ok(graph_metrics(graph)?.parallelism_avg)
}

/// Population standard deviation (divide by `|V|`) of total vertex degree.
pub fn dependency_complexity(graph: &AovGraph) -> Result<f64, GraphError> {
    Ok(graph_metrics(graph)?.dependency_complexity)
}

/// Computes all metrics of a valid graph in one pass.
pub fn graph_metrics(graph: &AovGraph) -> Result<GraphMetrics, GraphError> {
    if graph.is_empty() {
        log::warn!("metrics requested for an empty graph; defined as zero");
        return Ok(GraphMetrics {
            parallelism_avg: 0.0,
            dependency_complexity: 0.0,
            level_count: 0,
            mean_degree: 0.0,
        });
    }

    let plan = topological_levels(graph)?;
    let n = graph.vertex_count() as f64;
    let level_count = plan.level_count();

    let degrees: Vec<f64> = graph.vertices().map(|v| graph.total_degree(v) as f64).collect();
    let mean_degree = degrees.iter().sum::<f64>() / n;
    let variance = degrees.iter().map(|d| (d - mean_degree).powi(2)).sum::<f64>() / n;

    Ok(GraphMetrics {
        parallelism_avg: n / level_count as f64,
        dependency_complexity: variance.sqrt(),
        level_count,
        mean_degree,
    })
}

/// Metrics (or the validation report that disqualified a candidate) for one
/// entry of a selection.
#[derive(Debug, Clone, Serialize)]
pub struct CandidateEvaluation {
    pub index: usize,
    pub metrics: Option<GraphMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub issues: Option<ValidationReport>,
}

/// Result of [`select_candidate`]: the winning index into the original list
/// and per-candidate evaluations.
#[derive(Debug, Clone, Serialize)]
pub struct SelectionOutcome {
    pub winner: usize,
    pub evaluations: Vec<CandidateEvaluation>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("no candidates provided")]
    Empty,
    #[error("all {0} candidates are invalid")]
    AllInvalid(usize),
}

/// Selects the candidate with maximal parallelism average; among candidates
/// tied within [`METRIC_TIE_TOLERANCE`], the one with minimal dependency
/// complexity; remaining ties go to the lowest list index.
///
/// Invalid candidates are dropped with a warning before selection.
pub fn select_candidate(candidates: &[AovGraph]) -> Result<SelectionOutcome, SelectionError> {
    if candidates.is_empty() {
        return Err(SelectionError::Empty);
    }

    let mut evaluations = Vec::with_capacity(candidates.len());
    let mut warnings = Vec::new();
    let mut best: Option<(usize, GraphMetrics)> = None;

    for (index, graph) in candidates.iter().enumerate() {
        let report = validate(graph);
        if !report.is_ok() {
            warnings.push(format!("candidate {index} dropped: {}", report.summary()));
            evaluations.push(CandidateEvaluation {
                index,
                metrics: None,
                issues: Some(report),
            });
            continue;
        }
        if graph.is_empty() {
            warnings.push(format!("candidate {index} is empty; metrics default to zero"));
        }
        let metrics = graph_metrics(graph).expect("validated graph");
        evaluations.push(CandidateEvaluation {
            index,
            metrics: Some(metrics),
            issues: None,
        });

        let better = match &best {
            None => true,
            Some((_, current)) => {
                if metrics.parallelism_avg > current.parallelism_avg + METRIC_TIE_TOLERANCE {
                    true
                } else if (metrics.parallelism_avg - current.parallelism_avg).abs()
                    <= METRIC_TIE_TOLERANCE
                {
                    metrics.dependency_complexity
                        < current.dependency_complexity - METRIC_TIE_TOLERANCE
                } else {
                    false
                }
            }
        };
        if better {
            best = Some((index, metrics));
        }
    }

    match best {
        Some((winner, _)) => Ok(SelectionOutcome {
            winner,
            evaluations,
            warnings,
        }),
        None => Err(SelectionError::AllInvalid(candidates.len())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aov::graph::AovGraph;

    fn workflow_one() -> AovGraph {
        AovGraph::from_parts(
            &[("A", "r", "a"), ("B", "r", "b"), ("C", "r", "c"), ("D", "r", "d")],
            &[("A", "C"), ("B", "C"), ("A", "D"), ("B", "D"), ("C", "D")],
        )
    }

    fn workflow_two() -> AovGraph {
        AovGraph::from_parts(
            &[("A", "r", "a"), ("B", "r", "b"), ("C", "r", "c"), ("D", "r", "d")],
            &[("A", "C"), ("B", "C"), ("C", "D")],
        )
    }

    fn workflow_three() -> AovGraph {
        AovGraph::from_parts(
            &[("A", "r", "a"), ("B", "r", "b"), ("C", "r", "c"), ("D", "r", "d")],
            &[("A", "B"), ("B", "C"), ("C", "D")],
        )
    }

    #[test]
    fn workflow_one_metrics() {
        let m = graph_metrics(&workflow_one()).unwrap();
        assert!((m.parallelism_avg - 4.0 / 3.0).abs() < 1e-12);
        // degrees (2, 2, 3, 3): mean 2.5, population sd 0.5
        assert!((m.dependency_complexity - 0.5).abs() < 1e-12);
        assert_eq!(m.level_count, 3);
        assert!((m.mean_degree - 2.5).abs() < 1e-12);
    }

    #[test]
    fn workflow_two_metrics() {
        let m = graph_metrics(&workflow_two()).unwrap();
        assert!((m.parallelism_avg - 4.0 / 3.0).abs() < 1e-12);
        // degrees (1, 1, 3, 1): mean 1.5, population sd sqrt(0.75)
        assert!((m.dependency_complexity - 0.75f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.level_count, 3);
    }

    #[test]
    fn chain_metrics() {
        let m = graph_metrics(&workflow_three()).unwrap();
        assert!((m.parallelism_avg - 1.0).abs() < 1e-12);
        // degrees (1, 2, 2, 1): mean 1.5, population sd 0.5
        assert!((m.dependency_complexity - 0.5).abs() < 1e-12);
        assert_eq!(m.level_count, 4);
    }

    #[test]
    fn isolated_vertices_have_zero_complexity() {
        let g = AovGraph::from_parts(
            &[("A", "r", "a"), ("B", "r", "b"), ("C", "r", "c"), ("D", "r", "d")],
            &[],
        );
        let m = graph_metrics(&g).unwrap();
        assert_eq!(m.dependency_complexity, 0.0);
        assert_eq!(m.parallelism_avg, 4.0);
        assert_eq!(m.level_count, 1);
    }

    #[test]
    fn empty_graph_metrics_are_zero() {
        let m = graph_metrics(&AovGraph::new()).unwrap();
        assert_eq!(m.parallelism_avg, 0.0);
        assert_eq!(m.dependency_complexity, 0.0);
        assert_eq!(m.level_count, 0);
    }

    #[test]
    fn selection_prefers_low_complexity_among_parallelism_ties() {
        // metrics: W1 (4/3, 0.5), W2 (4/3, 0.866), W3 (1.0, 0.5)
        let outcome =
            select_candidate(&[workflow_one(), workflow_two(), workflow_three()]).unwrap();
        assert_eq!(outcome.winner, 0);
    }

    #[test]
    fn single_candidate_wins_trivially() {
        let outcome = select_candidate(&[workflow_three()]).unwrap();
        assert_eq!(outcome.winner, 0);
    }

    #[test]
    fn parallelism_dominates_complexity() {
        // chain (P=1.0, low C) loses to isolated vertices (P=4.0, C=0) and to
        // any higher-parallelism graph regardless of its complexity.
        let wide = AovGraph::from_parts(
            &[("A", "r", "a"), ("B", "r", "b"), ("C", "r", "c"), ("D", "r", "d")],
            &[("A", "B"), ("A", "C"), ("A", "D")],
        );
        // wide: levels {A},{B,C,D} -> P=2.0; degrees (3,1,1,1) -> C = sqrt(0.75)
        let outcome = select_candidate(&[workflow_three(), wide]).unwrap();
        assert_eq!(outcome.winner, 1);
    }

    #[test]
    fn invalid_candidates_are_dropped_with_warning() {
        let mut cyclic = workflow_three();
        cyclic.add_edge("D", "A");
        let outcome = select_candidate(&[cyclic.clone(), workflow_two()]).unwrap();
        assert_eq!(outcome.winner, 1);
        assert_eq!(outcome.warnings.len(), 1);
        assert!(outcome.evaluations[0].metrics.is_none());

        let err = select_candidate(&[cyclic]).unwrap_err();
        assert!(matches!(err, SelectionError::AllInvalid(1)));
    }

    #[test]
    fn exact_ties_break_by_index() {
        let outcome = select_candidate(&[workflow_two(), workflow_two()]).unwrap();
        assert_eq!(outcome.winner, 0);
    }
}
