//! Edge-addition experiment: adding one dependency strictly lowers the
//! recursion-model expectation, and the drop equals
//! `P_A(v*) * (1 - P_A(b))`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::generate::{random_dag, DagSpec};
use super::{
    expected_completed, success_probabilities_recursion, FailureModel, SimError, SimMethod,
};
use crate::aov::{AovGraph, SubtaskId};

/// Returns a copy of `graph` with the extra dependency edge `(b, v_star)`.
///
/// Rejected when either endpoint is unknown, the edge is already present, or
/// adding it would create a cycle.
pub fn add_dependency(
    graph: &AovGraph,
    b: &SubtaskId,
    v_star: &SubtaskId,
) -> Result<AovGraph, SimError> {
    for id in [b, v_star] {
        if !graph.contains(id) {
            return Err(SimError::UnknownVertex(id.clone()));
        }
    }
    if graph.has_edge(b, v_star) {
        return Err(SimError::EdgeExists(b.clone(), v_star.clone()));
    }
    // a cycle appears iff v_star already reaches b
    if b == v_star || graph.ancestors_of(b).contains(v_star) {
        return Err(SimError::WouldCreateCycle(b.clone(), v_star.clone()));
    }
    let mut extended = graph.clone();
    extended.add_edge(b.clone(), v_star.clone());
    Ok(extended)
}

/// One `(A, B = A + edge)` comparison.
#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Pair {
    pub pair: usize,
    pub n: usize,
    pub p_f: f64,
    pub b: SubtaskId,
    pub v_star: SubtaskId,
    pub e_rec_a: f64,
    pub e_rec_b: f64,
    /// `e_rec_a - e_rec_b`.
    pub delta: f64,
    /// The closed form `P_A(v*) * (1 - P_A(b))`.
    pub delta_identity: f64,
    pub mc_a: Option<f64>,
    pub mc_b: Option<f64>,
    pub mc_se_a: Option<f64>,
    pub mc_se_b: Option<f64>,
    /// Whether `b` already reached `v_star` in A. When it did, trajectory
    /// semantics are unchanged by the new edge while the recursion model
    /// still drops strictly.
    pub b_was_ancestor: bool,
    /// Set when the recursion model failed the strict inequality.
    pub recursion_violation: bool,
    /// Set when, with `b` not an ancestor, the Monte Carlo estimates
    /// contradict the expected ordering beyond four combined standard
    /// errors. Informational.
    pub trajectory_flag: bool,
}

/// Outcome of [`theorem1_experiment`].
#[derive(Debug, Clone, Serialize)]
pub struct Theorem1Report {
    pub pairs: Vec<Theorem1Pair>,
    /// Pair indices that had no admissible edge, with a note.
    pub skipped: Vec<(usize, String)>,
    pub p_f: f64,
    pub trials: u64,
}

impl Theorem1Report {
    pub fn recursion_violations(&self) -> usize {
        self.pairs.iter().filter(|p| p.recursion_violation).count()
    }

    pub fn max_identity_gap(&self) -> f64 {
        self.pairs
            .iter()
            .map(|p| (p.delta - p.delta_identity).abs())
            .fold(0.0, f64::max)
    }

    /// CSV rows: `pair, n, p_f, E_rec_A, E_rec_B, delta, mc_A, mc_B,
    /// mc_se_A, mc_se_B, b_was_ancestor`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(writer);
        out.write_record([
            "pair",
            "n",
            "p_f",
            "E_rec_A",
            "E_rec_B",
            "delta",
            "mc_A",
            "mc_B",
            "mc_se_A",
            "mc_se_B",
            "b_was_ancestor",
        ])?;
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for p in &self.pairs {
            out.write_record([
                p.pair.to_string(),
                p.n.to_string(),
                format!("{}", p.p_f),
                format!("{:.12}", p.e_rec_a),
                format!("{:.12}", p.e_rec_b),
                format!("{:.12}", p.delta),
                fmt(p.mc_a),
                fmt(p.mc_b),
                fmt(p.mc_se_a),
                fmt(p.mc_se_b),
                p.b_was_ancestor.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut lines = Vec::new();
        lines.push(format!(
            "edge-addition experiment: {} pairs, {} skipped, p_f = {}",
            self.pairs.len(),
            self.skipped.len(),
            self.p_f
        ));
        lines.push(format!(
            "recursion model: {} strictness violations, max |delta - P_A(v*)(1-P_A(b))| = {:.3e}",
            self.recursion_violations(),
            self.max_identity_gap()
        ));
        let ancestors = self.pairs.iter().filter(|p| p.b_was_ancestor).count();
        lines.push(format!(
            "{ancestors} pairs had b already an ancestor of v* (trajectory value unchanged there)"
        ));
        if self.trials > 0 {
            let flagged = self.pairs.iter().filter(|p| p.trajectory_flag).count();
            lines.push(format!(
                "monte carlo ({} trials/pair): {flagged} trajectory ordering flags",
                self.trials
            ));
        }
        lines.join("\n")
    }
}

/// Admissible new edges `(b, v*)`: `v*` is a sink of `graph` (so the added
/// edge has no downstream attenuation and the proof's delta identity is
/// exact), the edge is absent, and `b != v*`.
fn admissible_edges(graph: &AovGraph) -> Vec<(SubtaskId, SubtaskId)> {
    let mut edges = Vec::new();
    for v_star in graph.sinks() {
        for b in graph.vertices() {
            if *b != v_star && !graph.has_edge(b, &v_star) {
                edges.push((b.clone(), v_star.clone()));
            }
        }
    }
    edges
}

/// For each of `pairs` seeded random DAGs, picks a uniformly random
/// admissible new edge, forms workflow B via [`add_dependency`], and
/// compares the recursion-model expectations (plus Monte Carlo trajectory
/// estimates when `trials > 0`).
pub fn theorem1_experiment(
    spec: &DagSpec,
    model: &FailureModel,
    pairs: usize,
    trials: u64,
) -> Result<Theorem1Report, SimError> {
    let mut report = Theorem1Report {
        pairs: Vec::with_capacity(pairs),
        skipped: Vec::new(),
        p_f: model.p_f(),
        trials,
    };

    for pair in 0..pairs {
        let pair_seed = spec
            .seed
            .wrapping_add((pair as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let graph_a = random_dag(&DagSpec {
            n: spec.n,
            edge_probability: spec.edge_probability,
            seed: pair_seed,
        });

        let candidates = admissible_edges(&graph_a);
        if candidates.is_empty() {
            report.skipped.push((
                pair,
                format!("no admissible edge for seed {pair_seed} (order is complete)"),
            ));
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(pair_seed ^ 0x5DEE_CE66);
        let (b, v_star) = candidates[rng.random_range(0..candidates.len())].clone();

        let graph_b = add_dependency(&graph_a, &b, &v_star)?;
        let prob_a = success_probabilities_recursion(&graph_a, model)?;
        let prob_b = success_probabilities_recursion(&graph_b, model)?;
        let e_rec_a: f64 = prob_a.values().sum();
        let e_rec_b: f64 = prob_b.values().sum();
        let delta = e_rec_a - e_rec_b;
        let delta_identity = prob_a[&v_star] * (1.0 - prob_a[&b]);
        let b_was_ancestor = graph_a.ancestors_of(&v_star).contains(&b);

        let (mut mc_a, mut mc_b, mut mc_se_a, mut mc_se_b) = (None, None, None, None);
        let mut trajectory_flag = false;
        if trials > 0 {
            let run = |g: &AovGraph, salt: u64| {
                expected_completed(
                    g,
                    model,
                    SimMethod::MonteCarlo {
                        trials,
                        seed: pair_seed.wrapping_add(salt),
                    },
                )
            };
            let sim_a = run(&graph_a, 1)?;
            let sim_b = run(&graph_b, 2)?;
            if !b_was_ancestor {
                let spread = 4.0 * (sim_a.std_error.unwrap_or(0.0) + sim_b.std_error.unwrap_or(0.0));
                trajectory_flag =
                    sim_a.expected_completed < sim_b.expected_completed - spread;
            }
            mc_a = Some(sim_a.expected_completed);
            mc_b = Some(sim_b.expected_completed);
            mc_se_a = sim_a.std_error;
            mc_se_b = sim_b.std_error;
        }

        report.pairs.push(Theorem1Pair {
            pair,
            n: spec.n,
            p_f: model.p_f(),
            b,
            v_star,
            e_rec_a,
            e_rec_b,
            delta,
            delta_identity,
            mc_a,
            mc_b,
            mc_se_a,
            mc_se_b,
            b_was_ancestor,
            recursion_violation: !(e_rec_a > e_rec_b),
            trajectory_flag,
        });
    }

    Ok(report)
}
