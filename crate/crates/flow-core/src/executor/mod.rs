//! The run loop: plans the workflow, dispatches ready subtasks to concurrent
//! workers, double-checks completions, injects faults for ablations, and
//! refines the workflow through the planner when needed.
//!
//! A single coordinator thread owns the state and the run log. Workers and
//! (in the concurrent strategy) planner calls run on their own threads and
//! report through a channel, so every status transition and merge is
//! serialized through the coordinator.

mod backend;
mod inject;
mod runlog;

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::AssertUnwindSafe;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::aov::{AgentRole, SubtaskId};
use crate::llm::{TokenUsage, UsageMeter};
use crate::planner::{
    plan_initial, propose_update, verify_completion, Planner, PlannerConfig, TaskSpec,
    UpdateDecision,
};
use crate::state::{SubtaskRecord, SubtaskStatus, WorkflowState};

pub use backend::{AgentBackend, AgentInstance, LlmBackend, StubBackend};
pub use inject::{FaultInjector, DEFAULT_SENTINEL};
pub use runlog::{EventKind, RunEvent, RunLog};

/// When the planner is consulted for refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateStrategy {
    /// Refinement runs alongside execution, triggered by each completion;
    /// results merge when they arrive, and late results of removed subtasks
    /// are discarded as stale.
    ConcurrentUpdate,
    /// Refinement waits for the in-flight set to drain; no new dispatch
    /// happens between drain and merge.
    BatchUpdate,
}

impl std::str::FromStr for UpdateStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "concurrent" | "concurrent_update" => Ok(UpdateStrategy::ConcurrentUpdate),
            "batch" | "batch_update" => Ok(UpdateStrategy::BatchUpdate),
            other => Err(format!("unknown strategy '{other}'")),
        }
    }
}

/// Executor knobs.
#[derive(Debug, Clone)]
pub struct ExecutorConfig {
    pub strategy: UpdateStrategy,
    pub max_concurrent: usize,
    /// Planner consultations allowed per run; zero disables refinement.
    pub max_refinement_rounds: u32,
    pub verify_completions: bool,
    /// Text echoed into the first run-log event (effective configuration).
    pub config_echo: Option<String>,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        ExecutorConfig {
            strategy: UpdateStrategy::BatchUpdate,
            max_concurrent: 8,
            max_refinement_rounds: 10,
            verify_completions: true,
            config_echo: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    Success,
    Failure,
    BudgetExhausted,
}

/// Everything a run produced.
#[derive(Debug)]
pub struct RunReport {
    pub outcome: RunOutcome,
    pub final_state: Option<WorkflowState>,
    pub events: Vec<RunEvent>,
    pub refinement_rounds_used: u32,
    pub wall_time: Duration,
    pub token_usage: TokenUsage,
    /// Set when initial planning failed (no subtask ran).
    pub planning_error: Option<String>,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.outcome == RunOutcome::Success
    }
}

/// Assigns agent instances to a set of ready subtasks: distinct roles get
/// clone index 0; subtasks sharing a role get indices `0..n-1` in id order.
/// Subtasks without a role produce per-id errors; the rest are still
/// assigned.
pub fn allocate_agents(
    ready: &[SubtaskId],
    state: &WorkflowState,
) -> (BTreeMap<SubtaskId, AgentInstance>, Vec<(SubtaskId, String)>) {
    let mut sorted: Vec<&SubtaskId> = ready.iter().collect();
    sorted.sort();
    let mut used: BTreeMap<String, u32> = BTreeMap::new();
    let mut assignments = BTreeMap::new();
    let mut failures = Vec::new();

    for id in sorted {
        let Some(record) = state.record(id) else {
            failures.push((id.clone(), "unknown subtask".to_string()));
            continue;
        };
        if record.agent.trim().is_empty() {
            failures.push((id.clone(), "no agent role assigned".to_string()));
            continue;
        }
        let index = used.entry(record.agent.clone()).or_insert(0);
        assignments.insert(
            id.clone(),
            AgentInstance {
                role: AgentRole::new(record.agent.clone()),
                clone_index: *index,
            },
        );
        *index += 1;
    }
    (assignments, failures)
}

enum CoordMsg {
    Done {
        id: SubtaskId,
        instance: AgentInstance,
        result: Result<String, String>,
    },
    Update {
        decision: UpdateDecision,
    },
}

/// Drives one task from planning to completion.
pub struct Executor {
    planner: Arc<dyn Planner>,
    backend: Arc<dyn AgentBackend>,
    config: ExecutorConfig,
    planner_config: PlannerConfig,
    injector: FaultInjector,
    meter: UsageMeter,
}

impl Executor {
    pub fn new(planner: Arc<dyn Planner>, backend: Arc<dyn AgentBackend>) -> Self {
        Executor {
            planner,
            backend,
            config: ExecutorConfig::default(),
            planner_config: PlannerConfig::default(),
            injector: FaultInjector::default(),
            meter: UsageMeter::new(),
        }
    }

    pub fn with_config(mut self, config: ExecutorConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_planner_config(mut self, config: PlannerConfig) -> Self {
        self.planner_config = config;
        self
    }

    pub fn with_injector(mut self, injector: FaultInjector) -> Self {
        self.injector = injector;
        self
    }

    pub fn with_meter(mut self, meter: UsageMeter) -> Self {
        self.meter = meter;
        self
    }

    pub fn run(&self, task: &TaskSpec) -> RunReport {
        self.run_with_sink(task, None)
    }

    /// Runs the task, streaming run-log events to `sink` as JSONL when
    /// given.
    pub fn run_with_sink(
        &self,
        task: &TaskSpec,
        sink: Option<Box<dyn Write + Send>>,
    ) -> RunReport {
        let started = Instant::now();
        let mut log = RunLog::new(sink);

        let plan = match plan_initial(&*self.planner, task, &self.planner_config) {
            Ok(plan) => plan,
            Err(e) => {
                return RunReport {
                    outcome: RunOutcome::Failure,
                    final_state: None,
                    events: log.into_events(),
                    refinement_rounds_used: 0,
                    wall_time: started.elapsed(),
                    token_usage: self.meter.snapshot(),
                    planning_error: Some(e.to_string()),
                };
            }
        };

        log.push(
            0,
            EventKind::Planned,
            None,
            None,
            self.config.config_echo.clone().unwrap_or_else(|| {
                format!(
                    "k={} candidates={} warnings={}",
                    self.planner_config.k,
                    plan.candidates.len(),
                    plan.warnings.len()
                )
            }),
        );
        let winner_metrics = plan.selection.evaluations[plan.winner]
            .metrics
            .expect("winning candidate has metrics");
        log.push(
            0,
            EventKind::Selected,
            None,
            None,
            format!(
                "candidate {} of {}: P_avg={:.4} C_dep={:.4} T={}",
                plan.winner,
                plan.candidates.len(),
                winner_metrics.parallelism_avg,
                winner_metrics.dependency_complexity,
                winner_metrics.level_count
            ),
        );

        // role personas come from the initial graph; roles introduced by
        // later merges fall back to bare names
        let mut personas: BTreeMap<String, AgentRole> = BTreeMap::new();
        for vertex in plan.graph.vertices() {
            if let Some(role) = plan.graph.agent_of(vertex) {
                personas.insert(role.name.clone(), role.clone());
            }
        }

        let mut state = match WorkflowState::from_graph(&plan.graph, &task.requirement) {
            Ok(state) => state,
            Err(e) => {
                return RunReport {
                    outcome: RunOutcome::Failure,
                    final_state: None,
                    events: log.into_events(),
                    refinement_rounds_used: 0,
                    wall_time: started.elapsed(),
                    token_usage: self.meter.snapshot(),
                    planning_error: Some(e.to_string()),
                };
            }
        };

        let outcome = self.drive(task, &mut state, &personas, &mut log);

        RunReport {
            outcome: outcome.0,
            refinement_rounds_used: outcome.1,
            final_state: Some(state),
            events: log.into_events(),
            wall_time: started.elapsed(),
            token_usage: self.meter.snapshot(),
            planning_error: None,
        }
    }

    fn drive(
        &self,
        task: &TaskSpec,
        state: &mut WorkflowState,
        personas: &BTreeMap<String, AgentRole>,
        log: &mut RunLog,
    ) -> (RunOutcome, u32) {
        let (tx, rx) = mpsc::channel::<CoordMsg>();
        let mut in_flight: BTreeMap<SubtaskId, AgentInstance> = BTreeMap::new();
        let mut rounds_used: u32 = 0;
        let mut update_pending = false;
        let mut retrigger_update = false;
        let mut budget_logged = false;
        let refinement_enabled = self.config.max_refinement_rounds > 0;

        loop {
            // dispatch everything ready, up to the concurrency bound
            let ready: Vec<SubtaskId> = state.ready_set().into_iter().collect();
            for id in ready {
                if in_flight.len() >= self.config.max_concurrent.max(1) {
                    break;
                }
                self.dispatch(&id, state, &mut in_flight, personas, log, &tx);
            }

            if in_flight.is_empty() && !update_pending {
                if state.all_completed() {
                    log.push(state.revision(), EventKind::Done, None, None, "all subtasks completed");
                    return (RunOutcome::Success, rounds_used);
                }
                if state.ready_set().is_empty() {
                    // stuck: only refinement can unblock
                    if !refinement_enabled {
                        log.push(
                            state.revision(),
                            EventKind::BudgetExhausted,
                            None,
                            None,
                            "refinement disabled; blocked subtasks remain",
                        );
                        return (RunOutcome::Failure, rounds_used);
                    }
                    if rounds_used >= self.config.max_refinement_rounds {
                        if !budget_logged {
                            log.push(
                                state.revision(),
                                EventKind::BudgetExhausted,
                                None,
                                None,
                                format!("refinement budget {rounds_used} exhausted"),
                            );
                        }
                        return (RunOutcome::BudgetExhausted, rounds_used);
                    }
                    // a stuck state makes the consultation mandatory, so it
                    // always counts against the budget
                    rounds_used += 1;
                    let decision = propose_update(&*self.planner, task, state, &self.planner_config);
                    self.apply_update(decision, state, log, rounds_used);
                    continue;
                }
                continue;
            }

            match self.config.strategy {
                UpdateStrategy::BatchUpdate => {
                    // drain the wave, settle results in id order
                    let mut results = Vec::new();
                    while !in_flight.is_empty() {
                        match rx.recv() {
                            Ok(CoordMsg::Done { id, instance, result }) => {
                                in_flight.remove(&id);
                                results.push((id, instance, result));
                            }
                            Ok(CoordMsg::Update { .. }) => {}
                            Err(_) => break,
                        }
                    }
                    results.sort_by(|a, b| a.0.cmp(&b.0));
                    for (id, instance, result) in results {
                        self.settle(&id, &instance, result, state, log);
                    }

                    // post-wave review (batch timing of the update trigger);
                    // a round is charged when the review was required (a
                    // failure exists) or it actually merged an update
                    if !state.all_completed() && refinement_enabled {
                        if rounds_used < self.config.max_refinement_rounds {
                            let decision =
                                propose_update(&*self.planner, task, state, &self.planner_config);
                            if state.has_failed() || decision.update.is_some() {
                                rounds_used += 1;
                            }
                            self.apply_update(decision, state, log, rounds_used);
                        } else if state.has_failed() && !budget_logged {
                            budget_logged = true;
                            log.push(
                                state.revision(),
                                EventKind::BudgetExhausted,
                                None,
                                None,
                                format!("refinement budget {rounds_used} exhausted"),
                            );
                        }
                    }
                }
                UpdateStrategy::ConcurrentUpdate => match rx.recv() {
                    Ok(CoordMsg::Done { id, instance, result }) => {
                        in_flight.remove(&id);
                        self.settle(&id, &instance, result, state, log);
                        if refinement_enabled {
                            if update_pending {
                                retrigger_update = true;
                            } else if rounds_used < self.config.max_refinement_rounds {
                                update_pending = true;
                                self.spawn_update(task, state, &tx);
                            } else if state.has_failed() && !budget_logged {
                                budget_logged = true;
                                log.push(
                                    state.revision(),
                                    EventKind::BudgetExhausted,
                                    None,
                                    None,
                                    format!("refinement budget {rounds_used} exhausted"),
                                );
                            }
                        }
                    }
                    Ok(CoordMsg::Update { decision }) => {
                        update_pending = false;
                        if state.has_failed() || decision.update.is_some() {
                            rounds_used += 1;
                        }
                        self.apply_update(decision, state, log, rounds_used);
                        if retrigger_update && rounds_used < self.config.max_refinement_rounds {
                            update_pending = true;
                            self.spawn_update(task, state, &tx);
                        }
                        retrigger_update = false;
                    }
                    Err(_) => {
                        return (RunOutcome::Failure, rounds_used);
                    }
                },
            }
        }
    }

    fn dispatch(
        &self,
        id: &SubtaskId,
        state: &mut WorkflowState,
        in_flight: &mut BTreeMap<SubtaskId, AgentInstance>,
        personas: &BTreeMap<String, AgentRole>,
        log: &mut RunLog,
        tx: &mpsc::Sender<CoordMsg>,
    ) {
        let record = state.record(id).expect("ready id exists").clone();
        if record.agent.trim().is_empty() {
            let _ = state.mark_in_progress(id);
            let _ = state.mark_failed(id, "no agent role assigned");
            log.push(
                state.revision(),
                EventKind::Failed,
                Some(id),
                None,
                "no agent role assigned",
            );
            return;
        }

        // lowest clone index free among live instances of this role
        let mut index = 0u32;
        loop {
            let taken = in_flight
                .values()
                .any(|i| i.role.name == record.agent && i.clone_index == index);
            if !taken {
                break;
            }
            index += 1;
        }
        let role = personas
            .get(&record.agent)
            .cloned()
            .unwrap_or_else(|| AgentRole::new(record.agent.clone()));
        let instance = AgentInstance {
            role,
            clone_index: index,
        };

        let upstream: BTreeMap<SubtaskId, String> = state
            .parents_of(id)
            .into_iter()
            .filter_map(|pid| {
                state
                    .record(&pid)
                    .and_then(|r| r.data.clone())
                    .map(|data| (pid, data))
            })
            .collect();

        state.mark_in_progress(id).expect("ready implies not_started");
        log.push(
            state.revision(),
            EventKind::Dispatched,
            Some(id),
            Some(instance.label()),
            truncate_for_log(&record.requirement),
        );
        in_flight.insert(id.clone(), instance.clone());

        let tx = tx.clone();
        let backend = Arc::clone(&self.backend);
        let worker_id = id.clone();
        std::thread::spawn(move || {
            let result = std::panic::catch_unwind(AssertUnwindSafe(|| {
                backend.execute(&instance, &worker_id, &record.requirement, &upstream)
            }))
            .unwrap_or_else(|_| Err("agent panicked".to_string()));
            let _ = tx.send(CoordMsg::Done {
                id: worker_id,
                instance,
                result,
            });
        });
    }

    /// Completion pipeline for one worker result: stale guard, fault
    /// injection, verification, then the status transition with its events.
    fn settle(
        &self,
        id: &SubtaskId,
        instance: &AgentInstance,
        result: Result<String, String>,
        state: &mut WorkflowState,
        log: &mut RunLog,
    ) {
        if state.status(id) != Some(SubtaskStatus::InProgress) {
            log.push(
                state.revision(),
                EventKind::StaleResult,
                Some(id),
                Some(instance.label()),
                "workflow changed while the subtask was executing; result discarded",
            );
            return;
        }

        let raw = match result {
            Ok(raw) => raw,
            Err(reason) => {
                let _ = state.mark_failed(id, &reason);
                log.push(
                    state.revision(),
                    EventKind::Failed,
                    Some(id),
                    Some(instance.label()),
                    reason,
                );
                return;
            }
        };

        let (output, masked) = self.injector.inject(id, raw);
        if masked {
            log.push(
                state.revision(),
                EventKind::Masked,
                Some(id),
                Some(instance.label()),
                format!("output replaced with '{}'", self.injector.sentinel),
            );
        }

        if self.config.verify_completions {
            let provisional = SubtaskRecord {
                status: SubtaskStatus::Completed,
                data: Some(output.clone()),
                ..state.record(id).expect("in-progress record exists").clone()
            };
            let (verdict, warning) = verify_completion(&*self.planner, id, &provisional);
            if let Some(warning) = warning {
                log::warn!("{warning}");
            }
            if !verdict.pass {
                let _ = state.mark_failed(id, &verdict.rationale);
                log.push(
                    state.revision(),
                    EventKind::VerifyFailed,
                    Some(id),
                    Some(instance.label()),
                    verdict.rationale.clone(),
                );
                log.push(
                    state.revision(),
                    EventKind::Failed,
                    Some(id),
                    Some(instance.label()),
                    verdict.rationale,
                );
                return;
            }
            let _ = state.mark_completed(id, output);
            log.push(
                state.revision(),
                EventKind::Completed,
                Some(id),
                Some(instance.label()),
                "",
            );
            log.push(
                state.revision(),
                EventKind::Verified,
                Some(id),
                Some(instance.label()),
                verdict.rationale,
            );
        } else {
            let _ = state.mark_completed(id, output);
            log.push(
                state.revision(),
                EventKind::Completed,
                Some(id),
                Some(instance.label()),
                "",
            );
        }
    }

    fn apply_update(
        &self,
        decision: UpdateDecision,
        state: &mut WorkflowState,
        log: &mut RunLog,
        round: u32,
    ) {
        for warning in &decision.warnings {
            log::warn!("{warning}");
        }
        match decision.update {
            None => {
                log.push(
                    state.revision(),
                    EventKind::NoChange,
                    None,
                    None,
                    format!("refinement round {round}: workflow kept"),
                );
            }
            Some(update) => {
                log.push(
                    state.revision(),
                    EventKind::UpdateProposed,
                    None,
                    None,
                    if decision.forced_repair {
                        format!("round {round}: repair required, current workflow excluded")
                    } else {
                        format!("round {round}: update wins on metrics")
                    },
                );
                match state.merge_update(&update) {
                    Ok(report) => {
                        let mut detail = report.summary();
                        for (id, data) in &report.removed_completed {
                            detail.push_str(&format!(
                                " | removed completed {id} data retained: {}",
                                truncate_for_log(data)
                            ));
                        }
                        log.push(
                            state.revision(),
                            EventKind::UpdateMerged,
                            None,
                            None,
                            detail,
                        );
                    }
                    Err(e) => {
                        log.push(
                            state.revision(),
                            EventKind::NoChange,
                            None,
                            None,
                            format!("round {round}: merge rejected: {e}"),
                        );
                    }
                }
            }
        }
    }

    fn spawn_update(&self, task: &TaskSpec, state: &WorkflowState, tx: &mpsc::Sender<CoordMsg>) {
        let planner = Arc::clone(&self.planner);
        let task = task.clone();
        let snapshot = state.clone();
        let planner_config = self.planner_config.clone();
        let tx = tx.clone();
        std::thread::spawn(move || {
            let decision = std::panic::catch_unwind(AssertUnwindSafe(|| {
                propose_update(&*planner, &task, &snapshot, &planner_config)
            }))
            .unwrap_or_else(|_| UpdateDecision {
                update: None,
                metrics: None,
                forced_repair: false,
                warnings: vec!["planner panicked".to_string()],
            });
            let _ = tx.send(CoordMsg::Update { decision });
        });
    }
}

fn truncate_for_log(text: &str) -> String {
    const LIMIT: usize = 120;
    if text.len() <= LIMIT {
        text.to_string()
    } else {
        let cut: String = text.chars().take(LIMIT).collect();
        format!("{cut}…")
    }
}
