//! Agent instances and execution backends.

use std::collections::BTreeMap;
use std::time::Duration;

use crate::aov::{AgentRole, SubtaskId};
use crate::llm::{ChatMessage, CompletionRequest, LlmClient, UsageMeter};

use super::inject::fnv1a;

/// A live agent: a role plus a clone index (0 is the original). Clones let
/// same-role subtasks in one wave run simultaneously.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentInstance {
    pub role: AgentRole,
    pub clone_index: u32,
}

impl AgentInstance {
    pub fn label(&self) -> String {
        format!("{}#{}", self.role.name, self.clone_index)
    }
}

/// Executes one subtask given its requirement and the labeled upstream
/// outputs. Implementations must be safe for concurrent calls.
pub trait AgentBackend: Send + Sync {
    fn execute(
        &self,
        instance: &AgentInstance,
        id: &SubtaskId,
        requirement: &str,
        upstream: &BTreeMap<SubtaskId, String>,
    ) -> Result<String, String>;
}

/// Deterministic offline backend: returns `done(<id>)` plus a digest of
/// each upstream payload, with configurable latency for concurrency tests.
#[derive(Debug, Clone, Default)]
pub struct StubBackend {
    pub latency: Duration,
}

impl StubBackend {
    pub fn new() -> Self {
        StubBackend::default()
    }

    pub fn with_latency(latency: Duration) -> Self {
        StubBackend { latency }
    }
}

impl AgentBackend for StubBackend {
    fn execute(
        &self,
        _instance: &AgentInstance,
        id: &SubtaskId,
        _requirement: &str,
        upstream: &BTreeMap<SubtaskId, String>,
    ) -> Result<String, String> {
        if !self.latency.is_zero() {
            std::thread::sleep(self.latency);
        }
        let mut output = format!("done({id})");
        if !upstream.is_empty() {
            let digests: Vec<String> = upstream
                .iter()
                .map(|(parent, data)| format!("{parent}:{:016x}", fnv1a(data)))
                .collect();
            output.push('|');
            output.push_str(&digests.join(","));
        }
        Ok(output)
    }
}

/// Backend that asks a chat-completion endpoint to perform the subtask. The
/// prompt carries the role persona, the requirement, and each upstream
/// output labeled by its producing subtask.
pub struct LlmBackend {
    client: LlmClient,
    meter: UsageMeter,
    max_tokens: u32,
    temperature: f64,
}

impl LlmBackend {
    pub fn new(client: LlmClient) -> Self {
        LlmBackend {
            client,
            meter: UsageMeter::new(),
            max_tokens: 4096,
            temperature: 0.7,
        }
    }

    pub fn with_meter(mut self, meter: UsageMeter) -> Self {
        self.meter = meter;
        self
    }
}

impl AgentBackend for LlmBackend {
    fn execute(
        &self,
        instance: &AgentInstance,
        _id: &SubtaskId,
        requirement: &str,
        upstream: &BTreeMap<SubtaskId, String>,
    ) -> Result<String, String> {
        let mut messages = Vec::new();
        if !instance.role.persona.trim().is_empty() {
            messages.push(ChatMessage::system(instance.role.persona.clone()));
        }
        let mut body = format!("Subtask requirement:\n{requirement}\n");
        if !upstream.is_empty() {
            body.push_str("\nOutputs of the subtasks this one depends on:\n");
            for (parent, data) in upstream {
                body.push_str(&format!("--- output of {parent} ---\n{data}\n"));
            }
        }
        body.push_str("\nProduce the subtask output only, with no commentary.");
        messages.push(ChatMessage::user(body));

        let request = CompletionRequest {
            model: self.client.config().model.clone(),
            messages,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
        };
        match self.client.complete(&request) {
            Ok(completion) => {
                self.meter.record(&completion.usage);
                Ok(completion.content)
            }
            Err(e) => Err(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance() -> AgentInstance {
        AgentInstance {
            role: AgentRole::new("worker"),
            clone_index: 0,
        }
    }

    #[test]
    fn stub_output_without_parents() {
        let backend = StubBackend::new();
        let out = backend
            .execute(&instance(), &"A".into(), "do a", &BTreeMap::new())
            .unwrap();
        assert_eq!(out, "done(A)");
    }

    #[test]
    fn stub_output_embeds_upstream_digests() {
        let backend = StubBackend::new();
        let mut upstream = BTreeMap::new();
        upstream.insert(SubtaskId::new("A"), "x".to_string());
        let out = backend
            .execute(&instance(), &"C".into(), "do c", &upstream)
            .unwrap();
        assert!(out.starts_with("done(C)|A:"));
        let digest = format!("{:016x}", fnv1a("x"));
        assert!(out.contains(&digest), "{out}");

        // a different payload produces a different digest
        upstream.insert(SubtaskId::new("A"), "y".to_string());
        let other = backend
            .execute(&instance(), &"C".into(), "do c", &upstream)
            .unwrap();
        assert_ne!(out, other);
    }

    #[test]
    fn instance_label_includes_clone_index() {
        let clone = AgentInstance {
            role: AgentRole::new("writer"),
            clone_index: 2,
        };
        assert_eq!(clone.label(), "writer#2");
    }
}
