//! Planner backed by a chat-completion endpoint. Each request renders a
//! template, sends one completion call, and parses the reply; parse failures
//! are retried with the diagnosis appended so the model can correct itself.

use super::parse::{parse_verdict, parse_workflow_response, ParseContext, ParseError};
use super::prompts::{build_init_prompt, build_update_prompt, build_verify_prompt, PromptTemplates};
use super::{Planner, PlannerConfig, PlannerError, PlannerResponse, TaskSpec, Verdict};
use crate::aov::SubtaskId;
use crate::llm::{ChatMessage, CompletionRequest, LlmClient, UsageMeter};
use crate::state::{SubtaskRecord, WorkflowState};

/// Default completion budget for planner replies.
const PLANNER_MAX_TOKENS: u32 = 4096;
/// Verification runs cold for reproducible verdicts.
const VERIFY_TEMPERATURE: f64 = 0.0;

pub struct LlmPlanner {
    client: LlmClient,
    templates: PromptTemplates,
    meter: UsageMeter,
    max_tokens: u32,
}

impl LlmPlanner {
    pub fn new(client: LlmClient) -> Self {
        LlmPlanner {
            client,
            templates: PromptTemplates::default(),
            meter: UsageMeter::new(),
            max_tokens: PLANNER_MAX_TOKENS,
        }
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    /// Shares an external usage accumulator (e.g. the run-wide meter).
    pub fn with_meter(mut self, meter: UsageMeter) -> Self {
        self.meter = meter;
        self
    }

    pub fn usage(&self) -> &UsageMeter {
        &self.meter
    }

    fn ask(&self, messages: Vec<ChatMessage>, temperature: f64) -> Result<String, PlannerError> {
        let request = CompletionRequest {
            model: self.client.config().model.clone(),
            messages,
            temperature,
            max_tokens: self.max_tokens,
        };
        let completion = self
            .client
            .complete(&request)
            .map_err(|e| PlannerError::Backend(e.to_string()))?;
        self.meter.record(&completion.usage);
        Ok(completion.content)
    }

    /// Sends `prompt`, parses the reply, and on parse errors re-asks with
    /// the diagnosis appended, up to `max_parse_retries` extra rounds.
    fn ask_parsed(
        &self,
        prompt: String,
        temperature: f64,
        context: ParseContext,
        max_parse_retries: u32,
    ) -> Result<PlannerResponse, PlannerError> {
        let mut messages = vec![ChatMessage::user(prompt)];
        let mut last_error: Option<ParseError> = None;

        for round in 0..=max_parse_retries {
            if let Some(error) = &last_error {
                messages.push(ChatMessage::user(format!(
                    "Your previous reply could not be used: {}. \
                     Respond again with only one valid JSON object in the required format.",
                    error.diagnosis()
                )));
                log::warn!("planner reply unparseable (round {round}): {error}");
            }
            let reply = self.ask(messages.clone(), temperature)?;
            match parse_workflow_response(&reply, context) {
                Ok(response) => return Ok(response),
                Err(error) => {
                    messages.push(ChatMessage::assistant(reply));
                    last_error = Some(error);
                }
            }
        }
        Err(PlannerError::Parse(last_error.expect("at least one round ran")))
    }
}

impl Planner for LlmPlanner {
    fn generate_candidate(
        &self,
        task: &TaskSpec,
        config: &PlannerConfig,
        _attempt: usize,
    ) -> Result<PlannerResponse, PlannerError> {
        let prompt = build_init_prompt(task, &self.templates);
        self.ask_parsed(
            prompt,
            config.temperature,
            ParseContext::Initial,
            config.max_parse_retries,
        )
    }

    fn generate_update(
        &self,
        task: &TaskSpec,
        state: &WorkflowState,
        config: &PlannerConfig,
        _attempt: usize,
    ) -> Result<PlannerResponse, PlannerError> {
        let prompt = build_update_prompt(task, state, &self.templates, config.context_budget);
        self.ask_parsed(
            prompt,
            config.temperature,
            ParseContext::Update,
            config.max_parse_retries,
        )
    }

    fn verify_completion(
        &self,
        id: &SubtaskId,
        record: &SubtaskRecord,
    ) -> Result<Verdict, PlannerError> {
        let data = record.data.as_deref().unwrap_or("");
        let prompt = build_verify_prompt(&record.requirement, data, &self.templates);
        let reply = self.ask(vec![ChatMessage::user(prompt)], VERIFY_TEMPERATURE)?;
        parse_verdict(&reply).ok_or_else(|| {
            PlannerError::Backend(format!(
                "verifier reply for {id} had no leading YES/NO token"
            ))
        })
    }
}
