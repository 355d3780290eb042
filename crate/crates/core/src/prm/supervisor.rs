use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::guidance::{parse_guidance, project_for_policy, GuidanceReport};
use super::prompt::{build_prompt, SYSTEM_PROMPT};
use super::{PrmError, PrmVariant, Taxonomy};
use crate::backend::{ChatMessage, ModelBackend, SamplingParams, TokenUsage};
use crate::transcript::{serialize_context, Transcript};

/// True on every `interval`-th step.
pub fn should_invoke(step: usize, interval: usize) -> bool {
    interval > 0 && step > 0 && step % interval == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupervisorConfig {
    /// Invocation interval n, in steps.
    pub interval: usize,
    /// Window size k, in steps.
    pub window: usize,
    pub variant: PrmVariant,
    pub params: SamplingParams,
}

impl SupervisorConfig {
    pub fn new(variant: PrmVariant) -> Self {
        SupervisorConfig { interval: 5, window: 8, variant, params: SamplingParams::default() }
    }

    pub fn validate(&self) -> Result<(), PrmError> {
        if self.interval == 0 {
            return Err(PrmError::Config("interval must be at least 1".into()));
        }
        if self.window == 0 {
            return Err(PrmError::Config("window must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SupervisionFailure {
    Backend(String),
    Unparseable(String),
    EmptyTranscript,
}

/// Result of one supervision cycle. Usage covers every PRM call made,
/// including re-asks and failed attempts.
#[derive(Debug, Clone)]
pub struct SupervisionCycle {
    pub usage: TokenUsage,
    pub calls: usize,
    pub result: Result<(GuidanceReport, String), SupervisionFailure>,
}

const FORMAT_REMINDER: &str = "Your previous answer did not follow the required output format. \
    Answer again using exactly the tagged sections described above.";

pub struct Supervisor {
    config: SupervisorConfig,
    taxonomy: Arc<Taxonomy>,
    backend: Arc<dyn ModelBackend>,
}

impl Supervisor {
    pub fn new(config: SupervisorConfig, taxonomy: Arc<Taxonomy>, backend: Arc<dyn ModelBackend>) -> Result<Self, PrmError> {
        config.validate()?;
        Ok(Supervisor { config, taxonomy, backend })
    }

    pub fn config(&self) -> &SupervisorConfig {
        &self.config
    }

    pub fn taxonomy(&self) -> &Taxonomy {
        &self.taxonomy
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    pub fn should_invoke(&self, step: usize) -> bool {
        should_invoke(step, self.config.interval)
    }

    /// window → serialize → prompt → PRM → parse → projection.
    ///
    /// A backend failure skips the cycle; an unparseable answer gets one
    /// re-ask with a format reminder before the cycle is skipped.
    pub fn supervise(&self, transcript: &Transcript, description: &str) -> SupervisionCycle {
        let mut cycle = SupervisionCycle { usage: TokenUsage::default(), calls: 0, result: Err(SupervisionFailure::EmptyTranscript) };
        let Ok(window) = transcript.window(self.config.window) else {
            return cycle;
        };
        let step = window.end_index();
        let context = serialize_context(description, &window);
        let prompt = build_prompt(&self.config.variant, &self.taxonomy, &context);
        let mut messages = vec![ChatMessage::system(SYSTEM_PROMPT), ChatMessage::user(prompt)];
        for attempt in 0..2 {
            let completion = match self.backend.chat(&messages, self.config.params) {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("{}: supervision at step {step} skipped: {e}", transcript.instance_id());
                    cycle.result = Err(SupervisionFailure::Backend(e.to_string()));
                    return cycle;
                }
            };
            cycle.calls += 1;
            cycle.usage += completion.usage;
            match parse_guidance(&completion.text, &self.config.variant, &self.taxonomy) {
                Ok(mut report) => {
                    report.id = format!("{}:prm@{step}", transcript.instance_id());
                    report.invoked_at_step = step;
                    report.prm_usage = cycle.usage;
                    let injection = project_for_policy(&report, &self.config.variant);
                    cycle.result = Ok((report, injection));
                    return cycle;
                }
                Err(e) => {
                    log::warn!("{}: unparseable PRM output at step {step} (attempt {}): {e}", transcript.instance_id(), attempt + 1);
                    cycle.result = Err(SupervisionFailure::Unparseable(e.to_string()));
                    messages.push(ChatMessage::assistant(completion.text));
                    messages.push(ChatMessage::user(FORMAT_REMINDER));
                }
            }
        }
        cycle
    }
}
