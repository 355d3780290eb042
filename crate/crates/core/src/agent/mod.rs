//! The policy loop: context construction, action execution, step budget and
//! submission.

mod action;

use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use action::{parse_action, render_action_block, render_turn, ActionParseError, ParsedTurn};

use crate::backend::{ChatMessage, ModelBackend, SamplingParams, TokenUsage};
use crate::env::{evaluate_patch, AcceptanceVerdict, EnvError, Instance, Patch, ShellMode, Workspace};
use crate::prm::{GuidanceReport, Supervisor};
use crate::transcript::{EditorCommand, InjectedGuidance, Outcome, Step, Tool, ToolCall, Transcript};

pub const DEFAULT_SYSTEM_PROMPT: &str = include_str!("../../data/system_prompt.txt");

pub const FEEDBACK_PREFIX: &str = "SUPERVISOR FEEDBACK:";
pub const OBSERVATION_PREFIX: &str = "OBSERVATION:";

const FORMAT_REMINDER: &str = "Your last message did not contain exactly one action block. \
    Reply with a short explanation followed by exactly one fenced block for bash, str_replace_editor or submit.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("max_steps must be at least 1")]
    ZeroBudget,
    #[error("temperature must be non-negative, got {0}")]
    Temperature(f64),
    #[error("top_p must be in (0, 1], got {0}")]
    TopP(f64),
    #[error("bash timeout must be positive, got {0}")]
    BashTimeout(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub max_steps: usize,
    pub temperature: f64,
    pub top_p: f64,
    /// Per-command timeout for agent bash actions, in seconds.
    pub bash_timeout_secs: f64,
    pub shell: ShellMode,
    /// Replaces the bundled system instructions when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_prompt: Option<String>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            max_steps: 75,
            temperature: 0.0,
            top_p: 1.0,
            bash_timeout_secs: 120.0,
            shell: ShellMode::Bash,
            system_prompt: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_steps == 0 {
            return Err(AgentError::ZeroBudget);
        }
        if !(self.temperature >= 0.0) {
            return Err(AgentError::Temperature(self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(AgentError::TopP(self.top_p));
        }
        if !(self.bash_timeout_secs > 0.0 && self.bash_timeout_secs.is_finite()) {
            return Err(AgentError::BashTimeout(self.bash_timeout_secs));
        }
        Ok(())
    }

    pub fn sampling(&self) -> SamplingParams {
        SamplingParams { temperature: self.temperature, top_p: self.top_p }
    }

    pub fn bash_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.bash_timeout_secs)
    }

    pub fn system_prompt(&self) -> &str {
        self.system_prompt.as_deref().unwrap_or(DEFAULT_SYSTEM_PROMPT)
    }
}

/// True iff the loop stops after step `t`.
pub fn should_terminate(t: usize, last_action: &ToolCall, config: &AgentConfig) -> bool {
    last_action.tool == Tool::Submit || t >= config.max_steps
}

#[derive(Debug, Clone)]
pub struct TrajectoryResult {
    pub transcript: Transcript,
    /// Present iff the outcome is submitted or auto-submitted.
    pub patch: Option<Patch>,
    /// Present iff `patch` is.
    pub verdict: Option<AcceptanceVerdict>,
    pub policy_usage_total: TokenUsage,
    pub prm_usage_total: TokenUsage,
    pub guidance_reports: Vec<GuidanceReport>,
    /// Supervision cycles started, successful or not.
    pub supervision_attempts: usize,
    /// Reason for an aborted run.
    pub error: Option<String>,
}

impl TrajectoryResult {
    pub fn outcome(&self) -> Outcome {
        self.transcript.outcome().unwrap_or(Outcome::AbortedError)
    }

    pub fn resolved(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.accepted)
    }

    pub fn patch_generated(&self) -> bool {
        self.patch.as_ref().is_some_and(|p| p.nonempty)
    }
}

/// The policy's chat context for `transcript`: system instructions, the
/// problem statement, then every step and injection in order.
pub fn build_context(system_prompt: &str, instance: &Instance, transcript: &Transcript) -> Vec<ChatMessage> {
    let mut messages = vec![
        ChatMessage::system(system_prompt),
        ChatMessage::user(format!("Instance: {}\n\n{}", instance.id, instance.description)),
    ];
    for step in transcript.steps() {
        append_step_messages(&mut messages, step);
        if let Some(injection) = transcript.injection_after(step.index) {
            messages.push(feedback_message(&injection.content));
        }
    }
    messages
}

fn append_step_messages(messages: &mut Vec<ChatMessage>, step: &Step) {
    messages.push(ChatMessage::assistant(render_turn(&step.thought, &step.action)));
    messages.push(ChatMessage::user(format!("{OBSERVATION_PREFIX}\n{}", step.observation)));
}

fn feedback_message(content: &str) -> ChatMessage {
    ChatMessage::user(format!("{FEEDBACK_PREFIX}\n{content}"))
}

/// Runs `instance` in a fresh temporary workspace.
pub fn run_instance(
    instance: &Instance,
    policy: &dyn ModelBackend,
    supervisor: Option<&Supervisor>,
    config: &AgentConfig,
) -> Result<TrajectoryResult, EnvError> {
    let ws = Workspace::open(instance, config.shell)?;
    Ok(run_in_workspace(instance, ws, policy, supervisor, config))
}

/// Runs `instance` in a workspace materialized at `dir`.
pub fn run_instance_at(
    instance: &Instance,
    dir: &Path,
    policy: &dyn ModelBackend,
    supervisor: Option<&Supervisor>,
    config: &AgentConfig,
) -> Result<TrajectoryResult, EnvError> {
    let ws = Workspace::open_at(instance, dir, config.shell)?;
    Ok(run_in_workspace(instance, ws, policy, supervisor, config))
}

/// The loop proper. Invalid configs abort before the first step.
pub fn run_in_workspace(
    instance: &Instance,
    mut ws: Workspace,
    policy: &dyn ModelBackend,
    supervisor: Option<&Supervisor>,
    config: &AgentConfig,
) -> TrajectoryResult {
    let mut result = TrajectoryResult {
        transcript: Transcript::with_budget(&instance.id, config.max_steps.max(1)),
        patch: None,
        verdict: None,
        policy_usage_total: TokenUsage::default(),
        prm_usage_total: TokenUsage::default(),
        guidance_reports: Vec::new(),
        supervision_attempts: 0,
        error: None,
    };
    if let Err(e) = config.validate() {
        return abort(result, e.to_string());
    }
    let params = config.sampling();
    let mut messages = build_context(config.system_prompt(), instance, &result.transcript);

    for t in 1..=config.max_steps {
        let (turn, usage) = match query_policy(policy, &messages, params) {
            Ok(ok) => ok,
            Err((message, usage)) => {
                result.policy_usage_total += usage;
                return abort(result, format!("step {t}: {message}"));
            }
        };
        result.policy_usage_total += usage;

        let observation = execute(&mut ws, &turn.action, config);
        let step = Step::new(t, turn.thought, turn.action, &observation, usage);
        append_step_messages(&mut messages, &step);
        let submitted = step.action.tool == Tool::Submit;
        if let Err(e) = result.transcript.append_step(step) {
            return abort(result, e.to_string());
        }
        if submitted {
            return finish(result, instance, &ws, config, Outcome::Submitted);
        }

        if let Some(sup) = supervisor.filter(|s| s.should_invoke(t)) {
            result.supervision_attempts += 1;
            let cycle = sup.supervise(&result.transcript, &instance.description);
            result.prm_usage_total += cycle.usage;
            if let Ok((report, injection)) = cycle.result {
                let record = InjectedGuidance { after_step: t, content: injection, source_report_id: report.id.clone() };
                messages.push(feedback_message(&record.content));
                if let Err(e) = result.transcript.add_injection(record) {
                    return abort(result, e.to_string());
                }
                result.guidance_reports.push(report);
            }
        }
        if t >= config.max_steps {
            break;
        }
    }
    finish(result, instance, &ws, config, Outcome::AutoSubmitted)
}

/// One policy turn, with a single format-reminder retry.
fn query_policy(
    policy: &dyn ModelBackend,
    messages: &[ChatMessage],
    params: SamplingParams,
) -> Result<(ParsedTurn, TokenUsage), (String, TokenUsage)> {
    let mut usage = TokenUsage::default();
    let first = policy.chat(messages, params).map_err(|e| (e.to_string(), usage))?;
    usage += first.usage;
    let err = match parse_action(&first.text) {
        Ok(turn) => return Ok((turn, usage)),
        Err(e) => e,
    };
    log::debug!("unparseable policy output ({err}); retrying with a format reminder");
    let mut retry = messages.to_vec();
    retry.push(ChatMessage::assistant(first.text));
    retry.push(ChatMessage::user(FORMAT_REMINDER));
    let second = policy.chat(&retry, params).map_err(|e| (e.to_string(), usage))?;
    usage += second.usage;
    parse_action(&second.text).map(|turn| (turn, usage)).map_err(|e| (format!("unparseable policy output: {e}"), usage))
}

fn abort(mut result: TrajectoryResult, message: String) -> TrajectoryResult {
    log::warn!("{}: aborted: {message}", result.transcript.instance_id());
    result.transcript.set_outcome(Outcome::AbortedError);
    result.error = Some(message);
    result
}

/// Extracts the diff and evaluates it. `requested` is the submit outcome;
/// budget exhaustion with an empty diff yields no patch.
fn finish(
    mut result: TrajectoryResult,
    instance: &Instance,
    ws: &Workspace,
    config: &AgentConfig,
    requested: Outcome,
) -> TrajectoryResult {
    let patch = match ws.diff() {
        Ok(p) => p,
        Err(e) => return abort(result, format!("diff extraction failed: {e}")),
    };
    if requested == Outcome::AutoSubmitted && !patch.nonempty {
        result.transcript.set_outcome(Outcome::BudgetExhaustedNoPatch);
        return result;
    }
    let verdict = evaluate_patch(instance, &patch, config.shell).unwrap_or_else(|e| AcceptanceVerdict {
        accepted: false,
        per_test: Default::default(),
        apply_error: Some(format!("evaluation failed: {e}")),
    });
    result.transcript.set_outcome(requested);
    result.patch = Some(patch);
    result.verdict = Some(verdict);
    result
}

/// Runs one action and renders its observation. Environment errors are
/// reported to the policy rather than ending the run.
pub fn execute(ws: &mut Workspace, action: &ToolCall, config: &AgentConfig) -> String {
    let rendered = match action.tool {
        Tool::Submit => return "Submitting the current diff.".to_owned(),
        Tool::Bash => {
            let cmd = action.arg("command").unwrap_or_default();
            let timeout = config.bash_timeout();
            ws.exec_bash(cmd, timeout).map(|out| out.observation(timeout))
        }
        Tool::StrReplaceEditor => execute_editor(ws, action),
    };
    match rendered {
        Ok(text) => text,
        Err(e) => format!("Error: {e}"),
    }
}

fn execute_editor(ws: &mut Workspace, action: &ToolCall) -> Result<String, EnvError> {
    let missing = |name: &str| EnvError::BadArgument(format!("missing {name:?}"));
    let path = action.arg("path").ok_or_else(|| missing("path"))?;
    match action.subcommand {
        Some(EditorCommand::View) => {
            let range = match action.arg("view_range") {
                None => None,
                Some(spec) => Some(parse_range(spec).ok_or_else(|| {
                    EnvError::BadArgument(format!("view_range must be \"start,end\", got {spec:?}"))
                })?),
            };
            ws.editor_view(path, range)
        }
        Some(EditorCommand::Create) => ws.editor_create(path, action.arg("file_text").ok_or_else(|| missing("file_text"))?),
        Some(EditorCommand::StrReplace) => ws.editor_str_replace(
            path,
            action.arg("old_str").ok_or_else(|| missing("old_str"))?,
            action.arg("new_str").unwrap_or_default(),
        ),
        Some(EditorCommand::Insert) => {
            let line = action.arg("insert_line").ok_or_else(|| missing("insert_line"))?;
            let line: usize = line
                .trim()
                .parse()
                .map_err(|_| EnvError::BadArgument(format!("insert_line must be a line number, got {line:?}")))?;
            ws.editor_insert(path, line, action.arg("new_str").ok_or_else(|| missing("new_str"))?)
        }
        Some(EditorCommand::UndoEdit) => ws.editor_undo(path),
        None => Err(EnvError::BadArgument("editor call without subcommand".into())),
    }
}

fn parse_range(spec: &str) -> Option<(usize, Option<usize>)> {
    let (a, b) = spec.split_once(',')?;
    let start = a.trim().parse().ok()?;
    let end = match b.trim() {
        "-1" => None,
        other => Some(other.parse().ok()?),
    };
    Some((start, end))
}
