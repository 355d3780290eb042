//! The transcript model: (thought, action, observation) steps, injected
//! supervisor guidance, and the trajectory outcome.

mod store;
mod window;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::TokenUsage;

pub use store::{load, load_file, persist, persist_file, Record, StoreError};
pub use window::{parse_context, serialize_context, ContextParseError, Window};

/// Default step budget for one trajectory.
pub const DEFAULT_STEP_BUDGET: usize = 75;

/// Observations longer than this many characters are truncated.
pub const OBSERVATION_LIMIT: usize = 16_000;
const OBSERVATION_KEEP: usize = 8_000;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TranscriptError {
    #[error("step index {got} does not follow transcript of length {len}")]
    NonConsecutive { len: usize, got: usize },
    #[error("step budget of {budget} exhausted")]
    BudgetExceeded { budget: usize },
    #[error("injection after step {after_step} is invalid: {reason}")]
    BadInjection { after_step: usize, reason: &'static str },
    #[error("invalid tool call: {0}")]
    BadToolCall(String),
    #[error("transcript has no steps")]
    EmptyWindow,
    #[error("window size must be at least 1")]
    ZeroWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tool {
    Bash,
    StrReplaceEditor,
    Submit,
}

impl Tool {
    pub fn as_str(self) -> &'static str {
        match self {
            Tool::Bash => "bash",
            Tool::StrReplaceEditor => "str_replace_editor",
            Tool::Submit => "submit",
        }
    }

    pub fn from_name(name: &str) -> Option<Tool> {
        match name {
            "bash" => Some(Tool::Bash),
            "str_replace_editor" => Some(Tool::StrReplaceEditor),
            "submit" => Some(Tool::Submit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditorCommand {
    View,
    Create,
    StrReplace,
    Insert,
    UndoEdit,
}

impl EditorCommand {
    pub fn as_str(self) -> &'static str {
        match self {
            EditorCommand::View => "view",
            EditorCommand::Create => "create",
            EditorCommand::StrReplace => "str_replace",
            EditorCommand::Insert => "insert",
            EditorCommand::UndoEdit => "undo_edit",
        }
    }

    pub fn from_name(name: &str) -> Option<EditorCommand> {
        match name {
            "view" => Some(EditorCommand::View),
            "create" => Some(EditorCommand::Create),
            "str_replace" => Some(EditorCommand::StrReplace),
            "insert" => Some(EditorCommand::Insert),
            "undo_edit" => Some(EditorCommand::UndoEdit),
            _ => None,
        }
    }
}

/// One action from the agent's action space.
///
/// `subcommand` is set exactly when the tool is the editor, and `submit`
/// never carries arguments. Use the constructors or [`ToolCall::validate`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: Tool,
    #[serde(default)]
    pub subcommand: Option<EditorCommand>,
    #[serde(default)]
    pub arguments: BTreeMap<String, String>,
}

impl ToolCall {
    pub fn bash(command: impl Into<String>) -> Self {
        let mut arguments = BTreeMap::new();
        arguments.insert("command".to_owned(), command.into());
        ToolCall { tool: Tool::Bash, subcommand: None, arguments }
    }

    pub fn editor<K, V>(command: EditorCommand, args: impl IntoIterator<Item = (K, V)>) -> Self
    where
        K: Into<String>,
        V: Into<String>,
    {
        ToolCall {
            tool: Tool::StrReplaceEditor,
            subcommand: Some(command),
            arguments: args.into_iter().map(|(k, v)| (k.into(), v.into())).collect(),
        }
    }

    pub fn submit() -> Self {
        ToolCall { tool: Tool::Submit, subcommand: None, arguments: BTreeMap::new() }
    }

    pub fn arg(&self, name: &str) -> Option<&str> {
        self.arguments.get(name).map(String::as_str)
    }

    pub fn validate(&self) -> Result<(), TranscriptError> {
        match (self.tool, self.subcommand) {
            (Tool::StrReplaceEditor, None) => {
                return Err(TranscriptError::BadToolCall("editor call without subcommand".into()))
            }
            (Tool::Bash | Tool::Submit, Some(_)) => {
                return Err(TranscriptError::BadToolCall(format!(
                    "{} does not take a subcommand",
                    self.tool.as_str()
                )))
            }
            _ => {}
        }
        if self.tool == Tool::Submit && !self.arguments.is_empty() {
            return Err(TranscriptError::BadToolCall("submit carries no arguments".into()));
        }
        if self.tool == Tool::Bash && self.arg("command").is_none() {
            return Err(TranscriptError::BadToolCall("bash call without command".into()));
        }
        Ok(())
    }

    /// Single-line canonical rendering, stable for identical calls.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("tool call serializes")
    }
}

impl fmt::Display for ToolCall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tool {
            Tool::Bash => write!(f, "bash: {}", self.arg("command").unwrap_or_default()),
            Tool::Submit => f.write_str("submit"),
            Tool::StrReplaceEditor => {
                let sub = self.subcommand.map(EditorCommand::as_str).unwrap_or("?");
                write!(f, "str_replace_editor {sub} {}", self.arg("path").unwrap_or_default())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub index: usize,
    pub thought: String,
    pub action: ToolCall,
    pub observation: String,
    #[serde(rename = "usage")]
    pub policy_usage: TokenUsage,
}

impl Step {
    /// Builds a step, truncating the observation to [`OBSERVATION_LIMIT`].
    pub fn new(
        index: usize,
        thought: impl Into<String>,
        action: ToolCall,
        observation: &str,
        policy_usage: TokenUsage,
    ) -> Self {
        Step {
            index,
            thought: thought.into(),
            action,
            observation: truncate_observation(observation),
            policy_usage,
        }
    }
}

/// Keeps the first and last 8,000 characters of an over-long observation.
pub fn truncate_observation(text: &str) -> String {
    let total = text.chars().count();
    if total <= OBSERVATION_LIMIT {
        return text.to_owned();
    }
    let head: String = text.chars().take(OBSERVATION_KEEP).collect();
    let tail: String = text.chars().skip(total - OBSERVATION_KEEP).collect();
    let omitted = total - 2 * OBSERVATION_KEEP;
    format!("{head}\n[... {omitted} characters truncated ...]\n{tail}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InjectedGuidance {
    pub after_step: usize,
    pub content: String,
    pub source_report_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Submitted,
    AutoSubmitted,
    BudgetExhaustedNoPatch,
    AbortedError,
}

impl Outcome {
    pub fn has_patch(self) -> bool {
        matches!(self, Outcome::Submitted | Outcome::AutoSubmitted)
    }
}

/// The sequential history H_t of one trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Transcript {
    instance_id: String,
    step_budget: usize,
    steps: Vec<Step>,
    injections: Vec<InjectedGuidance>,
    outcome: Option<Outcome>,
}

impl Transcript {
    pub fn new(instance_id: impl Into<String>) -> Self {
        Self::with_budget(instance_id, DEFAULT_STEP_BUDGET)
    }

    pub fn with_budget(instance_id: impl Into<String>, step_budget: usize) -> Self {
        Transcript {
            instance_id: instance_id.into(),
            step_budget,
            steps: Vec::new(),
            injections: Vec::new(),
            outcome: None,
        }
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    pub fn step_budget(&self) -> usize {
        self.step_budget
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn injections(&self) -> &[InjectedGuidance] {
        &self.injections
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last_step(&self) -> Option<&Step> {
        self.steps.last()
    }

    pub fn append_step(&mut self, step: Step) -> Result<(), TranscriptError> {
        let len = self.steps.len();
        if step.index != len + 1 {
            return Err(TranscriptError::NonConsecutive { len, got: step.index });
        }
        if len >= self.step_budget {
            return Err(TranscriptError::BudgetExceeded { budget: self.step_budget });
        }
        step.action.validate()?;
        self.steps.push(step);
        Ok(())
    }

    pub fn add_injection(&mut self, injection: InjectedGuidance) -> Result<(), TranscriptError> {
        let after_step = injection.after_step;
        if after_step == 0 || after_step > self.steps.len() {
            return Err(TranscriptError::BadInjection { after_step, reason: "no such step" });
        }
        if self.injections.last().is_some_and(|last| last.after_step >= after_step) {
            return Err(TranscriptError::BadInjection {
                after_step,
                reason: "injections must be strictly increasing by step",
            });
        }
        self.injections.push(injection);
        Ok(())
    }

    pub fn set_outcome(&mut self, outcome: Outcome) {
        self.outcome = Some(outcome);
    }

    /// The `k` most recent steps. Injections are not part of a window.
    pub fn window(&self, k: usize) -> Result<Window, TranscriptError> {
        if k == 0 {
            return Err(TranscriptError::ZeroWindow);
        }
        if self.steps.is_empty() {
            return Err(TranscriptError::EmptyWindow);
        }
        let start = self.steps.len().saturating_sub(k);
        Ok(Window::new(self.steps[start..].to_vec()))
    }

    /// Injection placed right after the given step, if any.
    pub fn injection_after(&self, step_index: usize) -> Option<&InjectedGuidance> {
        self.injections.iter().find(|inj| inj.after_step == step_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step(index: usize) -> Step {
        Step::new(index, "t", ToolCall::bash("ls"), "out", TokenUsage::default())
    }

    fn transcript_of(len: usize) -> Transcript {
        let mut t = Transcript::new("inst");
        for i in 1..=len {
            t.append_step(step(i)).unwrap();
        }
        t
    }

    #[test]
    fn append_first_step() {
        let t = transcript_of(1);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn append_reaches_budget() {
        let mut t = transcript_of(74);
        t.append_step(step(75)).unwrap();
        assert_eq!(t.len(), 75);
        assert_eq!(
            t.append_step(step(76)),
            Err(TranscriptError::BudgetExceeded { budget: 75 })
        );
    }

    #[test]
    fn append_rejects_gap() {
        let mut t = transcript_of(3);
        assert_eq!(t.append_step(step(5)), Err(TranscriptError::NonConsecutive { len: 3, got: 5 }));
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn window_shorter_than_k() {
        let w = transcript_of(3).window(8).unwrap();
        assert_eq!((w.len(), w.start_index(), w.end_index()), (3, 1, 3));
    }

    #[test]
    fn window_slides() {
        let w = transcript_of(10).window(8).unwrap();
        let idx: Vec<_> = w.steps().iter().map(|s| s.index).collect();
        assert_eq!(idx, (3..=10).collect::<Vec<_>>());
    }

    #[test]
    fn window_at_boundary() {
        let w = transcript_of(8).window(8).unwrap();
        assert_eq!((w.len(), w.start_index(), w.end_index()), (8, 1, 8));
    }

    #[test]
    fn window_of_empty_transcript() {
        assert_eq!(Transcript::new("x").window(8).unwrap_err(), TranscriptError::EmptyWindow);
    }

    #[test]
    fn injections_must_increase() {
        let mut t = transcript_of(10);
        let inj = |after_step| InjectedGuidance {
            after_step,
            content: "c".into(),
            source_report_id: "r".into(),
        };
        t.add_injection(inj(5)).unwrap();
        assert!(t.add_injection(inj(5)).is_err());
        assert!(t.add_injection(inj(11)).is_err());
        t.add_injection(inj(10)).unwrap();
    }

    #[test]
    fn tool_call_invariants() {
        assert!(ToolCall::submit().validate().is_ok());
        let mut bad = ToolCall::submit();
        bad.arguments.insert("x".into(), "y".into());
        assert!(bad.validate().is_err());
        let mut editor = ToolCall::editor(EditorCommand::View, [("path", "a")]);
        assert!(editor.validate().is_ok());
        editor.subcommand = None;
        assert!(editor.validate().is_err());
        let mut bash = ToolCall::bash("ls");
        bash.subcommand = Some(EditorCommand::View);
        assert!(bash.validate().is_err());
    }

    #[test]
    fn long_observation_keeps_head_and_tail() {
        let text: String = (0..20_000).map(|i| if i < 10_000 { 'a' } else { 'b' }).collect();
        let out = truncate_observation(&text);
        assert!(out.starts_with(&"a".repeat(8_000)));
        assert!(out.ends_with(&"b".repeat(8_000)));
        assert!(out.contains("4000 characters truncated"));
        assert_eq!(truncate_observation("short"), "short");
        let exact = "x".repeat(OBSERVATION_LIMIT);
        assert_eq!(truncate_observation(&exact), exact);
    }
}
