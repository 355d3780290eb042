//! Rule-based trajectory detectors and the scripted PRM built on them.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use super::{check_messages, scripted_usage, BackendError, ChatMessage, Completion, ModelBackend, SamplingParams};
use crate::prm::prompt::{extract_context, NEXT_ACTION_RULE, VERDICT_RULE};
use crate::prm::Taxonomy;
use crate::transcript::{parse_context, Tool, ToolCall, Window};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorRule {
    /// Two identical tool calls in the window.
    StepRepetition,
    /// A block of two or more actions immediately repeated.
    Loop,
    /// A passing test run followed by two or more non-submit steps.
    TerminationUnawareness,
}

impl DetectorRule {
    pub const ALL: [DetectorRule; 3] =
        [DetectorRule::StepRepetition, DetectorRule::Loop, DetectorRule::TerminationUnawareness];

    pub fn as_str(self) -> &'static str {
        match self {
            DetectorRule::StepRepetition => "step_repetition",
            DetectorRule::Loop => "loop",
            DetectorRule::TerminationUnawareness => "termination_unawareness",
        }
    }

    /// Taxonomy category the rule reports under. Loops are repeated
    /// re-execution of completed actions, so they share step repetition.
    pub fn category(self) -> &'static str {
        match self {
            DetectorRule::StepRepetition | DetectorRule::Loop => "step_repetition",
            DetectorRule::TerminationUnawareness => "termination_unawareness",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub rule: DetectorRule,
    /// Step ordinals the finding is about.
    pub steps: Vec<usize>,
    pub detail: String,
}

pub fn has_duplicate_call<T: Eq + Hash>(actions: &[T]) -> bool {
    let mut seen = HashSet::with_capacity(actions.len());
    actions.iter().any(|a| !seen.insert(a))
}

/// First `(start, period)` such that `actions[start..start+period]` is
/// immediately followed by an identical block, with `period >= 2`.
/// Shortest period wins, then earliest start.
pub fn find_cycle<T: PartialEq>(actions: &[T]) -> Option<(usize, usize)> {
    let n = actions.len();
    for period in 2..=n / 2 {
        // Length of the current run of positions i with a[i] == a[i + period].
        let mut run = 0;
        for i in 0..n - period {
            if actions[i] == actions[i + period] {
                run += 1;
                if run == period {
                    return Some((i + 1 - period, period));
                }
            } else {
                run = 0;
            }
        }
    }
    None
}

/// Whether an observation reads as a passing test run: it mentions `passed`
/// or `ok` as a word, and nothing that looks like a failure.
pub fn is_successful_test_output(observation: &str) -> bool {
    let lower = observation.to_lowercase();
    if lower.contains("[exit code") || lower.contains("timed out") {
        return false;
    }
    let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    let positive = words.iter().any(|w| matches!(*w, "passed" | "ok"));
    let negative = words.iter().any(|w| w.contains("fail") || w.contains("error"));
    positive && !negative
}

/// Runs every rule over `window`.
pub fn detect(window: &Window) -> Vec<Finding> {
    let steps = window.steps();
    let actions: Vec<&ToolCall> = steps.iter().map(|s| &s.action).collect();
    let mut findings = Vec::new();

    if has_duplicate_call(&actions) {
        let mut first_seen = Vec::<&ToolCall>::new();
        let mut involved = Vec::new();
        for (i, a) in actions.iter().enumerate() {
            if first_seen.contains(a) || actions[i + 1..].contains(a) {
                involved.push(steps[i].index);
            }
            first_seen.push(a);
        }
        let (i, j) = first_duplicate(&actions).expect("duplicate exists");
        findings.push(Finding {
            rule: DetectorRule::StepRepetition,
            steps: involved,
            detail: format!("steps {} and {} issue the identical action `{}`", steps[i].index, steps[j].index, actions[i]),
        });
    }

    if let Some((start, period)) = find_cycle(&actions) {
        let from = steps[start].index;
        findings.push(Finding {
            rule: DetectorRule::Loop,
            steps: (from..from + 2 * period).collect(),
            detail: format!(
                "steps {} to {} repeat the same {period}-action sequence twice in a row",
                from,
                from + 2 * period - 1
            ),
        });
    }

    let passing = steps.iter().position(|s| s.action.tool != Tool::Submit && is_successful_test_output(&s.observation));
    if let Some(p) = passing {
        let after: Vec<usize> =
            steps[p + 1..].iter().filter(|s| s.action.tool != Tool::Submit).map(|s| s.index).collect();
        if after.len() >= 2 {
            findings.push(Finding {
                rule: DetectorRule::TerminationUnawareness,
                steps: after.clone(),
                detail: format!(
                    "tests passed at step {} but the agent took {} more steps without submitting",
                    steps[p].index,
                    after.len()
                ),
            });
        }
    }
    findings
}

fn first_duplicate<T: PartialEq>(actions: &[T]) -> Option<(usize, usize)> {
    (0..actions.len()).find_map(|j| (0..j).find(|&i| actions[i] == actions[j]).map(|i| (i, j)))
}

/// Which tagged sections a response must carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ResponseShape {
    pub verdict: bool,
    pub next_action: bool,
}

impl ResponseShape {
    /// Infers the expected shape from the output contract in a prompt.
    pub fn from_prompt(prompt: &str) -> Self {
        ResponseShape { verdict: prompt.contains(VERDICT_RULE), next_action: prompt.contains(NEXT_ACTION_RULE) }
    }
}

/// Renders findings as a tagged PRM response.
pub fn render_detection(window: &Window, findings: &[Finding], taxonomy: &Taxonomy, shape: ResponseShape) -> String {
    let mut categories: Vec<&str> = Vec::new();
    for f in findings {
        if !categories.contains(&f.rule.category()) {
            categories.push(f.rule.category());
        }
    }
    let mut out = String::new();
    if shape.verdict {
        let verdict = if categories.is_empty() { "optimal" } else { "suboptimal" };
        let _ = writeln!(out, "VERDICT: {verdict}");
        let listed = if categories.is_empty() { "none".to_owned() } else { categories.join(", ") };
        let _ = writeln!(out, "CATEGORIES: {listed}");
    }
    out.push_str("REASONING:\n");
    if findings.is_empty() {
        let _ = writeln!(
            out,
            "Steps {} to {} make steady progress; no repeated actions, loops or post-completion activity.",
            window.start_index(),
            window.end_index()
        );
    } else {
        for f in findings {
            let _ = writeln!(out, "- {}: {}.", f.rule.as_str(), f.detail);
        }
    }
    out.push_str("GUIDANCE:\n");
    if categories.is_empty() {
        out.push_str("Continue with the current plan.\n");
    } else {
        for id in &categories {
            match taxonomy.get(id) {
                Some(c) => {
                    let _ = writeln!(out, "Detected {}: {}", c.name.to_lowercase(), c.recovery_action);
                }
                None => {
                    let _ = writeln!(out, "Detected {id}.");
                }
            }
        }
    }
    if shape.next_action {
        out.push_str("NEXT_ACTION:\n");
        if categories.contains(&"termination_unawareness") {
            out.push_str("```submit\n```\n");
        } else {
            out.push_str("```bash\nls\n```\n");
        }
    }
    out
}

/// A PRM backend that answers with the rule detectors' verdict on the
/// window embedded in the prompt.
#[derive(Debug, Clone)]
pub struct ScriptedPrm {
    model_id: String,
    taxonomy: Taxonomy,
}

impl ScriptedPrm {
    pub fn new(taxonomy: Taxonomy) -> Self {
        ScriptedPrm { model_id: "scripted-prm".to_owned(), taxonomy }
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    /// Response text for a PRM prompt.
    pub fn respond(&self, prompt: &str) -> Result<String, BackendError> {
        let context = extract_context(prompt)
            .ok_or_else(|| BackendError::InvalidRequest("prompt has no trajectory context".into()))?;
        let (_, window) =
            parse_context(context).map_err(|e| BackendError::InvalidRequest(format!("trajectory context: {e}")))?;
        if window.is_empty() {
            return Err(BackendError::InvalidRequest("empty window".into()));
        }
        let findings = detect(&window);
        Ok(render_detection(&window, &findings, &self.taxonomy, ResponseShape::from_prompt(prompt)))
    }
}

impl Default for ScriptedPrm {
    fn default() -> Self {
        ScriptedPrm::new(Taxonomy::default())
    }
}

impl ModelBackend for ScriptedPrm {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn chat(&self, messages: &[ChatMessage], _params: SamplingParams) -> Result<Completion, BackendError> {
        check_messages(messages)?;
        let prompt = messages
            .iter()
            .rev()
            .find(|m| extract_context(&m.content).is_some())
            .ok_or_else(|| BackendError::InvalidRequest("no message carries a trajectory context".into()))?;
        let text = self.respond(&prompt.content)?;
        let usage = scripted_usage(messages, &text);
        Ok(Completion { text, usage })
    }
}
