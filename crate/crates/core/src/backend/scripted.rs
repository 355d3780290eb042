//! A deterministic policy backend with injectable trajectory-level errors.
//!
//! The script is a pure function of the instance and the visible history:
//! the step number is the count of prior policy turns, and supervisor
//! feedback naming a taxonomy category switches the policy onto the golden
//! recovery path (finish the remaining fixing edits, then submit).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{check_messages, scripted_usage, BackendError, ChatMessage, Completion, ModelBackend, Role, SamplingParams};
use crate::agent::{render_action_block, render_turn, FEEDBACK_PREFIX};
use crate::env::{Instance, Patch};
use crate::prm::Taxonomy;
use crate::transcript::{EditorCommand, ToolCall};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "pattern", rename_all = "snake_case")]
pub enum ErrorPattern {
    /// Apply the gold patch, run the tests, submit.
    GoldenFix,
    /// Cycle through `cycle` read-only actions forever.
    LoopKActions { cycle: usize },
    /// Re-issue the same action every step.
    StepRepetition,
    /// Explore until `derail_step`, then work on unrelated files.
    TaskDerailment { derail_step: usize },
    /// Fix and verify, then keep re-verifying instead of submitting.
    TerminationUnawareness,
}

impl ErrorPattern {
    pub fn name(self) -> &'static str {
        match self {
            ErrorPattern::GoldenFix => "golden_fix",
            ErrorPattern::LoopKActions { .. } => "loop_k_actions",
            ErrorPattern::StepRepetition => "step_repetition",
            ErrorPattern::TaskDerailment { .. } => "task_derailment",
            ErrorPattern::TerminationUnawareness => "termination_unawareness",
        }
    }
}

impl fmt::Display for ErrorPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorPattern::LoopKActions { cycle } => write!(f, "loop_k_actions:{cycle}"),
            ErrorPattern::TaskDerailment { derail_step } => write!(f, "task_derailment:{derail_step}"),
            other => f.write_str(other.name()),
        }
    }
}

/// `name` or `name:param`, e.g. `loop_k_actions:3`.
impl FromStr for ErrorPattern {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let number = |default: usize| -> Result<usize, String> {
            match param {
                None => Ok(default),
                Some(p) => p.parse().ok().filter(|n| *n >= 1).ok_or_else(|| format!("bad parameter {p:?} for {name}")),
            }
        };
        let pattern = match name.trim().to_lowercase().replace('-', "_").as_str() {
            "golden_fix" | "golden" => ErrorPattern::GoldenFix,
            "loop_k_actions" | "loop" => ErrorPattern::LoopKActions { cycle: number(2)? },
            "step_repetition" => ErrorPattern::StepRepetition,
            "task_derailment" => ErrorPattern::TaskDerailment { derail_step: number(3)? },
            "termination_unawareness" => ErrorPattern::TerminationUnawareness,
            _ => return Err(format!("unknown scripted pattern {s:?}")),
        };
        if param.is_some() && !matches!(pattern, ErrorPattern::LoopKActions { .. } | ErrorPattern::TaskDerailment { .. }) {
            return Err(format!("{name} takes no parameter"));
        }
        Ok(pattern)
    }
}

#[derive(Debug, Clone)]
struct Script {
    /// Editor/bash calls that turn the snapshot into the gold tree.
    edits: Vec<ToolCall>,
    /// Runs every test and prints PASSED when all pass.
    verify: Option<ToolCall>,
    /// Distinct read-only actions.
    probes: Vec<ToolCall>,
}

const DERAIL_TARGETS: [&str; 4] = ["notes", "scratch", "todo", "draft"];

#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    model_id: String,
    pattern: ErrorPattern,
    seed: u64,
    scripts: HashMap<String, Script>,
    taxonomy: Taxonomy,
}

impl ScriptedPolicy {
    pub fn new(pattern: ErrorPattern, instances: &[Instance], seed: u64) -> Result<Self, BackendError> {
        let scripts = instances
            .iter()
            .map(|inst| Ok((inst.id.clone(), script_for(inst, seed)?)))
            .collect::<Result<_, BackendError>>()?;
        Ok(ScriptedPolicy {
            model_id: format!("scripted:{pattern}"),
            pattern,
            seed,
            scripts,
            taxonomy: Taxonomy::default(),
        })
    }

    pub fn with_taxonomy(mut self, taxonomy: Taxonomy) -> Self {
        self.taxonomy = taxonomy;
        self
    }

    pub fn pattern(&self) -> ErrorPattern {
        self.pattern
    }

    /// The gold edit sequence the policy uses for `instance_id`.
    pub fn fixing_edits(&self, instance_id: &str) -> Option<&[ToolCall]> {
        self.scripts.get(instance_id).map(|s| s.edits.as_slice())
    }

    fn next_turn(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        let instance_id = messages
            .get(1)
            .filter(|m| m.role == Role::User)
            .and_then(|m| m.content.strip_prefix("Instance: "))
            .and_then(|rest| rest.split('\n').next())
            .ok_or_else(|| BackendError::InvalidRequest("no instance header in the conversation".into()))?;
        let script = self
            .scripts
            .get(instance_id)
            .ok_or_else(|| BackendError::InvalidRequest(format!("no script for instance {instance_id:?}")))?;
        let history: Vec<&str> =
            messages.iter().filter(|m| m.role == Role::Assistant).map(|m| m.content.as_str()).collect();
        let t = history.len() + 1;

        let feedback = messages.iter().filter(|m| m.role == Role::User).find_map(|m| {
            let body = m.content.strip_prefix(FEEDBACK_PREFIX)?;
            let named = self.taxonomy.mentioned_in(body);
            (!named.is_empty()).then(|| named.iter().map(|c| c.name.to_lowercase()).collect::<Vec<_>>())
        });
        if let Some(named) = feedback {
            let done = |call: &ToolCall| {
                let block = render_action_block(call);
                history.iter().any(|h| h.contains(&block))
            };
            let turn = match script.edits.iter().find(|e| !done(e)) {
                Some(edit) => render_turn(&format!("Following the review ({}): applying the fix.", named.join(", ")), edit),
                None => render_turn("Following the review: the fix is in place, submitting.", &ToolCall::submit()),
            };
            return Ok(turn);
        }

        let e = script.edits.len();
        let probe = |i: usize| &script.probes[(i + self.seed as usize) % script.probes.len()];
        let turn = match self.pattern {
            ErrorPattern::GoldenFix => {
                if t <= e {
                    render_turn("Applying the fix.", &script.edits[t - 1])
                } else if let Some(verify) = script.verify.as_ref().filter(|_| t == e + 1) {
                    render_turn("Running the tests.", verify)
                } else {
                    render_turn("The fix is verified, submitting.", &ToolCall::submit())
                }
            }
            ErrorPattern::LoopKActions { cycle } => {
                let call = loop_action(script, (t - 1) % cycle.max(1), self.seed);
                render_turn("Inspecting the repository.", &call)
            }
            ErrorPattern::StepRepetition => render_turn("Checking the file again.", probe(0)),
            ErrorPattern::TaskDerailment { derail_step } => {
                if t < derail_step {
                    render_turn("Inspecting the repository.", probe(t - 1))
                } else {
                    let target = DERAIL_TARGETS[self.seed as usize % DERAIL_TARGETS.len()];
                    let call = ToolCall::editor(
                        EditorCommand::Create,
                        [("path", format!("{target}_{t}.md")), ("file_text", format!("unrelated idea {t}\n"))],
                    );
                    render_turn("Writing down an unrelated idea.", &call)
                }
            }
            ErrorPattern::TerminationUnawareness => {
                let verify = script.verify.clone().unwrap_or_else(|| ToolCall::bash("echo PASSED"));
                if t <= e {
                    render_turn("Applying the fix.", &script.edits[t - 1])
                } else if (t - e) % 2 == 1 {
                    render_turn("Running the tests once more to be sure.", &verify)
                } else {
                    render_turn("Looking around a bit more.", probe((t - e) / 2 - 1))
                }
            }
        };
        Ok(turn)
    }
}

fn loop_action(script: &Script, slot: usize, seed: u64) -> ToolCall {
    let len = script.probes.len();
    if slot < len {
        script.probes[(slot + seed as usize) % len].clone()
    } else {
        ToolCall::bash(format!("echo probe {slot}"))
    }
}

impl ModelBackend for ScriptedPolicy {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn chat(&self, messages: &[ChatMessage], _params: SamplingParams) -> Result<Completion, BackendError> {
        check_messages(messages)?;
        let text = self.next_turn(messages)?;
        let usage = scripted_usage(messages, &text);
        Ok(Completion { text, usage })
    }
}

fn script_for(instance: &Instance, seed: u64) -> Result<Script, BackendError> {
    let bad = |e: String| BackendError::InvalidRequest(format!("gold patch for {}: {e}", instance.id));
    let mut edits = Vec::new();
    if let Some(gold) = &instance.gold_patch {
        let patch = Patch::from_diff(gold.as_str()).map_err(|e| bad(e.to_string()))?;
        let target = patch.apply(&instance.files).map_err(|e| bad(e.to_string()))?;
        let paths: std::collections::BTreeSet<&String> = instance.files.keys().chain(target.keys()).collect();
        for path in paths {
            match (instance.files.get(path), target.get(path)) {
                (Some(a), Some(b)) if a == b => {}
                (None, Some(b)) => edits.push(create(path, b)),
                (Some(_), None) => edits.push(remove(path)),
                (Some(a), Some(b)) if a.is_empty() => {
                    edits.push(remove(path));
                    edits.push(create(path, b));
                }
                (Some(a), Some(b)) => edits.push(ToolCall::editor(
                    EditorCommand::StrReplace,
                    [("path", path.as_str()), ("old_str", a.as_str()), ("new_str", b.as_str())],
                )),
                (None, None) => unreachable!("path comes from one of the trees"),
            }
        }
    }
    let tests: Vec<&str> =
        instance.pass_to_pass.iter().chain(&instance.fail_to_pass).map(|t| t.command.as_str()).collect();
    let verify = (!tests.is_empty()).then(|| {
        let joined = tests.iter().map(|c| format!("( {c} )")).collect::<Vec<_>>().join(" && ");
        ToolCall::bash(format!("{joined} && echo PASSED"))
    });
    let mut probes = vec![ToolCall::bash("ls")];
    for path in instance.files.keys() {
        probes.push(ToolCall::editor(EditorCommand::View, [("path", path.as_str())]));
        probes.push(ToolCall::bash(format!("cat {}", quote(path))));
    }
    log::trace!("script for {} (seed {seed}): {} edits, {} probes", instance.id, edits.len(), probes.len());
    Ok(Script { edits, verify, probes })
}

fn create(path: &str, text: &str) -> ToolCall {
    ToolCall::editor(EditorCommand::Create, [("path", path), ("file_text", text)])
}

fn remove(path: &str) -> ToolCall {
    ToolCall::bash(format!("rm {}", quote(path)))
}

fn quote(path: &str) -> String {
    shlex::try_quote(path).map(|q| q.into_owned()).unwrap_or_else(|_| path.to_owned())
}
