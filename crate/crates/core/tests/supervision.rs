mod common;

use std::sync::Arc;

use common::*;
use coursecorrect::agent::{build_context, run_instance, AgentConfig, FEEDBACK_PREFIX};
use coursecorrect::backend::{BackendError, ChatMessage, Completion, ErrorPattern, ModelBackend, SamplingParams, ScriptedPolicy};
use coursecorrect::env::ShellMode;
use coursecorrect::prm::{PrmVariant, SupervisionFailure, Supervisor, SupervisorConfig, Taxonomy, VariantName, WindowVerdict};
use coursecorrect::transcript::Transcript;

const D_REPLY: &str = "VERDICT: suboptimal\nCATEGORIES: step_repetition\nREASONING:\nSteps 2 and 4 repeat `ls`.\nGUIDANCE:\nStop listing files and edit calc.sh.";

fn supervisor(variant: VariantName, backend: Arc<dyn ModelBackend>) -> Supervisor {
    Supervisor::new(SupervisorConfig::new(PrmVariant::preset(variant)), Arc::new(Taxonomy::default()), backend).unwrap()
}

fn transcript(n: usize) -> Transcript {
    let mut t = Transcript::new("calc-0");
    for i in 1..=n {
        t.append_step(step(i, bash(if i % 2 == 0 { "ls" } else { "pwd" }), "out")).unwrap();
    }
    t
}

#[test]
fn fixed_reply_yields_report_and_injection() {
    let prm = Arc::new(FixedBackend::new(D_REPLY));
    let sup = supervisor(VariantName::D, prm.clone());
    let cycle = sup.supervise(&transcript(5), "fix add");
    let (report, injection) = cycle.result.unwrap();
    assert_eq!(report.invoked_at_step, 5);
    assert_eq!(report.id, "calc-0:prm@5");
    assert_eq!(report.window_verdict, Some(WindowVerdict::Suboptimal));
    assert_eq!(report.detected_categories, vec!["step_repetition"]);
    assert!(injection.contains("Steps 2 and 4 repeat"));
    assert!(injection.contains("Stop listing files"));
    assert_eq!(cycle.calls, 1);

    let seen = prm.seen.lock().unwrap();
    let (messages, params) = &seen[0];
    assert_eq!(messages.len(), 2);
    assert!(messages[1].content.contains("<trajectory_context>"));
    assert_eq!((params.temperature, params.top_p), (0.0, 1.0));
}

#[test]
fn window_is_limited_to_k_steps() {
    let prm = Arc::new(FixedBackend::new(D_REPLY));
    let sup = supervisor(VariantName::D, prm.clone());
    sup.supervise(&transcript(20), "fix add").result.unwrap();
    let prompt = prm.seen.lock().unwrap()[0].0[1].content.clone();
    assert!(prompt.contains("STEP 13"), "{prompt}");
    assert!(prompt.contains("STEP 20"));
    assert!(!prompt.contains("STEP 12"));
}

#[test]
fn guidance_only_variant_hides_reasoning() {
    let sup = supervisor(VariantName::DG, Arc::new(FixedBackend::new(D_REPLY)));
    let (_, injection) = sup.supervise(&transcript(5), "fix add").result.unwrap();
    assert_eq!(injection, "Stop listing files and edit calc.sh.");
}

#[test]
fn unparseable_twice_skips_the_cycle() {
    let prm = Arc::new(FixedBackend::new("I think it is fine."));
    let sup = supervisor(VariantName::D, prm.clone());
    let cycle = sup.supervise(&transcript(5), "fix add");
    assert!(matches!(cycle.result, Err(SupervisionFailure::Unparseable(_))));
    assert_eq!(cycle.calls, 2);
    assert_eq!(cycle.usage.prompt_tokens, 200);
    let seen = prm.seen.lock().unwrap();
    assert_eq!(seen[1].0.len(), 4, "re-ask carries the bad answer and a reminder");
}

struct Failing;

impl ModelBackend for Failing {
    fn model_id(&self) -> &str {
        "failing"
    }

    fn chat(&self, _: &[ChatMessage], _: SamplingParams) -> Result<Completion, BackendError> {
        Err(BackendError::Transport { attempts: 4, message: "down".into() })
    }
}

#[test]
fn backend_failure_skips_without_retry() {
    let sup = supervisor(VariantName::D, Arc::new(Failing));
    let cycle = sup.supervise(&transcript(5), "fix add");
    assert!(matches!(cycle.result, Err(SupervisionFailure::Backend(_))));
    assert_eq!(cycle.calls, 0);
}

#[test]
fn empty_transcript_is_not_supervised() {
    let sup = supervisor(VariantName::D, Arc::new(FixedBackend::new(D_REPLY)));
    assert!(matches!(sup.supervise(&Transcript::new("x"), "d").result, Err(SupervisionFailure::EmptyTranscript)));
}

#[test]
fn injection_lands_after_step_five_in_policy_context() {
    let inst = calc_instance(0);
    let policy = ScriptedPolicy::new(ErrorPattern::LoopKActions { cycle: 2 }, &[inst.clone()], 0).unwrap();
    let prm = Arc::new(FixedBackend::new(D_REPLY));
    let sup = supervisor(VariantName::D, prm.clone());
    let cfg = AgentConfig { shell: ShellMode::Fake, max_steps: 7, ..AgentConfig::default() };
    let result = run_instance(&inst, &policy, Some(&sup), &cfg).unwrap();
    let injections = result.transcript.injections();
    assert_eq!(injections.len(), 1);
    assert_eq!(injections[0].after_step, 5);
    assert_eq!(injections[0].source_report_id, "calc-0:prm@5");
    assert_eq!(result.supervision_attempts, 1);
    assert_eq!(result.prm_usage_total.prompt_tokens, 100);

    let ctx = build_context(cfg.system_prompt(), &inst, &result.transcript);
    // system, problem, then (assistant, observation) per step
    let feedback = &ctx[2 + 2 * 5];
    assert!(feedback.content.starts_with(FEEDBACK_PREFIX));
    assert!(feedback.content.contains("Stop listing files"));
}

#[test]
fn scripted_policy_obeys_taxonomy_guidance() {
    let inst = calc_instance(2);
    let policy = ScriptedPolicy::new(ErrorPattern::LoopKActions { cycle: 2 }, &[inst.clone()], 0).unwrap();
    let reply = "VERDICT: suboptimal\nCATEGORIES: step_repetition\nREASONING:\nSteps 2 and 4 repeat `ls`.\nGUIDANCE:\nStep repetition: stop listing files and edit calc.sh.";
    let sup = supervisor(VariantName::D, Arc::new(FixedBackend::new(reply)));
    let cfg = AgentConfig { shell: ShellMode::Bash, ..AgentConfig::default() };
    let result = run_instance(&inst, &policy, Some(&sup), &cfg).unwrap();
    assert!(result.resolved());
    assert!(result.transcript.len() < 75);
}

#[test]
fn guidance_without_categories_is_ignored_by_scripted_policy() {
    let inst = calc_instance(0);
    let policy = ScriptedPolicy::new(ErrorPattern::LoopKActions { cycle: 2 }, &[inst.clone()], 0).unwrap();
    let reply = "VERDICT: optimal\nCATEGORIES: none\nREASONING: fine\nGUIDANCE: keep going";
    let sup = supervisor(VariantName::D, Arc::new(FixedBackend::new(reply)));
    let cfg = AgentConfig { shell: ShellMode::Fake, max_steps: 20, ..AgentConfig::default() };
    let result = run_instance(&inst, &policy, Some(&sup), &cfg).unwrap();
    assert_eq!(result.transcript.len(), 20);
    assert!(!result.resolved());
}
