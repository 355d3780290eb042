//! PRM prompt assembly. A prompt is a fixed sequence of blocks joined by
//! blank lines; each variant axis toggles or rewords exactly one block.

use super::taxonomy::{Family, Taxonomy};
use super::variant::{FeedbackStyle, PrmVariant};

pub const CONTEXT_BEGIN: &str = "<trajectory_context>";
pub const CONTEXT_END: &str = "</trajectory_context>";

/// Contract line requiring a window verdict; present for taxonomy styles.
pub const VERDICT_RULE: &str = "VERDICT: either `optimal` or `suboptimal`";
/// Contract line requiring a recommended action; present for DR.
pub const NEXT_ACTION_RULE: &str = "NEXT_ACTION: exactly one action block";

pub const SYSTEM_PROMPT: &str =
    "You supervise an autonomous software engineering agent and give it course-correcting feedback.";

/// Blocks in order; `None` marks a block the variant omits.
pub fn prompt_blocks(variant: &PrmVariant, taxonomy: &Taxonomy, context: &str) -> Vec<Option<String>> {
    vec![
        Some(preamble(variant.feedback_style)),
        variant.uses_taxonomy().then(|| taxonomy_block(taxonomy)),
        variant.include_example.then(|| example_block(variant)),
        Some(format!("{CONTEXT_BEGIN}\n{context}\n{CONTEXT_END}")),
        Some(contract_block(variant)),
        variant.action_recommendation.then(action_block),
    ]
}

/// g_t's input: the variant-conditioned prompt over the serialized context.
pub fn build_prompt(variant: &PrmVariant, taxonomy: &Taxonomy, context: &str) -> String {
    prompt_blocks(variant, taxonomy, context).into_iter().flatten().collect::<Vec<_>>().join("\n\n")
}

/// The serialized context embedded in a prompt, if any.
pub fn extract_context(prompt: &str) -> Option<&str> {
    let start = prompt.find(&format!("{CONTEXT_BEGIN}\n"))? + CONTEXT_BEGIN.len() + 1;
    let end = prompt.rfind(&format!("\n{CONTEXT_END}"))?;
    (start <= end).then(|| &prompt[start..end])
}

fn preamble(style: FeedbackStyle) -> String {
    let common = "You are reviewing the most recent steps of an agent that is resolving a GitHub issue \
        in a repository. Each step has the agent's THOUGHT, the ACTION it took and the resulting \
        OBSERVATION. Your feedback will be shown to the agent before its next step.";
    let focus = match style {
        FeedbackStyle::Simple => {
            "Judge whether the agent is making efficient progress toward resolving the issue and, \
             if it is not, explain what is going wrong and how it should proceed."
        }
        FeedbackStyle::Concise => {
            "Classify any trajectory-level inefficiency using the taxonomy below and give brief, \
             concrete feedback."
        }
        FeedbackStyle::Detailed => {
            "Classify any trajectory-level inefficiency using the taxonomy below. Ground every \
             detected category in specific steps of the trajectory and give detailed feedback \
             built on the paired recovery actions."
        }
    };
    format!("{common}\n{focus}")
}

fn taxonomy_block(taxonomy: &Taxonomy) -> String {
    let mut out = String::from("## Taxonomy of trajectory-level inefficiencies");
    for family in Family::ALL {
        out.push_str(&format!("\n\n### {}", family.title()));
        for c in taxonomy.categories().iter().filter(|c| c.family == family) {
            out.push_str(&format!(
                "\n- `{}` ({}): {}\n  Recovery: {}",
                c.id, c.name, c.definition, c.recovery_action
            ));
        }
    }
    out
}

fn example_block(variant: &PrmVariant) -> String {
    let trajectory = "Steps 4-8: the agent opens `src/parser.py` with the editor, runs \
        `grep -n parse_header src/parser.py`, opens `src/parser.py` again, runs the same grep again, \
        then opens `src/parser.py` a third time. No edit has been made.";
    let (reasoning, guidance) = match variant.feedback_style {
        FeedbackStyle::Concise => (
            "step_repetition: steps 6-8 repeat steps 4-5 with no new information.",
            "Stop re-reading src/parser.py; edit parse_header at the line grep already reported.",
        ),
        _ => (
            "step_repetition: steps 6 and 7 re-execute the view and grep from steps 4 and 5, and \
             step 8 opens the same file a third time. The observations are identical each time, so \
             the agent already has the location of parse_header (line 42) but has not acted on it.",
            "You have viewed src/parser.py three times and run the same grep twice; both already \
             show parse_header at line 42. Do not reopen the file. Make the fix described in the \
             issue with a str_replace edit at line 42, then run the failing test once to confirm.",
        ),
    };
    let mut out = format!(
        "## Example\nTrajectory excerpt:\n{trajectory}\n\nExample answer:\nVERDICT: suboptimal\n\
         CATEGORIES: step_repetition\nREASONING:\n{reasoning}\nGUIDANCE:\n{guidance}"
    );
    if variant.action_recommendation {
        out.push_str(
            "\nNEXT_ACTION:\n```str_replace_editor\n{\"command\": \"view\", \"path\": \"src/parser.py\", \
             \"view_range\": [40, 44]}\n```",
        );
    }
    out
}

fn contract_block(variant: &PrmVariant) -> String {
    let length = match variant.feedback_style {
        FeedbackStyle::Concise => "Keep REASONING and GUIDANCE to at most two sentences each.",
        FeedbackStyle::Simple | FeedbackStyle::Detailed => {
            "Make REASONING a step-by-step analysis that cites step numbers, and GUIDANCE specific \
             enough to act on immediately."
        }
    };
    let mut out = String::from(
        "## Output format\nAnswer with the following sections, each starting on its own line with \
         the section tag:",
    );
    if variant.has_verdict() {
        out.push_str(&format!(
            "\n{VERDICT_RULE}. `suboptimal` if any category applies.\
             \nCATEGORIES: comma-separated category ids from the taxonomy, or `none`."
        ));
    }
    out.push_str(
        "\nREASONING: your analysis of the recent steps.\
         \nGUIDANCE: natural-language feedback addressed to the agent.",
    );
    out.push('\n');
    out.push_str(length);
    out
}

fn action_block() -> String {
    format!(
        "## Next action\nAlso prescribe the single next action the agent should take, using the \
         agent's own action syntax:\n{NEXT_ACTION_RULE} (```bash```, ```str_replace_editor``` or ```submit```)."
    )
}
