//! Parsing tagged PRM output into a [`GuidanceReport`] and projecting it
//! into the text the policy sees.

use serde::{Deserialize, Serialize};

use super::taxonomy::Taxonomy;
use super::variant::{PolicyInput, PrmVariant, VariantName};
use super::PrmError;
use crate::backend::TokenUsage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowVerdict {
    Optimal,
    Suboptimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GuidanceReport {
    pub id: String,
    pub variant: VariantName,
    pub invoked_at_step: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_verdict: Option<WindowVerdict>,
    #[serde(default)]
    pub detected_categories: Vec<String>,
    pub reasoning: String,
    pub guidance: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommended_action: Option<String>,
    /// Category tokens the parser did not recognize.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub prm_usage: TokenUsage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Verdict,
    Categories,
    Reasoning,
    Guidance,
    NextAction,
}

const TAGS: [(&str, Tag); 5] = [
    ("VERDICT", Tag::Verdict),
    ("CATEGORIES", Tag::Categories),
    ("REASONING", Tag::Reasoning),
    ("GUIDANCE", Tag::Guidance),
    ("NEXT_ACTION", Tag::NextAction),
];

fn section_start(line: &str) -> Option<(Tag, &str)> {
    let trimmed = line.trim_start_matches(|c: char| c == '#' || c == '*' || c.is_whitespace());
    TAGS.iter().find_map(|(name, tag)| {
        let rest = trimmed.strip_prefix(name)?;
        let rest = rest.trim_start_matches('*');
        let rest = rest.strip_prefix(':')?;
        Some((*tag, rest.trim_start_matches('*').trim()))
    })
}

fn sections(raw: &str) -> Vec<(Tag, String)> {
    let mut out: Vec<(Tag, Vec<&str>)> = Vec::new();
    let mut in_fence = false;
    for line in raw.lines() {
        if !in_fence {
            if let Some((tag, inline)) = section_start(line) {
                out.push((tag, if inline.is_empty() { vec![] } else { vec![inline] }));
                continue;
            }
        }
        if line.trim_start().starts_with("```") {
            in_fence = !in_fence;
        }
        if let Some((_, body)) = out.last_mut() {
            body.push(line);
        }
    }
    out.into_iter().map(|(tag, lines)| (tag, lines.join("\n").trim().to_owned())).collect()
}

/// Parses tagged PRM output for `variant`.
///
/// `id`, `invoked_at_step` and `prm_usage` are left for the caller to fill.
pub fn parse_guidance(raw: &str, variant: &PrmVariant, taxonomy: &Taxonomy) -> Result<GuidanceReport, PrmError> {
    let parsed = sections(raw);
    let get = |tag: Tag| parsed.iter().find(|(t, _)| *t == tag).map(|(_, body)| body.as_str());
    let guidance = get(Tag::Guidance)
        .filter(|g| !g.is_empty())
        .ok_or_else(|| PrmError::Parse("missing GUIDANCE section".into()))?
        .to_owned();
    let reasoning = get(Tag::Reasoning).unwrap_or_default().to_owned();

    let mut window_verdict = None;
    let mut detected_categories = Vec::new();
    let mut warnings = Vec::new();
    if variant.has_verdict() {
        let verdict = get(Tag::Verdict).ok_or_else(|| PrmError::Parse("missing VERDICT section".into()))?;
        let word = verdict
            .split_whitespace()
            .next()
            .unwrap_or_default()
            .trim_matches(|c: char| !c.is_alphabetic())
            .to_lowercase();
        window_verdict = Some(match word.as_str() {
            "optimal" => WindowVerdict::Optimal,
            "suboptimal" => WindowVerdict::Suboptimal,
            _ => return Err(PrmError::Parse(format!("unrecognized verdict {verdict:?}"))),
        });
        let listed = get(Tag::Categories).unwrap_or_default();
        for token in listed.split([',', '\n']) {
            let token = token.trim().trim_matches(|c| c == '[' || c == ']' || c == '-').trim();
            if token.is_empty() || token.eq_ignore_ascii_case("none") {
                continue;
            }
            match taxonomy.resolve(token) {
                Some(c) if !detected_categories.contains(&c.id) => detected_categories.push(c.id.clone()),
                Some(_) => {}
                None => warnings.push(token.to_owned()),
            }
        }
        if !detected_categories.is_empty() && window_verdict == Some(WindowVerdict::Optimal) {
            return Err(PrmError::Parse("categories detected in a window marked optimal".into()));
        }
    }

    let recommended_action = if variant.action_recommendation {
        let action = get(Tag::NextAction)
            .filter(|a| !a.is_empty())
            .ok_or_else(|| PrmError::Parse("missing NEXT_ACTION section".into()))?;
        Some(action.to_owned())
    } else {
        None
    };

    Ok(GuidanceReport {
        id: String::new(),
        variant: variant.name,
        invoked_at_step: 0,
        window_verdict,
        detected_categories,
        reasoning,
        guidance,
        recommended_action,
        warnings,
        prm_usage: TokenUsage::default(),
    })
}

/// The injection text the policy receives for `report`.
pub fn project_for_policy(report: &GuidanceReport, variant: &PrmVariant) -> String {
    let mut out = match variant.policy_input {
        PolicyInput::GuidanceOnly => report.guidance.clone(),
        PolicyInput::GuidancePlusReasoning if report.reasoning.is_empty() => report.guidance.clone(),
        PolicyInput::GuidancePlusReasoning => {
            format!("Analysis:\n{}\n\nGuidance:\n{}", report.reasoning, report.guidance)
        }
    };
    if variant.action_recommendation {
        if let Some(action) = &report.recommended_action {
            out.push_str("\n\nRecommended next action:\n");
            out.push_str(action);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(raw: &str, name: VariantName) -> Result<GuidanceReport, PrmError> {
        parse_guidance(raw, &PrmVariant::preset(name), &Taxonomy::default())
    }

    const D_SUBOPTIMAL: &str = "VERDICT: suboptimal\nCATEGORIES: step_repetition\nREASONING:\nSteps 3 and 5 repeat.\nGUIDANCE:\nStop repeating.";

    #[test]
    fn detailed_suboptimal() {
        let r = parse(D_SUBOPTIMAL, VariantName::D).unwrap();
        assert_eq!(r.window_verdict, Some(WindowVerdict::Suboptimal));
        assert_eq!(r.detected_categories, vec!["step_repetition"]);
        assert_eq!(r.reasoning, "Steps 3 and 5 repeat.");
        assert_eq!(r.guidance, "Stop repeating.");
    }

    #[test]
    fn detailed_optimal_empty_categories() {
        let r = parse("VERDICT: optimal\nCATEGORIES: none\nREASONING: fine\nGUIDANCE: keep going", VariantName::D).unwrap();
        assert_eq!(r.window_verdict, Some(WindowVerdict::Optimal));
        assert!(r.detected_categories.is_empty());
    }

    #[test]
    fn dr_requires_next_action() {
        assert!(matches!(parse(D_SUBOPTIMAL, VariantName::DR), Err(PrmError::Parse(_))));
        let with = format!("{D_SUBOPTIMAL}\nNEXT_ACTION:\n```submit\n```");
        let r = parse(&with, VariantName::DR).unwrap();
        assert_eq!(r.recommended_action.as_deref(), Some("```submit\n```"));
    }

    #[test]
    fn missing_guidance_is_an_error() {
        assert!(parse("VERDICT: optimal\nREASONING: x", VariantName::D).is_err());
        assert!(parse("GUIDANCE:\n", VariantName::S).is_err());
    }

    #[test]
    fn simple_ignores_verdict() {
        let r = parse(D_SUBOPTIMAL, VariantName::S).unwrap();
        assert_eq!(r.window_verdict, None);
        assert!(r.detected_categories.is_empty());
        let bare = parse("GUIDANCE: try the tests", VariantName::S).unwrap();
        assert_eq!(bare.guidance, "try the tests");
    }

    #[test]
    fn unknown_categories_become_warnings() {
        let r = parse(
            "VERDICT: suboptimal\nCATEGORIES: [Step Repetition, looping]\nGUIDANCE: g",
            VariantName::C,
        )
        .unwrap();
        assert_eq!(r.detected_categories, vec!["step_repetition"]);
        assert_eq!(r.warnings, vec!["looping"]);
    }

    #[test]
    fn optimal_with_categories_rejected() {
        assert!(parse("VERDICT: optimal\nCATEGORIES: step_repetition\nGUIDANCE: g", VariantName::D).is_err());
    }

    #[test]
    fn markdown_decorated_tags() {
        let r = parse("**VERDICT:** suboptimal\n## CATEGORIES: hallucination\n**GUIDANCE:** check", VariantName::DG).unwrap();
        assert_eq!(r.detected_categories, vec!["hallucination"]);
        assert_eq!(r.guidance, "check");
    }

    #[test]
    fn projections() {
        let dr_raw = format!("{D_SUBOPTIMAL}\nNEXT_ACTION:\n```submit\n```");
        let cg = parse(D_SUBOPTIMAL, VariantName::CG).unwrap();
        let text = project_for_policy(&cg, &PrmVariant::preset(VariantName::CG));
        assert_eq!(text, "Stop repeating.");
        let d = parse(D_SUBOPTIMAL, VariantName::D).unwrap();
        let text = project_for_policy(&d, &PrmVariant::preset(VariantName::D));
        assert!(text.contains("Steps 3 and 5 repeat.") && text.contains("Stop repeating."));
        let dr = parse(&dr_raw, VariantName::DR).unwrap();
        let text = project_for_policy(&dr, &PrmVariant::preset(VariantName::DR));
        assert!(text.ends_with("Recommended next action:\n```submit\n```"));
    }
}
