use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::PrmError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackStyle {
    /// No taxonomy: the PRM relies on its own notion of trajectory errors.
    Simple,
    Concise,
    Detailed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyInput {
    GuidancePlusReasoning,
    GuidanceOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantName {
    S,
    C,
    CG,
    D,
    DN,
    DG,
    DNG,
    DR,
}

impl VariantName {
    pub const ALL: [VariantName; 8] = [
        VariantName::S,
        VariantName::C,
        VariantName::CG,
        VariantName::D,
        VariantName::DN,
        VariantName::DG,
        VariantName::DNG,
        VariantName::DR,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            VariantName::S => "S",
            VariantName::C => "C",
            VariantName::CG => "CG",
            VariantName::D => "D",
            VariantName::DN => "DN",
            VariantName::DG => "DG",
            VariantName::DNG => "DNG",
            VariantName::DR => "DR",
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = PrmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VariantName::ALL
            .into_iter()
            .find(|v| v.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| PrmError::UnknownVariant(s.to_owned()))
    }
}

/// A preset combination of the supervision axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PrmVariant {
    pub name: VariantName,
    pub feedback_style: FeedbackStyle,
    pub include_example: bool,
    pub policy_input: PolicyInput,
    pub action_recommendation: bool,
}

impl PrmVariant {
    pub fn preset(name: VariantName) -> Self {
        use FeedbackStyle::*;
        use PolicyInput::*;
        let (feedback_style, include_example, policy_input, action_recommendation) = match name {
            VariantName::S => (Simple, false, GuidancePlusReasoning, false),
            VariantName::C => (Concise, true, GuidancePlusReasoning, false),
            VariantName::CG => (Concise, true, GuidanceOnly, false),
            VariantName::D => (Detailed, true, GuidancePlusReasoning, false),
            VariantName::DN => (Detailed, false, GuidancePlusReasoning, false),
            VariantName::DG => (Detailed, true, GuidanceOnly, false),
            VariantName::DNG => (Detailed, false, GuidanceOnly, false),
            VariantName::DR => (Detailed, true, GuidancePlusReasoning, true),
        };
        PrmVariant { name, feedback_style, include_example, policy_input, action_recommendation }
    }

    pub fn uses_taxonomy(&self) -> bool {
        self.feedback_style != FeedbackStyle::Simple
    }

    /// Whether reports carry an optimal/suboptimal window verdict.
    pub fn has_verdict(&self) -> bool {
        self.uses_taxonomy()
    }
}

impl FromStr for PrmVariant {
    type Err = PrmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.parse().map(PrmVariant::preset)
    }
}
