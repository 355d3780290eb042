//! The process reward model as course-corrector: taxonomy, variants, prompt
//! construction, guidance parsing and the supervision cycle.

mod guidance;
pub mod prompt;
mod supervisor;
mod taxonomy;
mod variant;

use thiserror::Error;

pub use guidance::{parse_guidance, project_for_policy, GuidanceReport, WindowVerdict};
pub use prompt::build_prompt;
pub use supervisor::{should_invoke, SupervisionCycle, SupervisionFailure, Supervisor, SupervisorConfig};
pub use taxonomy::{Family, Taxonomy, TaxonomyCategory};
pub use variant::{FeedbackStyle, PolicyInput, PrmVariant, VariantName};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrmError {
    #[error("taxonomy: {0}")]
    Taxonomy(String),
    #[error("unknown variant {0:?}; expected one of S, C, CG, D, DN, DG, DNG, DR")]
    UnknownVariant(String),
    #[error("unparseable PRM output: {0}")]
    Parse(String),
    #[error("invalid supervisor config: {0}")]
    Config(String),
}
