//! Inference-time trajectory supervision for tool-using code agents.
//!
//! A ReAct-style policy loop drives a sandboxed repository workspace while a
//! process reward model (PRM) periodically reviews the most recent steps,
//! classifies trajectory-level inefficiencies against a fixed taxonomy and
//! injects corrective guidance back into the policy's context.
//!
//! Module map:
//! - [`transcript`]: steps, windows, context serialization and trajectory files.
//! - [`env`]: instances, workspaces, the editor/bash action space, patches and acceptance.
//! - [`agent`]: the policy loop.
//! - [`prm`]: taxonomy, variants, prompt construction, guidance parsing and supervision.
//! - [`backend`]: chat-completion backends, remote and scripted.
//! - [`metrics`]: resolution/patch rates, token averages and cost accounting.
//! - [`harness`]: run orchestration, evaluation, reporting and offline analysis.

pub mod agent;
pub mod backend;
pub mod env;
pub mod harness;
pub mod metrics;
pub mod prm;
pub mod transcript;

pub use agent::{run_instance, AgentConfig, TrajectoryResult};
pub use backend::{ChatMessage, ModelBackend, Role, SamplingParams, TokenUsage};
pub use env::{Instance, Patch, Workspace};
pub use prm::{GuidanceReport, PrmVariant, SupervisorConfig, Taxonomy};
pub use transcript::{Step, ToolCall, Transcript, Window};
