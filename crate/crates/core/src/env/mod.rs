//! Repository environment: instances, sandboxed workspaces, the editor and
//! bash action space, patch extraction and the acceptance rule.

mod evaluate;
pub mod patch;
pub mod shell;
mod workspace;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use evaluate::{evaluate_patch, run_suite, validate_instance, AcceptanceVerdict, TestStatus};
pub use patch::{diff_trees, Patch, PatchError};
pub use shell::{BashOutput, ShellMode};
pub use workspace::Workspace;

/// Path → UTF-8 content, `/`-separated relative paths.
pub type FileTree = BTreeMap<String, String>;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("path escapes the workspace: {0}")]
    PathEscape(String),
    #[error("no such file: {0}")]
    NotFound(String),
    #[error("file already exists: {0}")]
    AlreadyExists(String),
    #[error("no match for old_str in {0}")]
    NoMatch(String),
    #[error("old_str is not unique in {path}: {occurrences} occurrences")]
    NotUnique { path: String, occurrences: usize },
    #[error("nothing to undo for {0}")]
    NothingToUndo(String),
    #[error("invalid line range {start}..{end} for a file of {lines} lines")]
    InvalidRange { start: usize, end: usize, lines: usize },
    #[error("binary file not supported: {0}")]
    Binary(String),
    #[error("invalid argument: {0}")]
    BadArgument(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("manifest error: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn as_str(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    #[default]
    Pass,
}

/// A shell command that passes when it exits 0 within its timeout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSpec {
    pub name: String,
    pub command: String,
    #[serde(default)]
    pub expected: Expected,
    #[serde(rename = "timeout_s", default = "default_test_timeout")]
    pub timeout_secs: f64,
}

fn default_test_timeout() -> f64 {
    60.0
}

impl TestSpec {
    pub fn new(name: impl Into<String>, command: impl Into<String>) -> Self {
        TestSpec {
            name: name.into(),
            command: command.into(),
            expected: Expected::Pass,
            timeout_secs: default_test_timeout(),
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// One task: problem description, repository snapshot and test suites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub description: String,
    pub difficulty: Difficulty,
    pub files: FileTree,
    #[serde(default)]
    pub pass_to_pass: Vec<TestSpec>,
    #[serde(default)]
    pub fail_to_pass: Vec<TestSpec>,
    /// Reference fix, used by scripted policies and fixture checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_patch: Option<String>,
}

impl Instance {
    /// Static checks that need no test execution.
    pub fn check_shape(&self) -> Result<(), EnvError> {
        let invalid = |msg: String| Err(EnvError::InvalidInstance(format!("{}: {msg}", self.id)));
        if self.id.trim().is_empty() {
            return invalid("empty id".into());
        }
        if self.files.is_empty() {
            return invalid("snapshot is empty".into());
        }
        if self.pass_to_pass.is_empty() && self.fail_to_pass.is_empty() {
            return invalid("both test suites are empty".into());
        }
        if let Some(path) = self.files.iter().find(|(_, c)| c.contains('\0')).map(|(p, _)| p) {
            return invalid(format!("binary file {path}"));
        }
        let mut names = BTreeSet::new();
        for test in self.pass_to_pass.iter().chain(&self.fail_to_pass) {
            if !(test.timeout_secs > 0.0) {
                return invalid(format!("test {} has non-positive timeout", test.name));
            }
            if !names.insert(test.name.as_str()) {
                return invalid(format!("duplicate test name {}", test.name));
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct RawInstance {
    id: String,
    description: String,
    difficulty: Difficulty,
    files: RawFiles,
    #[serde(default)]
    pass_to_pass: Vec<TestSpec>,
    #[serde(default)]
    fail_to_pass: Vec<TestSpec>,
    #[serde(default)]
    gold_patch: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawFiles {
    Inline(FileTree),
    Directory(String),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawManifest {
    One(RawInstance),
    Many(Vec<RawInstance>),
    Wrapped { instances: Vec<RawInstance> },
}

/// Parses a manifest: one instance object, an array of them, or
/// `{"instances": [...]}`. Directory references in `files` resolve against
/// `base_dir`. Only static checks run here; see [`load_manifest`].
pub fn parse_manifest(text: &str, base_dir: &Path) -> Result<Vec<Instance>, EnvError> {
    let raw: RawManifest = serde_json::from_str(text).map_err(|e| EnvError::Manifest(e.to_string()))?;
    let raw = match raw {
        RawManifest::One(one) => vec![one],
        RawManifest::Many(many) | RawManifest::Wrapped { instances: many } => many,
    };
    let mut seen = BTreeSet::new();
    let mut instances = Vec::with_capacity(raw.len());
    for r in raw {
        if !seen.insert(r.id.clone()) {
            return Err(EnvError::Manifest(format!("duplicate instance id {}", r.id)));
        }
        let files = match r.files {
            RawFiles::Inline(tree) => tree,
            RawFiles::Directory(dir) => workspace::read_tree(&base_dir.join(dir)).map_err(|e| match e {
                EnvError::Binary(p) => EnvError::InvalidInstance(format!("{}: binary file {p}", r.id)),
                other => other,
            })?,
        };
        let instance = Instance {
            id: r.id,
            description: r.description,
            difficulty: r.difficulty,
            files,
            pass_to_pass: r.pass_to_pass,
            fail_to_pass: r.fail_to_pass,
            gold_patch: r.gold_patch,
        };
        instance.check_shape()?;
        instances.push(instance);
    }
    Ok(instances)
}

/// Reads and fully validates a manifest, running every suite against the
/// unpatched snapshot.
pub fn load_manifest(path: &Path, shell: ShellMode) -> Result<Vec<Instance>, EnvError> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let instances = parse_manifest(&text, base)?;
    for inst in &instances {
        validate_instance(inst, shell)?;
    }
    Ok(instances)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_forms() {
        let one = r#"{"id":"a","description":"d","difficulty":"easy","files":{"x":"1"},
            "fail_to_pass":[{"name":"t","command":"grep -q 2 x","timeout_s":5}]}"#;
        let parsed = parse_manifest(one, Path::new(".")).unwrap();
        assert_eq!(parsed[0].fail_to_pass[0].timeout(), Duration::from_secs(5));
        let many = format!("[{one}]");
        assert_eq!(parse_manifest(&many, Path::new(".")).unwrap(), parsed);
        let wrapped = format!("{{\"instances\":[{one}]}}");
        assert_eq!(parse_manifest(&wrapped, Path::new(".")).unwrap(), parsed);
        let dup = format!("[{one},{one}]");
        assert!(matches!(parse_manifest(&dup, Path::new(".")), Err(EnvError::Manifest(_))));
    }

    #[test]
    fn manifest_directory_reference() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join("repo/src")).unwrap();
        fs::write(dir.path().join("repo/src/a.txt"), "a\n").unwrap();
        let text = r#"{"id":"a","description":"d","difficulty":"hard","files":"repo",
            "pass_to_pass":[{"name":"t","command":"true","timeout_s":5}]}"#;
        let parsed = parse_manifest(text, dir.path()).unwrap();
        assert_eq!(parsed[0].files["src/a.txt"], "a\n");
    }

    #[test]
    fn shape_violations() {
        let base = r#"{"id":"a","description":"d","difficulty":"easy","files":{"x":"1"}}"#;
        assert!(matches!(parse_manifest(base, Path::new(".")), Err(EnvError::InvalidInstance(_))));
        let binary = r#"{"id":"a","description":"d","difficulty":"easy","files":{"x":"\u0000"},
            "pass_to_pass":[{"name":"t","command":"true"}]}"#;
        assert!(matches!(parse_manifest(binary, Path::new(".")), Err(EnvError::InvalidInstance(_))));
        let zero = r#"{"id":"a","description":"d","difficulty":"easy","files":{"x":"1"},
            "pass_to_pass":[{"name":"t","command":"true","timeout_s":0}]}"#;
        assert!(matches!(parse_manifest(zero, Path::new(".")), Err(EnvError::InvalidInstance(_))));
    }
}
