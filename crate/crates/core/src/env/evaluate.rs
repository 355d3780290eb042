use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{EnvError, Instance, Patch, ShellMode, TestSpec, Workspace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Pass,
    Fail,
    Error,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceVerdict {
    pub accepted: bool,
    pub per_test: BTreeMap<String, TestStatus>,
    /// Set when the patch could not be applied; no tests ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub apply_error: Option<String>,
}

/// Runs each test in order inside `ws`.
pub fn run_suite<'a>(
    ws: &Workspace,
    tests: impl IntoIterator<Item = &'a TestSpec>,
) -> BTreeMap<String, TestStatus> {
    tests
        .into_iter()
        .map(|test| {
            let status = match ws.exec_bash(&test.command, test.timeout()) {
                Ok(out) if out.timed_out => TestStatus::Timeout,
                Ok(out) if out.exit_code == 0 => TestStatus::Pass,
                Ok(_) => TestStatus::Fail,
                Err(e) => {
                    log::warn!("test {} could not run: {e}", test.name);
                    TestStatus::Error
                }
            };
            (test.name.clone(), status)
        })
        .collect()
}

/// Applies `patch` to the instance snapshot in a fresh workspace and runs
/// pass-to-pass then fail-to-pass tests. Accepted iff every test passes.
pub fn evaluate_patch(instance: &Instance, patch: &Patch, shell: ShellMode) -> Result<AcceptanceVerdict, EnvError> {
    let patched = match patch.apply(&instance.files) {
        Ok(tree) => tree,
        Err(e) => {
            return Ok(AcceptanceVerdict {
                accepted: false,
                per_test: BTreeMap::new(),
                apply_error: Some(e.to_string()),
            })
        }
    };
    let ws = Workspace::open_tree(Arc::new(patched), shell)?;
    let per_test = run_suite(&ws, instance.pass_to_pass.iter().chain(&instance.fail_to_pass));
    let accepted = per_test.values().all(|s| *s == TestStatus::Pass);
    Ok(AcceptanceVerdict { accepted, per_test, apply_error: None })
}

/// Ingestion check: pass-to-pass tests pass and fail-to-pass tests fail on
/// the unpatched snapshot.
pub fn validate_instance(instance: &Instance, shell: ShellMode) -> Result<(), EnvError> {
    instance.check_shape()?;
    let ws = Workspace::open(instance, shell)?;
    let pp = run_suite(&ws, &instance.pass_to_pass);
    if let Some((name, status)) = pp.iter().find(|(_, s)| **s != TestStatus::Pass) {
        return Err(EnvError::InvalidInstance(format!(
            "{}: pass_to_pass test {name} is {status:?} on the unpatched snapshot",
            instance.id
        )));
    }
    let fp = run_suite(&ws, &instance.fail_to_pass);
    if let Some((name, _)) = fp.iter().find(|(_, s)| **s == TestStatus::Pass) {
        return Err(EnvError::InvalidInstance(format!(
            "{}: fail_to_pass test {name} already passes on the unpatched snapshot",
            instance.id
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{diff_trees, Difficulty};

    fn calc() -> Instance {
        let mut files = BTreeMap::new();
        files.insert("calc.py".to_owned(), "def add(a, b):\n    return a - b\n".to_owned());
        files.insert("util.py".to_owned(), "X = 1\n".to_owned());
        Instance {
            id: "calc".into(),
            description: "add subtracts".into(),
            difficulty: Difficulty::Easy,
            files,
            pass_to_pass: vec![TestSpec::new("util", "grep -q 'X = 1' util.py")],
            fail_to_pass: vec![TestSpec::new("add", "grep -q 'return a + b' calc.py")],
            gold_patch: None,
        }
    }

    fn patched(inst: &Instance, edits: &[(&str, &str)]) -> Patch {
        let mut tree = inst.files.clone();
        for (path, content) in edits {
            tree.insert(path.to_string(), content.to_string());
        }
        diff_trees(&inst.files, &tree)
    }

    #[test]
    fn fixture_is_valid() {
        validate_instance(&calc(), ShellMode::Fake).unwrap();
    }

    #[test]
    fn gold_patch_accepted() {
        let inst = calc();
        let patch = patched(&inst, &[("calc.py", "def add(a, b):\n    return a + b\n")]);
        let v = evaluate_patch(&inst, &patch, ShellMode::Fake).unwrap();
        assert!(v.accepted, "{v:?}");
        assert_eq!(v.per_test.len(), 2);
    }

    #[test]
    fn empty_patch_rejected() {
        let v = evaluate_patch(&calc(), &Patch::empty(), ShellMode::Fake).unwrap();
        assert!(!v.accepted);
        assert_eq!(v.per_test["add"], TestStatus::Fail);
    }

    #[test]
    fn breaking_pass_to_pass_rejected() {
        let inst = calc();
        let patch = patched(
            &inst,
            &[("calc.py", "def add(a, b):\n    return a + b\n"), ("util.py", "X = 2\n")],
        );
        let v = evaluate_patch(&inst, &patch, ShellMode::Fake).unwrap();
        assert!(!v.accepted);
        let failures: Vec<_> = v.per_test.iter().filter(|(_, s)| **s != TestStatus::Pass).collect();
        assert_eq!(failures, vec![(&"util".to_owned(), &TestStatus::Fail)]);
    }

    #[test]
    fn unappliable_patch_marks_failure() {
        let inst = calc();
        let patch = Patch::from_diff("--- a/missing\n+++ b/missing\n@@ -1 +1 @@\n-a\n+b\n").unwrap();
        let v = evaluate_patch(&inst, &patch, ShellMode::Fake).unwrap();
        assert!(!v.accepted);
        assert!(v.per_test.is_empty());
        assert!(v.apply_error.is_some());
    }

    #[test]
    fn invalid_instances_rejected() {
        let mut inst = calc();
        inst.fail_to_pass[0].command = "true".into();
        assert!(matches!(validate_instance(&inst, ShellMode::Fake), Err(EnvError::InvalidInstance(_))));
        let mut inst = calc();
        inst.pass_to_pass[0].command = "false".into();
        assert!(matches!(validate_instance(&inst, ShellMode::Fake), Err(EnvError::InvalidInstance(_))));
    }
}
