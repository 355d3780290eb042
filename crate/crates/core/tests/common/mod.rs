#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use coursecorrect::backend::{BackendError, ChatMessage, Completion, ModelBackend, SamplingParams, TokenUsage};
use coursecorrect::env::{diff_trees, Difficulty, FileTree, Instance, TestSpec, Workspace};
use coursecorrect::transcript::{EditorCommand, Step, ToolCall};
use rand::seq::SliceRandom;
use rand::Rng;

pub fn tree<const N: usize>(entries: [(&str, &str); N]) -> FileTree {
    entries.iter().map(|(p, c)| (p.to_string(), c.to_string())).collect()
}

/// A shell calculator whose `add` subtracts. Fail-to-pass tests run it;
/// the pass-to-pass test sources a sibling module. Some instances need a
/// second edited or created file so the fix spans several files.
pub fn calc_instance(i: usize) -> Instance {
    let calc = |op: &str| format!("#!/bin/sh\n# calc {i}\nadd() {{\n  echo $(( $1 {op} $2 ))\n}}\nadd \"$@\"\n");
    let files = tree([
        ("calc.sh", calc("-").as_str()),
        ("lib/util.sh", format!("X={i}\n").as_str()),
        ("README.md", format!("Calculator {i}\n").as_str()),
    ]);
    let mut fixed = files.clone();
    fixed.insert("calc.sh".into(), calc("+"));
    match i % 3 {
        1 => {
            fixed.insert("CHANGES.md".into(), "Fixed add.\n".into());
        }
        2 => {
            fixed.insert("README.md".into(), format!("Calculator {i}\nAddition works.\n"));
        }
        _ => {}
    }
    let difficulty = Difficulty::ALL[i % 3];
    Instance {
        id: format!("calc-{i}"),
        description: format!("`sh calc.sh A B` should print A + B but prints A - B (case {i})."),
        difficulty,
        gold_patch: Some(diff_trees(&files, &fixed).unified_diff),
        files,
        pass_to_pass: vec![TestSpec::new("util", format!(". ./lib/util.sh && [ \"$X\" = \"{i}\" ]"))],
        fail_to_pass: vec![
            TestSpec::new("add_small", "[ \"$(sh calc.sh 2 3)\" = 5 ]"),
            TestSpec::new("add_case", format!("[ \"$(sh calc.sh {i} 1)\" = {} ]", i + 1)),
        ],
    }
}

pub fn calc_manifest(n: usize) -> Vec<Instance> {
    (0..n).map(calc_instance).collect()
}

pub fn write_manifest(dir: &Path, instances: &[Instance]) -> PathBuf {
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(instances).unwrap()).unwrap();
    path
}

/// Runs every test of `instance` against `files`, each in its own freshly
/// written directory with a plain `bash -c`. True iff all exit 0.
pub fn oracle_accepts(instance: &Instance, files: &FileTree) -> bool {
    instance.pass_to_pass.iter().chain(&instance.fail_to_pass).all(|test| {
        let dir = tempfile::tempdir().unwrap();
        for (path, content) in files {
            let full = dir.path().join(path);
            fs::create_dir_all(full.parent().unwrap()).unwrap();
            fs::write(full, content).unwrap();
        }
        Command::new("bash")
            .arg("-c")
            .arg(&test.command)
            .current_dir(dir.path())
            .output()
            .map(|o| o.status.success())
            .unwrap_or(false)
    })
}

/// A synthetic instance with randomized suites and candidate trees.
pub struct RandomCase {
    pub instance: Instance,
    pub gold: FileTree,
    /// Candidate post-fix trees; the first is the unmodified snapshot.
    pub candidates: Vec<FileTree>,
}

/// Files hold `KEEP_t` markers that pass-to-pass tests grep for and
/// `BUG_t` markers; fail-to-pass tests either require a `FIX_t` marker or
/// the absence of a `BUG_t` marker.
pub fn random_case<R: Rng>(rng: &mut R, idx: usize) -> RandomCase {
    let n_files = rng.gen_range(1..=3);
    let file = |j: usize| format!("src/f{j}.txt");
    let mut lines: Vec<Vec<String>> = (0..n_files).map(|j| vec![format!("header {j}")]).collect();
    let n_pp = rng.gen_range(1..=5);
    let n_fp = rng.gen_range(1..=5);
    let mut pass_to_pass = Vec::new();
    for t in 0..n_pp {
        let j = rng.gen_range(0..n_files);
        lines[j].push(format!("KEEP_{t}"));
        pass_to_pass.push(TestSpec::new(format!("pp_{t}"), format!("grep -q KEEP_{t} {}", file(j))));
    }
    let mut fixes = Vec::new();
    let mut fail_to_pass = Vec::new();
    for t in 0..n_fp {
        let j = rng.gen_range(0..n_files);
        if rng.gen_bool(0.5) {
            fixes.push((j, format!("FIX_{t}"), None));
            fail_to_pass.push(TestSpec::new(format!("fp_{t}"), format!("grep -q FIX_{t} {}", file(j))));
        } else {
            lines[j].push(format!("BUG_{t}"));
            fixes.push((j, String::new(), Some(format!("BUG_{t}"))));
            fail_to_pass.push(TestSpec::new(format!("fp_{t}"), format!("! grep -q BUG_{t} {}", file(j))));
        }
    }
    let render = |lines: &[Vec<String>]| -> FileTree {
        lines.iter().enumerate().map(|(j, l)| (file(j), l.join("\n") + "\n")).collect()
    };
    let base = render(&lines);
    let build = |rng: &mut R, p_fix: f64, p_drop: f64, p_misplace: f64| -> FileTree {
        let mut ls = lines.clone();
        for (j, add, remove) in &fixes {
            if !rng.gen_bool(p_fix) {
                continue;
            }
            match remove {
                Some(bug) => ls[*j].retain(|l| l != bug),
                None => {
                    let target = if rng.gen_bool(p_misplace) { rng.gen_range(0..n_files) } else { *j };
                    ls[target].push(add.clone());
                }
            }
        }
        for l in ls.iter_mut() {
            l.retain(|line| !(line.starts_with("KEEP_") && rng.gen_bool(p_drop)));
        }
        render(&ls)
    };
    let gold = build(rng, 1.0, 0.0, 0.0);
    let mut candidates = vec![base.clone(), gold.clone()];
    for _ in 0..3 {
        candidates.push(build(rng, 0.7, 0.15, 0.2));
    }
    let instance = Instance {
        id: format!("rand-{idx}"),
        description: format!("randomized case {idx}"),
        difficulty: Difficulty::ALL[idx % 3],
        gold_patch: Some(diff_trees(&base, &gold).unified_diff),
        files: base,
        pass_to_pass,
        fail_to_pass,
    };
    RandomCase { instance, gold, candidates }
}

const VOCAB: [&str; 8] = ["alpha", "beta", "gamma", "delta", "", "  indented", "tab\there", "ünï"];

fn random_text<R: Rng>(rng: &mut R) -> String {
    let n = rng.gen_range(0..5);
    let mut s: Vec<String> = (0..n).map(|_| VOCAB.choose(rng).unwrap().to_string()).collect();
    if n > 0 && rng.gen_bool(0.8) {
        s.push(String::new());
    }
    s.join("\n")
}

/// Outcome of one randomized mutation sequence.
pub struct MutationRun {
    pub ops: Vec<String>,
    pub failure: Option<String>,
    pub base: FileTree,
    pub final_tree: FileTree,
    pub diff: String,
}

/// Applies a random mix of editor and bash mutations. After every editor
/// mutation it undoes and checks the prior tree is restored, then redoes
/// it. Finally the workspace diff must reproduce the tree.
pub fn random_mutation_run<R: Rng>(rng: &mut R) -> MutationRun {
    let base = tree([("a.txt", "alpha\nbeta\ngamma\n"), ("b/c.txt", "one\ntwo"), ("empty.txt", "")]);
    let inst = Instance {
        id: "mut".into(),
        description: String::new(),
        difficulty: Difficulty::Easy,
        files: base.clone(),
        pass_to_pass: vec![TestSpec::new("t", "true")],
        fail_to_pass: vec![],
        gold_patch: None,
    };
    let mut ws = Workspace::open(&inst, coursecorrect::env::ShellMode::Bash).unwrap();
    let mut ops = Vec::new();
    let mut failure = None;
    let steps = rng.gen_range(1..=12);
    'outer: for _ in 0..steps {
        let current = ws.tree().unwrap();
        let paths: Vec<String> = current.keys().cloned().collect();
        let kind = rng.gen_range(0..7);
        let editor: Option<(String, Box<dyn Fn(&mut Workspace) -> Result<String, coursecorrect::env::EnvError>>)> =
            match kind {
                0 => {
                    let path = format!("{}/n{}.txt", ["", "d", "d/e"].choose(rng).unwrap(), rng.gen_range(0..4));
                    let path = path.trim_start_matches('/').to_owned();
                    if current.contains_key(&path) {
                        None
                    } else {
                        let text = random_text(rng);
                        let p = path.clone();
                        Some((format!("create {path} {text:?}"), Box::new(move |ws| ws.editor_create(&p, &text))))
                    }
                }
                1 if !paths.is_empty() => {
                    let path = paths.choose(rng).unwrap().clone();
                    let content = &current[&path];
                    let count = content.lines().count();
                    let at = rng.gen_range(0..=count);
                    let text = random_text(rng);
                    let p = path.clone();
                    Some((format!("insert {path}@{at} {text:?}"), Box::new(move |ws| ws.editor_insert(&p, at, &text))))
                }
                2 if !paths.is_empty() => {
                    let path = paths.choose(rng).unwrap().clone();
                    let content = current[&path].clone();
                    let unique: Vec<&str> =
                        content.lines().filter(|l| !l.is_empty() && content.matches(*l).count() == 1).collect();
                    match unique.choose(rng) {
                        None => None,
                        Some(old) => {
                            let old = old.to_string();
                            let new = random_text(rng);
                            let p = path.clone();
                            Some((
                                format!("str_replace {path} {old:?} -> {new:?}"),
                                Box::new(move |ws| ws.editor_str_replace(&p, &old, &new)),
                            ))
                        }
                    }
                }
                _ => None,
            };
        if let Some((label, op)) = editor {
            ops.push(label.clone());
            let before = ws.tree().unwrap();
            if let Err(e) = op(&mut ws) {
                failure = Some(format!("{label}: {e}"));
                break 'outer;
            }
            let after = ws.tree().unwrap();
            let path = label.split_whitespace().nth(1).unwrap().split('@').next().unwrap().to_owned();
            ws.editor_undo(&path).unwrap();
            if ws.tree().unwrap() != before {
                failure = Some(format!("undo of `{label}` did not restore the prior tree"));
                break 'outer;
            }
            op(&mut ws).unwrap();
            if ws.tree().unwrap() != after {
                failure = Some(format!("redo of `{label}` diverged"));
                break 'outer;
            }
            continue;
        }
        let cmd = match (kind, paths.choose(rng)) {
            (3 | 1, Some(p)) => format!("printf '%s' {} >> {}", shlex::try_quote(&random_text(rng)).unwrap(), p),
            (4, Some(p)) => format!("rm -f {p}"),
            (5 | 2, _) => {
                let dir = ["x", "x/y", "b"].choose(rng).unwrap();
                format!("mkdir -p {dir} && printf '%s' {} > {dir}/w.txt", shlex::try_quote(&random_text(rng)).unwrap())
            }
            _ => match paths.choose(rng) {
                Some(p) => format!("printf '%s' {} > {p}", shlex::try_quote(&random_text(rng)).unwrap()),
                None => "printf 'fresh\\n' > fresh.txt".to_owned(),
            },
        };
        ops.push(format!("bash {cmd}"));
        let out = ws.exec_bash(&cmd, std::time::Duration::from_secs(10)).unwrap();
        if !out.success() {
            failure = Some(format!("bash `{cmd}` failed: {}", out.output));
            break;
        }
    }
    let final_tree = ws.tree().unwrap();
    let diff = ws.diff().unwrap();
    if failure.is_none() {
        match diff.apply(&base) {
            Ok(t) if t == final_tree => {}
            Ok(_) => failure = Some("applied diff differs from the workspace tree".into()),
            Err(e) => failure = Some(format!("diff does not apply: {e}\n{}", diff.unified_diff)),
        }
    }
    if failure.is_none() && diff.nonempty != (base != final_tree) {
        failure = Some("nonempty flag disagrees with tree equality".into());
    }
    MutationRun { ops, failure, base, final_tree, diff: diff.unified_diff }
}

/// Splits a multi-file unified diff into `(old_path, new_path, section)`.
pub fn split_diff(diff: &str) -> Vec<(String, String, String)> {
    let mut out: Vec<(String, String, String)> = Vec::new();
    let lines: Vec<&str> = diff.split_inclusive('\n').collect();
    let mut i = 0;
    while i < lines.len() {
        if lines[i].starts_with("--- ") && i + 1 < lines.len() && lines[i + 1].starts_with("+++ ") {
            let old = lines[i][4..].trim_end().to_owned();
            let new = lines[i + 1][4..].trim_end().to_owned();
            out.push((old, new, format!("{}{}", lines[i], lines[i + 1])));
            i += 2;
            continue;
        }
        if let Some(last) = out.last_mut() {
            last.2.push_str(lines[i]);
        }
        i += 1;
    }
    out
}

/// Applies each per-file section of `diff` with `diffy` as an independent
/// implementation. Creations and deletions are handled by path headers.
pub fn diffy_apply(base: &FileTree, diff: &str) -> Result<FileTree, String> {
    let mut out = base.clone();
    for (old, new, section) in split_diff(diff) {
        let strip = |p: &str| p.splitn(2, '/').nth(1).unwrap_or(p).to_owned();
        if new == "/dev/null" {
            let path = strip(&old);
            out.remove(&path).ok_or(format!("delete of missing {path}"))?;
            continue;
        }
        let path = strip(&new);
        let original = if old == "/dev/null" { String::new() } else { out.get(&path).cloned().ok_or(format!("missing {path}"))? };
        if !section.contains("\n@@ ") {
            out.insert(path, original);
            continue;
        }
        let patch = diffy::Patch::from_str(&section).map_err(|e| format!("diffy parse: {e}\n{section}"))?;
        let patched = diffy::apply(&original, &patch).map_err(|e| format!("diffy apply {path}: {e}"))?;
        out.insert(path, patched);
    }
    Ok(out)
}

pub fn bash(cmd: &str) -> ToolCall {
    ToolCall::bash(cmd)
}

pub fn view(path: &str) -> ToolCall {
    ToolCall::editor(EditorCommand::View, [("path", path)])
}

pub fn step(index: usize, action: ToolCall, observation: &str) -> Step {
    Step::new(index, format!("thinking about step {index}"), action, observation, TokenUsage::new(10, 2))
}

/// A backend answering every request with the same text, recording the
/// requests it saw.
pub struct FixedBackend {
    pub id: String,
    pub reply: String,
    pub seen: Mutex<Vec<(Vec<ChatMessage>, SamplingParams)>>,
}

impl FixedBackend {
    pub fn new(reply: impl Into<String>) -> Self {
        FixedBackend { id: "fixed".into(), reply: reply.into(), seen: Mutex::new(Vec::new()) }
    }

    pub fn calls(&self) -> usize {
        self.seen.lock().unwrap().len()
    }
}

impl ModelBackend for FixedBackend {
    fn model_id(&self) -> &str {
        &self.id
    }

    fn chat(&self, messages: &[ChatMessage], params: SamplingParams) -> Result<Completion, BackendError> {
        self.seen.lock().unwrap().push((messages.to_vec(), params));
        Ok(Completion { text: self.reply.clone(), usage: TokenUsage::new(100, 10) })
    }
}

/// One parsed row of the published per-configuration results.
#[derive(Debug, Clone)]
pub struct ReferenceRow {
    pub setting: String,
    pub policy_model: String,
    pub prm_model: Option<String>,
    pub cells: BTreeMap<String, Option<String>>,
}

impl ReferenceRow {
    pub fn cell(&self, name: &str) -> Option<&str> {
        self.cells.get(name).and_then(|c| c.as_deref())
    }
}

/// The reference results fixture. A `+` in the model column separates the
/// policy model from the PRM model; otherwise the policy also supervises.
pub fn reference_rows() -> Vec<ReferenceRow> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/reference_rows.csv");
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    reader
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            let cells: BTreeMap<String, Option<String>> = headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_owned(), (v != "-").then(|| v.to_owned())))
                .collect();
            let model = cells["model"].clone().unwrap();
            let setting = cells["setting"].clone().unwrap();
            let (policy_model, prm_model) = match model.split_once('+') {
                Some((p, s)) => (p.to_owned(), Some(s.to_owned())),
                None if setting == "base" => (model.clone(), None),
                None => (model.clone(), Some(model.clone())),
            };
            ReferenceRow { setting, policy_model, prm_model, cells }
        })
        .collect()
}
