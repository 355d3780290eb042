//! Unified diffs between file trees: generation and strict application.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use similar::{DiffOp, TextDiff};
use thiserror::Error;

use super::FileTree;

const DEV_NULL: &str = "/dev/null";
const NO_NEWLINE: &str = "\\ No newline at end of file";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub unified_diff: String,
    pub files_touched: Vec<String>,
    pub nonempty: bool,
}

impl Patch {
    pub fn empty() -> Self {
        Patch { unified_diff: String::new(), files_touched: Vec::new(), nonempty: false }
    }

    /// Wraps diff text, deriving the touched paths from its file headers.
    pub fn from_diff(text: impl Into<String>) -> Result<Self, PatchError> {
        let unified_diff = text.into();
        let files = parse(&unified_diff)?;
        let files_touched: Vec<String> = files.iter().map(|f| f.path().to_owned()).collect();
        let nonempty = !files_touched.is_empty();
        Ok(Patch { unified_diff, files_touched, nonempty })
    }

    /// Applies the patch to `base`, returning the patched tree.
    pub fn apply(&self, base: &FileTree) -> Result<FileTree, PatchError> {
        apply(&self.unified_diff, base)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PatchError {
    #[error("malformed diff at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("{path}: {reason}")]
    Conflict { path: String, reason: String },
}

/// Diff of two trees; file creations and deletions use `/dev/null`.
pub fn diff_trees(old: &FileTree, new: &FileTree) -> Patch {
    let paths: BTreeSet<&String> = old.keys().chain(new.keys()).collect();
    let mut out = String::new();
    let mut touched = Vec::new();
    for path in paths {
        let before = old.get(path);
        let after = new.get(path);
        if before == after {
            continue;
        }
        let from = before.map_or(DEV_NULL.to_owned(), |_| format!("a/{path}"));
        let to = after.map_or(DEV_NULL.to_owned(), |_| format!("b/{path}"));
        out.push_str(&format!("--- {from}\n+++ {to}\n"));
        let before = before.map_or("", String::as_str);
        let after = after.map_or("", String::as_str);
        out.push_str(&file_hunks(before, after));
        touched.push(path.clone());
    }
    let nonempty = !touched.is_empty();
    Patch { unified_diff: out, files_touched: touched, nonempty }
}

const CONTEXT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Equal,
    Delete,
    Insert,
}

/// Line-level edit script as `(tag, old cursor, new cursor)` entries.
///
/// Positions come from running cursors rather than the op indices, which
/// are not reliable on the side an op does not touch. Returns `None` if
/// the ops do not describe `old` -> `new`.
fn edit_script(old: &[Line], new: &[Line], before: &str, after: &str) -> Option<Vec<(Tag, usize, usize)>> {
    let diff = TextDiff::from_lines(before, after);
    let mut entries = Vec::with_capacity(old.len().max(new.len()));
    let (mut o, mut n) = (0, 0);
    for op in diff.ops() {
        let (equal, deleted, inserted) = match *op {
            DiffOp::Equal { len, .. } => (len, 0, 0),
            DiffOp::Delete { old_len, .. } => (0, old_len, 0),
            DiffOp::Insert { new_len, .. } => (0, 0, new_len),
            DiffOp::Replace { old_len, new_len, .. } => (0, old_len, new_len),
        };
        for _ in 0..equal {
            if old.get(o)? != new.get(n)? {
                return None;
            }
            entries.push((Tag::Equal, o, n));
            o += 1;
            n += 1;
        }
        for _ in 0..deleted {
            entries.push((Tag::Delete, o, n));
            o += 1;
        }
        for _ in 0..inserted {
            entries.push((Tag::Insert, o, n));
            n += 1;
        }
    }
    (o == old.len() && n == new.len()).then_some(entries)
}

/// Whole-file replacement, used if the diff engine's ops are unusable.
fn replace_all(old: &[Line], new: &[Line]) -> Vec<(Tag, usize, usize)> {
    let dels = (0..old.len()).map(|o| (Tag::Delete, o, 0));
    let ins = (0..new.len()).map(|n| (Tag::Insert, old.len(), n));
    dels.chain(ins).collect()
}

fn push_line(out: &mut String, prefix: char, line: &Line) {
    out.push(prefix);
    out.push_str(&line.text);
    out.push('\n');
    if !line.newline {
        out.push_str(NO_NEWLINE);
        out.push('\n');
    }
}

/// Unified-diff hunks for one file with three lines of context.
fn file_hunks(before: &str, after: &str) -> String {
    let old = split_lines(before);
    let new = split_lines(after);
    let entries = edit_script(&old, &new, before, after).unwrap_or_else(|| replace_all(&old, &new));
    let changes: Vec<usize> = entries.iter().enumerate().filter(|(_, e)| e.0 != Tag::Equal).map(|(i, _)| i).collect();
    let mut out = String::new();
    let mut k = 0;
    while k < changes.len() {
        let first = changes[k];
        let mut last = first;
        while k + 1 < changes.len() && changes[k + 1] - last - 1 <= 2 * CONTEXT {
            k += 1;
            last = changes[k];
        }
        k += 1;
        let lo = first.saturating_sub(CONTEXT);
        let hi = (last + 1 + CONTEXT).min(entries.len());
        let span = &entries[lo..hi];
        let old_len = span.iter().filter(|e| e.0 != Tag::Insert).count();
        let new_len = span.iter().filter(|e| e.0 != Tag::Delete).count();
        let (_, o, n) = span[0];
        let start = |cursor: usize, len: usize| if len == 0 { cursor } else { cursor + 1 };
        out.push_str(&format!("@@ -{},{old_len} +{},{new_len} @@\n", start(o, old_len), start(n, new_len)));
        for &(tag, o, n) in span {
            match tag {
                Tag::Equal => push_line(&mut out, ' ', &old[o]),
                Tag::Delete => push_line(&mut out, '-', &old[o]),
                Tag::Insert => push_line(&mut out, '+', &new[n]),
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Line {
    text: String,
    newline: bool,
}

#[derive(Debug)]
struct Hunk {
    old_start: usize,
    old_len: usize,
    old: Vec<Line>,
    new: Vec<Line>,
}

#[derive(Debug)]
struct FilePatch {
    old_path: Option<String>,
    new_path: Option<String>,
    hunks: Vec<Hunk>,
}

impl FilePatch {
    fn path(&self) -> &str {
        self.new_path.as_deref().or(self.old_path.as_deref()).unwrap_or_default()
    }
}

fn strip_path(raw: &str, prefix: &str) -> Option<String> {
    let raw = raw.split('\t').next().unwrap_or(raw).trim_end();
    if raw == DEV_NULL {
        return None;
    }
    Some(raw.strip_prefix(prefix).unwrap_or(raw).to_owned())
}

fn parse_range(s: &str) -> Option<(usize, usize)> {
    match s.split_once(',') {
        Some((start, len)) => Some((start.parse().ok()?, len.parse().ok()?)),
        None => Some((s.parse().ok()?, 1)),
    }
}

fn parse(text: &str) -> Result<Vec<FilePatch>, PatchError> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if text.ends_with('\n') || text.is_empty() {
        lines.pop();
    }
    let mut files: Vec<FilePatch> = Vec::new();
    let mut i = 0;
    let bad = |line: usize, reason: &str| PatchError::Malformed { line: line + 1, reason: reason.into() };
    while i < lines.len() {
        let line = lines[i];
        if let Some(from) = line.strip_prefix("--- ") {
            let to = lines
                .get(i + 1)
                .and_then(|l| l.strip_prefix("+++ "))
                .ok_or_else(|| bad(i + 1, "expected +++ header"))?;
            let old_path = strip_path(from, "a/");
            let new_path = strip_path(to, "b/");
            if old_path.is_none() && new_path.is_none() {
                return Err(bad(i, "both sides are /dev/null"));
            }
            files.push(FilePatch { old_path, new_path, hunks: Vec::new() });
            i += 2;
        } else if let Some(header) = line.strip_prefix("@@ ") {
            let file = files.last_mut().ok_or_else(|| bad(i, "hunk before file header"))?;
            let mut parts = header.split_whitespace();
            let old = parts.next().and_then(|p| p.strip_prefix('-')).and_then(parse_range);
            let new = parts.next().and_then(|p| p.strip_prefix('+')).and_then(parse_range);
            let (Some((old_start, old_len)), Some((_, new_len))) = (old, new) else {
                return Err(bad(i, "bad hunk header"));
            };
            let mut hunk = Hunk { old_start, old_len, old: Vec::new(), new: Vec::new() };
            i += 1;
            // which sides the previous line belonged to, for "\ No newline"
            let mut last_sides = (false, false);
            while i < lines.len() && (hunk.old.len() < old_len || hunk.new.len() < new_len || lines[i] == NO_NEWLINE) {
                let l = lines[i];
                if l == NO_NEWLINE {
                    if last_sides.0 {
                        hunk.old.last_mut().ok_or_else(|| bad(i, "stray marker"))?.newline = false;
                    }
                    if last_sides.1 {
                        hunk.new.last_mut().ok_or_else(|| bad(i, "stray marker"))?.newline = false;
                    }
                    if !last_sides.0 && !last_sides.1 {
                        return Err(bad(i, "stray no-newline marker"));
                    }
                    last_sides = (false, false);
                    i += 1;
                    continue;
                }
                let (tag, body) = l.split_at(l.len().min(1));
                let entry = Line { text: body.to_owned(), newline: true };
                last_sides = match tag {
                    " " | "" => {
                        hunk.old.push(entry.clone());
                        hunk.new.push(entry);
                        (true, true)
                    }
                    "-" => {
                        hunk.old.push(entry);
                        (true, false)
                    }
                    "+" => {
                        hunk.new.push(entry);
                        (false, true)
                    }
                    _ => return Err(bad(i, "unexpected line in hunk")),
                };
                i += 1;
            }
            if hunk.old.len() != old_len || hunk.new.len() != new_len {
                return Err(bad(i.saturating_sub(1), "hunk shorter than its header"));
            }
            file.hunks.push(hunk);
        } else if line.trim().is_empty() || line.starts_with("diff ") || line.starts_with("index ") {
            i += 1;
        } else {
            return Err(bad(i, "unexpected line outside hunk"));
        }
    }
    Ok(files)
}

fn split_lines(text: &str) -> Vec<Line> {
    text.split_inclusive('\n')
        .map(|l| match l.strip_suffix('\n') {
            Some(body) => Line { text: body.to_owned(), newline: true },
            None => Line { text: l.to_owned(), newline: false },
        })
        .collect()
}

fn join_lines(lines: &[Line]) -> String {
    let mut out = String::new();
    for l in lines {
        out.push_str(&l.text);
        if l.newline {
            out.push('\n');
        }
    }
    out
}

fn apply_file(path: &str, original: &str, hunks: &[Hunk]) -> Result<String, PatchError> {
    let conflict = |reason: String| PatchError::Conflict { path: path.to_owned(), reason };
    let old = split_lines(original);
    let mut out: Vec<Line> = Vec::new();
    let mut cursor = 0usize;
    for hunk in hunks {
        // a zero-length old range names the line *after which* to insert
        let start = if hunk.old_len == 0 { hunk.old_start } else { hunk.old_start.saturating_sub(1) };
        if start < cursor || start + hunk.old_len > old.len() {
            return Err(conflict(format!("hunk at line {} out of range", hunk.old_start)));
        }
        out.extend_from_slice(&old[cursor..start]);
        if old[start..start + hunk.old_len] != hunk.old[..] {
            return Err(conflict(format!("context mismatch at line {}", hunk.old_start)));
        }
        out.extend(hunk.new.iter().cloned());
        cursor = start + hunk.old_len;
    }
    out.extend_from_slice(&old[cursor..]);
    Ok(join_lines(&out))
}

pub(crate) fn apply(text: &str, base: &FileTree) -> Result<FileTree, PatchError> {
    let mut tree = base.clone();
    for file in parse(text)? {
        let path = file.path().to_owned();
        let conflict = |reason: &str| PatchError::Conflict { path: path.clone(), reason: reason.into() };
        let original = match &file.old_path {
            Some(p) => tree.remove(p).ok_or_else(|| conflict("file does not exist"))?,
            None => {
                if tree.contains_key(&path) {
                    return Err(conflict("file already exists"));
                }
                String::new()
            }
        };
        let patched = apply_file(&path, &original, &file.hunks)?;
        match &file.new_path {
            Some(p) => {
                tree.insert(p.clone(), patched);
            }
            None if !patched.is_empty() => return Err(conflict("deletion leaves content behind")),
            None => {}
        }
    }
    Ok(tree)
}
