use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use sha2::{Digest, Sha256};
use tempfile::TempDir;

use super::patch::{self, Patch};
use super::shell::{self, BashOutput, ShellMode};
use super::{EnvError, FileTree, Instance};

/// Resolves `path` lexically under `root`; absolute paths must already lie
/// inside `root` and `..` may not climb out of it.
pub(crate) fn confine(root: &Path, path: &str) -> Result<PathBuf, EnvError> {
    let raw = Path::new(path);
    let relative = if raw.is_absolute() {
        raw.strip_prefix(root).map_err(|_| EnvError::PathEscape(path.to_owned()))?
    } else {
        raw
    };
    let mut parts: Vec<&std::ffi::OsStr> = Vec::new();
    for comp in relative.components() {
        match comp {
            Component::Normal(c) => parts.push(c),
            Component::CurDir => {}
            Component::ParentDir => {
                if parts.pop().is_none() {
                    return Err(EnvError::PathEscape(path.to_owned()));
                }
            }
            Component::RootDir | Component::Prefix(_) => {
                return Err(EnvError::PathEscape(path.to_owned()))
            }
        }
    }
    let resolved = parts.iter().fold(root.to_path_buf(), |acc, p| acc.join(p));
    if let Ok(real) = resolved.canonicalize() {
        let real_root = root.canonicalize().map_err(EnvError::Io)?;
        if !real.starts_with(&real_root) {
            return Err(EnvError::PathEscape(path.to_owned()));
        }
    }
    Ok(resolved)
}

/// An isolated working copy of an instance snapshot.
pub struct Workspace {
    root: PathBuf,
    _temp: Option<TempDir>,
    base: Arc<FileTree>,
    history: HashMap<PathBuf, Vec<Option<String>>>,
    shell: ShellMode,
}

impl Workspace {
    /// Materializes the snapshot in a fresh temporary directory.
    pub fn open(instance: &Instance, shell: ShellMode) -> Result<Self, EnvError> {
        require_snapshot(instance)?;
        Self::open_tree(Arc::new(instance.files.clone()), shell)
    }

    pub(crate) fn open_tree(base: Arc<FileTree>, shell: ShellMode) -> Result<Self, EnvError> {
        let temp = tempfile::Builder::new().prefix("cc-ws-").tempdir()?;
        let mut ws = Self::materialize(temp.path().to_path_buf(), base, shell)?;
        ws._temp = Some(temp);
        Ok(ws)
    }

    /// Materializes the snapshot at `dir`, replacing anything already there.
    pub fn open_at(instance: &Instance, dir: &Path, shell: ShellMode) -> Result<Self, EnvError> {
        require_snapshot(instance)?;
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::create_dir_all(dir)?;
        Self::materialize(dir.to_path_buf(), Arc::new(instance.files.clone()), shell)
    }

    fn materialize(root: PathBuf, base: Arc<FileTree>, shell: ShellMode) -> Result<Self, EnvError> {
        write_tree(&root, &base)?;
        Ok(Workspace { root, _temp: None, base, history: HashMap::new(), shell })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn base(&self) -> &FileTree {
        &self.base
    }

    pub fn shell(&self) -> ShellMode {
        self.shell
    }

    pub fn exec_bash(&self, cmd: &str, timeout: Duration) -> Result<BashOutput, EnvError> {
        Ok(shell::execute(self.shell, &self.root, cmd, timeout)?)
    }

    fn resolve(&self, path: &str) -> Result<PathBuf, EnvError> {
        confine(&self.root, path)
    }

    fn read(&self, path: &str) -> Result<(PathBuf, String), EnvError> {
        let full = self.resolve(path)?;
        match fs::read_to_string(&full) {
            Ok(text) => Ok((full, text)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(EnvError::NotFound(path.to_owned())),
            Err(e) => Err(e.into()),
        }
    }

    fn mutate(&mut self, full: PathBuf, prior: Option<String>, next: &str) -> Result<(), EnvError> {
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&full, next)?;
        self.history.entry(full).or_default().push(prior);
        Ok(())
    }

    /// Numbered file contents (`N: line`), or a listing for directories.
    pub fn editor_view(&self, path: &str, range: Option<(usize, Option<usize>)>) -> Result<String, EnvError> {
        let full = self.resolve(path)?;
        if full.is_dir() {
            let mut entries = Vec::new();
            list_dir(&full, &full, 2, &mut entries)?;
            return Ok(entries.join("\n"));
        }
        let (_, text) = self.read(path)?;
        let lines: Vec<&str> = text.lines().collect();
        let (start, end) = match range {
            None => (1, lines.len()),
            Some((start, end)) => {
                let end = end.unwrap_or(lines.len());
                if start == 0 || start > end || end > lines.len() {
                    return Err(EnvError::InvalidRange { start, end, lines: lines.len() });
                }
                (start, end)
            }
        };
        let numbered: Vec<String> = (start..=end)
            .filter_map(|n| lines.get(n - 1).map(|l| format!("{n}: {l}")))
            .collect();
        Ok(numbered.join("\n"))
    }

    pub fn editor_create(&mut self, path: &str, content: &str) -> Result<String, EnvError> {
        let full = self.resolve(path)?;
        if full.exists() {
            return Err(EnvError::AlreadyExists(path.to_owned()));
        }
        self.mutate(full, None, content)?;
        Ok(format!("File created successfully at: {path}"))
    }

    /// Inserts `text` after line `after_line` (0 inserts at the top).
    pub fn editor_insert(&mut self, path: &str, after_line: usize, text: &str) -> Result<String, EnvError> {
        let (full, old) = self.read(path)?;
        let mut lines: Vec<&str> = old.split('\n').collect();
        let count = if old.ends_with('\n') { lines.len() - 1 } else if old.is_empty() { 0 } else { lines.len() };
        if after_line > count {
            return Err(EnvError::InvalidRange { start: after_line, end: after_line, lines: count });
        }
        let body = text.strip_suffix('\n').unwrap_or(text);
        let inserted: Vec<&str> = body.split('\n').collect();
        lines.splice(after_line..after_line, inserted);
        let next = lines.join("\n");
        self.mutate(full, Some(old), &next)?;
        Ok(format!("Inserted text after line {after_line} of {path}"))
    }

    /// Replaces the single occurrence of `old_text`.
    pub fn editor_str_replace(&mut self, path: &str, old_text: &str, new_text: &str) -> Result<String, EnvError> {
        if old_text.is_empty() {
            return Err(EnvError::NoMatch(path.to_owned()));
        }
        let (full, old) = self.read(path)?;
        match old.matches(old_text).count() {
            0 => return Err(EnvError::NoMatch(path.to_owned())),
            1 => {}
            n => return Err(EnvError::NotUnique { path: path.to_owned(), occurrences: n }),
        }
        let next = old.replacen(old_text, new_text, 1);
        self.mutate(full, Some(old), &next)?;
        Ok(format!("The file {path} has been edited."))
    }

    pub fn editor_undo(&mut self, path: &str) -> Result<String, EnvError> {
        let full = self.resolve(path)?;
        let prior = self
            .history
            .get_mut(&full)
            .and_then(Vec::pop)
            .ok_or_else(|| EnvError::NothingToUndo(path.to_owned()))?;
        match prior {
            Some(text) => fs::write(&full, text)?,
            None => fs::remove_file(&full)?,
        }
        Ok(format!("Last edit to {path} undone successfully."))
    }

    /// Depth of the undo stack for `path`.
    pub fn undo_depth(&self, path: &str) -> usize {
        self.resolve(path)
            .ok()
            .and_then(|p| self.history.get(&p).map(Vec::len))
            .unwrap_or(0)
    }

    /// Current file tree (regular files only, keyed by `/`-separated path).
    pub fn tree(&self) -> Result<FileTree, EnvError> {
        read_tree(&self.root)
    }

    /// Content hash of the current tree.
    pub fn fingerprint(&self) -> Result<String, EnvError> {
        let mut hasher = Sha256::new();
        for (path, content) in self.tree()? {
            hasher.update(path.as_bytes());
            hasher.update([0]);
            hasher.update(content.len().to_le_bytes());
            hasher.update(content.as_bytes());
        }
        Ok(format!("{:x}", hasher.finalize()))
    }

    /// Unified diff from the snapshot to the current tree.
    pub fn diff(&self) -> Result<Patch, EnvError> {
        Ok(patch::diff_trees(&self.base, &self.tree()?))
    }
}

fn require_snapshot(instance: &Instance) -> Result<(), EnvError> {
    if instance.files.is_empty() {
        return Err(EnvError::InvalidInstance(format!("{}: snapshot is empty", instance.id)));
    }
    Ok(())
}

pub(crate) fn write_tree(root: &Path, tree: &FileTree) -> Result<(), EnvError> {
    for (rel, content) in tree {
        let full = confine(root, rel)?;
        if let Some(parent) = full.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(full, content)?;
    }
    Ok(())
}

pub(crate) fn read_tree(root: &Path) -> Result<FileTree, EnvError> {
    let mut tree = BTreeMap::new();
    walk(root, root, &mut tree)?;
    Ok(tree)
}

fn walk(root: &Path, dir: &Path, tree: &mut FileTree) -> Result<(), EnvError> {
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let kind = entry.file_type()?;
        let path = entry.path();
        if kind.is_dir() {
            walk(root, &path, tree)?;
        } else if kind.is_file() {
            let rel = rel_key(root, &path);
            let bytes = fs::read(&path)?;
            let text = String::from_utf8(bytes).map_err(|_| EnvError::Binary(rel.clone()))?;
            tree.insert(rel, text);
        }
    }
    Ok(())
}

fn rel_key(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}

fn list_dir(root: &Path, dir: &Path, depth: usize, out: &mut Vec<String>) -> Result<(), EnvError> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.filter_map(Result::ok).collect();
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        let name = rel_key(root, &path);
        if path.is_dir() {
            out.push(format!("{name}/"));
            if depth > 1 {
                list_dir(root, &path, depth - 1, out)?;
            }
        } else {
            out.push(name);
        }
    }
    Ok(())
}
