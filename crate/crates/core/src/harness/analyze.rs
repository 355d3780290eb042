use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::HarnessError;
use crate::backend::detect;
use crate::prm::should_invoke;
use crate::transcript::{load_file, Transcript, Window};

/// Detector hits over the supervision-aligned windows of stored trajectories.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AnalysisReport {
    pub trajectories: usize,
    pub windows: usize,
    pub flagged_windows: usize,
    /// Windows in which each detector rule fired.
    pub per_rule: BTreeMap<String, usize>,
    /// Windows in which each taxonomy category was detected.
    pub per_category: BTreeMap<String, usize>,
}

impl AnalysisReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} trajectories, {} windows analyzed, {} flagged",
            self.trajectories, self.windows, self.flagged_windows
        );
        for (title, map) in [("rule", &self.per_rule), ("category", &self.per_category)] {
            if map.is_empty() {
                continue;
            }
            let width = map.keys().map(String::len).max().unwrap_or(0).max(title.len());
            let _ = writeln!(out, "\n{title:<width$}  windows");
            for (k, v) in map {
                let _ = writeln!(out, "{k:<width$}  {v}");
            }
        }
        out
    }
}

/// The windows a supervisor with interval `n` and window `k` would see.
pub fn aligned_windows(transcript: &Transcript, interval: usize, window: usize) -> Vec<Window> {
    let steps = transcript.steps();
    (1..=steps.len())
        .filter(|&t| should_invoke(t, interval) && steps[t - 1].action.tool != crate::transcript::Tool::Submit)
        .filter_map(|t| Window::from_steps(steps[t.saturating_sub(window)..t].to_vec()))
        .collect()
}

pub fn analyze_transcripts<'a>(
    transcripts: impl IntoIterator<Item = &'a Transcript>,
    interval: usize,
    window: usize,
) -> AnalysisReport {
    let mut report = AnalysisReport::default();
    for transcript in transcripts {
        report.trajectories += 1;
        for w in aligned_windows(transcript, interval, window) {
            report.windows += 1;
            let findings = detect(&w);
            if !findings.is_empty() {
                report.flagged_windows += 1;
            }
            let mut rules: Vec<&str> = findings.iter().map(|f| f.rule.as_str()).collect();
            rules.dedup();
            let mut categories: Vec<&str> = findings.iter().map(|f| f.rule.category()).collect();
            categories.sort_unstable();
            categories.dedup();
            for r in rules {
                *report.per_rule.entry(r.to_owned()).or_default() += 1;
            }
            for c in categories {
                *report.per_category.entry(c.to_owned()).or_default() += 1;
            }
        }
    }
    report
}

/// Trajectory files under `paths`; directories are searched recursively
/// for `trajectory.jsonl`.
pub fn collect_trajectory_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>, HarnessError> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            walk(p, &mut out)?;
        } else if p.exists() {
            out.push(p.clone());
        } else {
            return Err(HarnessError::Usage(format!("no such file or directory: {}", p.display())));
        }
    }
    Ok(out)
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::io(dir, e))?;
    entries.sort();
    for path in entries {
        // Agent workspaces can hold arbitrary files; never descend into them.
        if path.file_name().is_some_and(|n| n == "workspace") {
            continue;
        }
        if path.is_dir() {
            walk(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "trajectory.jsonl") {
            out.push(path);
        }
    }
    Ok(())
}

pub fn analyze(paths: &[PathBuf], interval: usize, window: usize) -> Result<AnalysisReport, HarnessError> {
    if interval == 0 || window == 0 {
        return Err(HarnessError::Usage("interval and window must be at least 1".into()));
    }
    let files = collect_trajectory_files(paths)?;
    let transcripts = files
        .iter()
        .map(|f| load_file(f).map_err(|source| HarnessError::Store { path: f.clone(), source }))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(analyze_transcripts(&transcripts, interval, window))
}
