use thiserror::Error;

use super::{Step, ToolCall};
use crate::backend::TokenUsage;

/// The `k` most recent steps of a transcript, in original order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    steps: Vec<Step>,
}

impl Window {
    pub(crate) fn new(steps: Vec<Step>) -> Self {
        debug_assert!(!steps.is_empty());
        Window { steps }
    }

    /// Builds a window from arbitrary steps; ordinals must be consecutive.
    pub fn from_steps(steps: Vec<Step>) -> Option<Self> {
        let first = steps.first()?.index;
        let consecutive = steps.iter().enumerate().all(|(i, s)| s.index == first + i);
        consecutive.then_some(Window { steps })
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn start_index(&self) -> usize {
        self.steps[0].index
    }

    pub fn end_index(&self) -> usize {
        self.steps[self.steps.len() - 1].index
    }

    pub fn actions(&self) -> impl Iterator<Item = &ToolCall> {
        self.steps.iter().map(|s| &s.action)
    }
}

const DESCRIPTION_HEADER: &str = "# PROBLEM DESCRIPTION";
const WINDOW_HEADER: &str = "# RECENT STEPS";
const STEP_HEADER: &str = "## STEP ";

/// Renders the PRM input: the problem description followed by each
/// window step as labeled THOUGHT / ACTION / OBSERVATION sections.
///
/// Free-text sections carry their byte length so the text can be parsed
/// back exactly by [`parse_context`].
pub fn serialize_context(description: &str, window: &Window) -> String {
    let mut out = String::new();
    push_block(&mut out, DESCRIPTION_HEADER, description);
    out.push('\n');
    out.push_str(&format!(
        "{WINDOW_HEADER} ({} to {})\n",
        window.start_index(),
        window.end_index()
    ));
    for step in window.steps() {
        out.push('\n');
        out.push_str(&format!("{STEP_HEADER}{}\n", step.index));
        push_block(&mut out, "### THOUGHT", &step.thought);
        out.push_str("### ACTION\n");
        out.push_str(&step.action.canonical());
        out.push('\n');
        push_block(&mut out, "### OBSERVATION", &step.observation);
    }
    out
}

fn push_block(out: &mut String, header: &str, body: &str) {
    out.push_str(&format!("{header} ({} bytes)\n", body.len()));
    out.push_str(body);
    out.push('\n');
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("malformed context at byte {offset}: {reason}")]
pub struct ContextParseError {
    pub offset: usize,
    pub reason: String,
}

struct Cursor<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail<T>(&self, reason: impl Into<String>) -> Result<T, ContextParseError> {
        Err(ContextParseError { offset: self.pos, reason: reason.into() })
    }

    fn at_end(&self) -> bool {
        self.pos >= self.text.len()
    }

    fn line(&mut self) -> Result<&'a str, ContextParseError> {
        let rest = &self.text[self.pos..];
        match rest.find('\n') {
            Some(end) => {
                self.pos += end + 1;
                Ok(&rest[..end])
            }
            None => self.fail("unexpected end of text"),
        }
    }

    fn expect_blank(&mut self) -> Result<(), ContextParseError> {
        match self.line()? {
            "" => Ok(()),
            other => self.fail(format!("expected blank line, found {other:?}")),
        }
    }

    fn block(&mut self, header: &str) -> Result<&'a str, ContextParseError> {
        let line = self.line()?;
        let len = line
            .strip_prefix(header)
            .and_then(|r| r.strip_prefix(" ("))
            .and_then(|r| r.strip_suffix(" bytes)"))
            .and_then(|n| n.parse::<usize>().ok());
        let Some(len) = len else {
            return self.fail(format!("expected {header:?} block, found {line:?}"));
        };
        let end = self.pos + len;
        if end >= self.text.len() || !self.text.is_char_boundary(end) {
            return self.fail("block length out of range");
        }
        let body = &self.text[self.pos..end];
        self.pos = end;
        if self.text.as_bytes()[end] != b'\n' {
            return self.fail("block not newline-terminated");
        }
        self.pos += 1;
        Ok(body)
    }
}

/// Inverse of [`serialize_context`]. Per-step token usage is not part of
/// the rendering and comes back as zero.
pub fn parse_context(text: &str) -> Result<(String, Window), ContextParseError> {
    let mut cur = Cursor { text, pos: 0 };
    let description = cur.block(DESCRIPTION_HEADER)?.to_owned();
    cur.expect_blank()?;
    let header = cur.line()?;
    if !header.starts_with(WINDOW_HEADER) {
        return cur.fail(format!("expected window header, found {header:?}"));
    }
    let mut steps = Vec::new();
    while !cur.at_end() {
        cur.expect_blank()?;
        let line = cur.line()?;
        let Some(index) = line.strip_prefix(STEP_HEADER).and_then(|n| n.parse::<usize>().ok())
        else {
            return cur.fail(format!("expected step header, found {line:?}"));
        };
        let thought = cur.block("### THOUGHT")?.to_owned();
        if cur.line()? != "### ACTION" {
            return cur.fail("expected action section");
        }
        let action: ToolCall = match serde_json::from_str(cur.line()?) {
            Ok(a) => a,
            Err(e) => return cur.fail(format!("bad action: {e}")),
        };
        let observation = cur.block("### OBSERVATION")?.to_owned();
        steps.push(Step { index, thought, action, observation, policy_usage: TokenUsage::default() });
    }
    match Window::from_steps(steps) {
        Some(window) => Ok((description, window)),
        None => cur.fail("window has no steps or non-consecutive ordinals"),
    }
}
