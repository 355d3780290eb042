//! Action blocks in policy output.
//!
//! An action is a fenced block whose info string names the tool:
//!
//! ````text
//! ```bash
//! ls -la
//! ```
//! ````
//!
//! Editor calls carry a JSON object with a `command` key and the
//! subcommand's arguments; `submit` has an empty body. Fences with any other
//! info string are treated as prose.

use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

use crate::transcript::{EditorCommand, Tool, ToolCall};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ActionParseError {
    #[error("no action block found")]
    NoAction,
    #[error("{0} action blocks found; exactly one is required")]
    MultipleActions(usize),
    #[error("unterminated action block")]
    Unterminated,
    #[error("invalid {tool} block: {reason}")]
    InvalidBody { tool: &'static str, reason: String },
}

/// A parsed policy turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTurn {
    pub thought: String,
    pub action: ToolCall,
}

const FENCE: &str = "```";

/// Extracts the single action block from `raw`; everything else is thought.
pub fn parse_action(raw: &str) -> Result<ParsedTurn, ActionParseError> {
    let lines: Vec<&str> = raw.split('\n').collect();
    let mut blocks: Vec<(Tool, usize, usize)> = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let line = lines[i].trim_end_matches('\r');
        let Some(info) = line.trim_start().strip_prefix(FENCE) else {
            i += 1;
            continue;
        };
        let tool = Tool::from_name(info.trim());
        let close = (i + 1..lines.len()).find(|&j| lines[j].trim() == FENCE);
        match (tool, close) {
            (Some(_), None) => return Err(ActionParseError::Unterminated),
            (Some(tool), Some(j)) => {
                blocks.push((tool, i, j));
                i = j + 1;
            }
            (None, Some(j)) => i = j + 1,
            (None, None) => break,
        }
    }
    let (tool, open, close) = match blocks.as_slice() {
        [] => return Err(ActionParseError::NoAction),
        [one] => *one,
        many => return Err(ActionParseError::MultipleActions(many.len())),
    };
    let body = lines[open + 1..close].join("\n");
    let action = action_from_body(tool, &body)?;
    let thought = lines[..open].iter().chain(&lines[close + 1..]).copied().collect::<Vec<_>>().join("\n");
    Ok(ParsedTurn { thought: thought.trim().to_owned(), action })
}

fn action_from_body(tool: Tool, body: &str) -> Result<ToolCall, ActionParseError> {
    let invalid = |reason: String| ActionParseError::InvalidBody { tool: tool.as_str(), reason };
    match tool {
        Tool::Bash => {
            if body.trim().is_empty() {
                return Err(invalid("empty command".into()));
            }
            Ok(ToolCall::bash(body))
        }
        Tool::Submit => {
            if !body.trim().is_empty() {
                return Err(invalid("submit takes no body".into()));
            }
            Ok(ToolCall::submit())
        }
        Tool::StrReplaceEditor => {
            let value: Value = serde_json::from_str(body).map_err(|e| invalid(e.to_string()))?;
            let Value::Object(map) = value else {
                return Err(invalid("expected a JSON object".into()));
            };
            let mut command = None;
            let mut args = BTreeMap::new();
            for (key, value) in map {
                let text = match value {
                    Value::String(s) => s,
                    Value::Number(n) => n.to_string(),
                    Value::Array(items) => items
                        .iter()
                        .map(|v| match v {
                            Value::Number(n) => Ok(n.to_string()),
                            _ => Err(invalid(format!("{key} must hold numbers"))),
                        })
                        .collect::<Result<Vec<_>, _>>()?
                        .join(","),
                    other => return Err(invalid(format!("unsupported value for {key}: {other}"))),
                };
                if key == "command" {
                    command = Some(text);
                } else {
                    args.insert(key, text);
                }
            }
            let command = command.ok_or_else(|| invalid("missing \"command\"".into()))?;
            let sub = EditorCommand::from_name(&command).ok_or_else(|| invalid(format!("unknown command {command:?}")))?;
            if !args.contains_key("path") {
                return Err(invalid("missing \"path\"".into()));
            }
            Ok(ToolCall::editor(sub, args))
        }
    }
}

/// Renders `action` as the block [`parse_action`] accepts.
pub fn render_action_block(action: &ToolCall) -> String {
    let body = match action.tool {
        Tool::Bash => format!("{}\n", action.arg("command").unwrap_or_default()),
        Tool::Submit => String::new(),
        Tool::StrReplaceEditor => {
            let mut map = serde_json::Map::new();
            let sub = action.subcommand.map(EditorCommand::as_str).unwrap_or_default();
            map.insert("command".into(), Value::String(sub.to_owned()));
            for (k, v) in &action.arguments {
                map.insert(k.clone(), Value::String(v.clone()));
            }
            format!("{}\n", Value::Object(map))
        }
    };
    format!("{FENCE}{}\n{body}{FENCE}", action.tool.as_str())
}

/// Thought followed by the action block, as the policy's turn is replayed.
pub fn render_turn(thought: &str, action: &ToolCall) -> String {
    let block = render_action_block(action);
    if thought.is_empty() {
        block
    } else {
        format!("{thought}\n\n{block}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bash_block() {
        let t = parse_action("Look around.\n```bash\nls\n```\n").unwrap();
        assert_eq!(t.action, ToolCall::bash("ls"));
        assert_eq!(t.thought, "Look around.");
    }

    #[test]
    fn no_block_is_an_error() {
        assert_eq!(parse_action("I think we are done."), Err(ActionParseError::NoAction));
    }

    #[test]
    fn two_blocks_are_an_error() {
        let raw = "```bash\nls\n```\nthen\n```bash\npwd\n```";
        assert_eq!(parse_action(raw), Err(ActionParseError::MultipleActions(2)));
    }

    #[test]
    fn other_fences_are_prose() {
        let raw = "The bug:\n```python\nreturn a - b\n```\nFix it:\n```str_replace_editor\n{\"command\": \"str_replace\", \"path\": \"calc.py\", \"old_str\": \"a - b\", \"new_str\": \"a + b\"}\n```";
        let t = parse_action(raw).unwrap();
        assert_eq!(t.action.subcommand, Some(EditorCommand::StrReplace));
        assert_eq!(t.action.arg("new_str"), Some("a + b"));
        assert!(t.thought.contains("return a - b"));
    }

    #[test]
    fn editor_numbers_become_strings() {
        let raw = "```str_replace_editor\n{\"command\":\"view\",\"path\":\"a.py\",\"view_range\":[2,-1]}\n```";
        assert_eq!(parse_action(raw).unwrap().action.arg("view_range"), Some("2,-1"));
        let raw = "```str_replace_editor\n{\"command\":\"insert\",\"path\":\"a.py\",\"insert_line\":3,\"new_str\":\"x\"}\n```";
        assert_eq!(parse_action(raw).unwrap().action.arg("insert_line"), Some("3"));
    }

    #[test]
    fn bad_bodies() {
        assert!(matches!(parse_action("```bash\n\n```"), Err(ActionParseError::InvalidBody { .. })));
        assert!(matches!(parse_action("```submit\nnow\n```"), Err(ActionParseError::InvalidBody { .. })));
        assert!(matches!(parse_action("```str_replace_editor\nnot json\n```"), Err(ActionParseError::InvalidBody { .. })));
        assert!(matches!(parse_action("```str_replace_editor\n{\"command\":\"fly\",\"path\":\"a\"}\n```"), Err(ActionParseError::InvalidBody { .. })));
        assert_eq!(parse_action("```bash\nls"), Err(ActionParseError::Unterminated));
    }

    #[test]
    fn render_round_trips() {
        let calls = [
            ToolCall::bash("grep -n 'x' a.py && echo done"),
            ToolCall::bash("printf 'a\\nb'\necho second line\n"),
            ToolCall::submit(),
            ToolCall::editor(EditorCommand::Create, [("path", "n.py"), ("file_text", "line\n```python\n")]),
            ToolCall::editor(EditorCommand::UndoEdit, [("path", "n.py")]),
        ];
        for call in calls {
            let turn = render_turn("why", &call);
            let parsed = parse_action(&turn).unwrap();
            assert_eq!(parsed.action, call, "{turn}");
            assert_eq!(parsed.thought, "why");
        }
    }
}
