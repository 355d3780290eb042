//! Command execution inside a workspace root.
//!
//! Two executors share one contract: a real `bash` subprocess confined by a
//! Landlock write-deny ruleset, and an in-process fake shell with a small
//! built-in command set for hermetic tests.

use std::fs;
use std::io::{self, Read};
use std::os::unix::process::CommandExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

/// Exit code reported when a command exceeds its timeout.
pub const TIMEOUT_EXIT_CODE: i32 = 124;

const DEFAULT_PATH: &str = "/usr/local/bin:/usr/bin:/bin";
const MAX_OUTPUT_BYTES: u64 = 4 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShellMode {
    /// `bash -c` subprocess; writes outside the workspace root are denied.
    #[default]
    Bash,
    /// In-process interpreter (echo, cat, ls, grep, exit, sleep and a few
    /// file utilities). Sleeping advances a virtual clock only.
    Fake,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BashOutput {
    pub output: String,
    pub exit_code: i32,
    pub timed_out: bool,
}

impl BashOutput {
    fn exited(output: String, exit_code: i32) -> Self {
        BashOutput { output, exit_code, timed_out: false }
    }

    pub fn success(&self) -> bool {
        self.exit_code == 0 && !self.timed_out
    }

    /// Observation text as shown to the agent.
    pub fn observation(&self, timeout: Duration) -> String {
        let mut text = self.output.clone();
        if self.timed_out {
            if !text.is_empty() && !text.ends_with('\n') {
                text.push('\n');
            }
            text.push_str(&format!("[command timed out after {}s]", timeout.as_secs_f64()));
        } else if self.exit_code != 0 {
            if !text.is_empty() && !text.ends_with('\n') {
                text.push('\n');
            }
            text.push_str(&format!("[exit code {}]", self.exit_code));
        }
        text
    }
}

pub fn execute(mode: ShellMode, root: &Path, cmd: &str, timeout: Duration) -> io::Result<BashOutput> {
    match mode {
        ShellMode::Bash => run_subprocess(root, cmd, timeout),
        ShellMode::Fake => Ok(FakeShell::new(root, timeout).run(cmd)),
    }
}

#[cfg(target_os = "linux")]
fn write_ruleset(root: &Path) -> Option<landlock::RulesetCreated> {
    use landlock::{
        path_beneath_rules, AccessFs, Ruleset, RulesetAttr, RulesetCreatedAttr, ABI,
    };
    let abi = ABI::V3;
    let access = AccessFs::from_write(abi);
    let ruleset = Ruleset::default()
        .handle_access(access)
        .and_then(|r| r.create())
        .and_then(|r| r.add_rules(path_beneath_rules([root, Path::new("/dev")], access)));
    match ruleset {
        Ok(r) => Some(r),
        Err(e) => {
            log::warn!("landlock unavailable, running without write confinement: {e}");
            None
        }
    }
}

/// Whether the host kernel enforces the write-deny policy.
#[cfg(target_os = "linux")]
pub fn sandbox_enforced() -> bool {
    use landlock::RulesetStatus;
    let dir = std::env::temp_dir();
    let Some(ruleset) = write_ruleset(&dir) else { return false };
    // Probing requires restricting a thread; do it on a throwaway one.
    thread::spawn(move || {
        ruleset.restrict_self().map(|s| s.ruleset == RulesetStatus::FullyEnforced).unwrap_or(false)
    })
    .join()
    .unwrap_or(false)
}

#[cfg(not(target_os = "linux"))]
pub fn sandbox_enforced() -> bool {
    false
}

fn run_subprocess(root: &Path, cmd: &str, timeout: Duration) -> io::Result<BashOutput> {
    let mut command = Command::new("bash");
    command
        .arg("-c")
        .arg(format!("exec 2>&1\n{cmd}"))
        .current_dir(root)
        .env_clear()
        .env("PATH", DEFAULT_PATH)
        .env("HOME", root)
        .env("LANG", "C.UTF-8")
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::null());

    #[cfg(target_os = "linux")]
    let mut ruleset = write_ruleset(root);
    unsafe {
        // SAFETY: only async-signal-safe syscalls run between fork and exec
        // (setsid, prctl, landlock_restrict_self); allocation happens only on
        // the error path.
        command.pre_exec(move || {
            if libc::setsid() == -1 {
                return Err(io::Error::last_os_error());
            }
            #[cfg(target_os = "linux")]
            if let Some(ruleset) = ruleset.take() {
                ruleset.restrict_self().map_err(io::Error::other)?;
            }
            Ok(())
        });
    }

    let mut child = command.spawn()?;
    let mut stdout = child.stdout.take().expect("stdout is piped");
    let reader = thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = (&mut stdout).take(MAX_OUTPUT_BYTES).read_to_end(&mut buf);
        // drain anything beyond the cap so the child never blocks on a full pipe
        let _ = io::copy(&mut stdout, &mut io::sink());
        buf
    });

    let deadline = Instant::now() + timeout;
    let pgid = child.id() as libc::pid_t;
    let (status, timed_out) = loop {
        if let Some(status) = child.try_wait()? {
            break (Some(status), false);
        }
        if Instant::now() >= deadline {
            unsafe {
                // SAFETY: plain syscall on the process group created by setsid.
                libc::killpg(pgid, libc::SIGKILL);
            }
            let _ = child.wait();
            break (None, true);
        }
        thread::sleep(Duration::from_millis(5));
    };
    if !timed_out {
        // background jobs may keep the pipe open; reap the group
        unsafe {
            libc::killpg(pgid, libc::SIGKILL);
        }
    }
    let bytes = reader.join().unwrap_or_default();
    let output = String::from_utf8_lossy(&bytes).into_owned();
    if timed_out {
        return Ok(BashOutput { output, exit_code: TIMEOUT_EXIT_CODE, timed_out: true });
    }
    let status = status.expect("status present when not timed out");
    let exit_code = status.code().unwrap_or_else(|| {
        use std::os::unix::process::ExitStatusExt;
        128 + status.signal().unwrap_or(0)
    });
    Ok(BashOutput::exited(output, exit_code))
}

/// Minimal shell interpreter confined to a root directory.
///
/// Supports `;`, `&&`, `||`, single/double quoting, `>`/`>>` redirection and
/// the builtins `echo cat ls grep exit sleep true false pwd rm touch mkdir`.
/// `grep` matches fixed strings.
pub struct FakeShell<'a> {
    root: &'a Path,
    timeout: Duration,
    elapsed: Duration,
}

enum Flow {
    Continue(i32),
    Exit(i32),
    TimedOut,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Connector {
    Always,
    And,
    Or,
}

impl<'a> FakeShell<'a> {
    pub fn new(root: &'a Path, timeout: Duration) -> Self {
        FakeShell { root, timeout, elapsed: Duration::ZERO }
    }

    pub fn run(&mut self, cmd: &str) -> BashOutput {
        let mut out = String::new();
        let mut status = 0;
        for (connector, segment) in split_sequence(cmd) {
            let skip = match connector {
                Connector::Always => false,
                Connector::And => status != 0,
                Connector::Or => status == 0,
            };
            if skip {
                continue;
            }
            match self.simple(&segment, &mut out) {
                Flow::Continue(code) => status = code,
                Flow::Exit(code) => return BashOutput::exited(out, code),
                Flow::TimedOut => {
                    return BashOutput { output: out, exit_code: TIMEOUT_EXIT_CODE, timed_out: true }
                }
            }
        }
        BashOutput::exited(out, status)
    }

    fn resolve(&self, path: &str) -> Option<PathBuf> {
        super::workspace::confine(self.root, path).ok()
    }

    fn simple(&mut self, segment: &str, out: &mut String) -> Flow {
        let Some(tokens) = shlex::split(segment) else {
            out.push_str("fake-shell: syntax error\n");
            return Flow::Continue(2);
        };
        let mut args = Vec::new();
        let mut redirect: Option<(String, bool)> = None;
        let mut iter = tokens.into_iter();
        while let Some(tok) = iter.next() {
            let (append, rest) = if let Some(r) = tok.strip_prefix(">>") {
                (true, r.to_owned())
            } else if let Some(r) = tok.strip_prefix('>') {
                (false, r.to_owned())
            } else {
                args.push(tok);
                continue;
            };
            let target = if rest.is_empty() { iter.next().unwrap_or_default() } else { rest };
            redirect = Some((target, append));
        }
        if args.is_empty() {
            return Flow::Continue(0);
        }
        let mut buf = String::new();
        let flow = self.builtin(&args, &mut buf);
        match redirect {
            None => out.push_str(&buf),
            Some((target, append)) => match self.resolve(&target) {
                Some(path) => {
                    let mut content =
                        if append { fs::read_to_string(&path).unwrap_or_default() } else { String::new() };
                    content.push_str(&buf);
                    if fs::write(&path, content).is_err() {
                        out.push_str(&format!("fake-shell: {target}: cannot write\n"));
                        return Flow::Continue(1);
                    }
                }
                None => {
                    out.push_str(&format!("fake-shell: {target}: permission denied\n"));
                    return Flow::Continue(1);
                }
            },
        }
        flow
    }

    fn builtin(&mut self, args: &[String], out: &mut String) -> Flow {
        let name = args[0].as_str();
        let rest = &args[1..];
        match name {
            "true" => Flow::Continue(0),
            "false" => Flow::Continue(1),
            "pwd" => {
                out.push_str("/workspace\n");
                Flow::Continue(0)
            }
            "echo" => {
                let (newline, words) = match rest.first().map(String::as_str) {
                    Some("-n") => (false, &rest[1..]),
                    _ => (true, rest),
                };
                out.push_str(&words.join(" "));
                if newline {
                    out.push('\n');
                }
                Flow::Continue(0)
            }
            "exit" => Flow::Exit(rest.first().and_then(|c| c.parse().ok()).unwrap_or(0)),
            "sleep" => {
                let secs: f64 = rest.first().and_then(|s| s.parse().ok()).unwrap_or(0.0);
                self.elapsed += Duration::from_secs_f64(secs.max(0.0));
                if self.elapsed > self.timeout {
                    Flow::TimedOut
                } else {
                    Flow::Continue(0)
                }
            }
            "cat" => {
                let mut code = 0;
                for file in rest {
                    match self.resolve(file).and_then(|p| fs::read_to_string(p).ok()) {
                        Some(text) => out.push_str(&text),
                        None => {
                            out.push_str(&format!("cat: {file}: No such file or directory\n"));
                            code = 1;
                        }
                    }
                }
                Flow::Continue(code)
            }
            "ls" => {
                let target = rest.iter().find(|a| !a.starts_with('-')).map_or(".", String::as_str);
                let Some(path) = self.resolve(target) else {
                    out.push_str(&format!("ls: cannot access '{target}'\n"));
                    return Flow::Continue(2);
                };
                if path.is_file() {
                    out.push_str(&format!("{target}\n"));
                    return Flow::Continue(0);
                }
                match fs::read_dir(&path) {
                    Ok(entries) => {
                        let mut names: Vec<String> = entries
                            .filter_map(Result::ok)
                            .map(|e| e.file_name().to_string_lossy().into_owned())
                            .collect();
                        names.sort();
                        for n in names {
                            out.push_str(&n);
                            out.push('\n');
                        }
                        Flow::Continue(0)
                    }
                    Err(_) => {
                        out.push_str(&format!("ls: cannot access '{target}'\n"));
                        Flow::Continue(2)
                    }
                }
            }
            "grep" => self.grep(rest, out),
            "rm" => {
                let mut code = 0;
                for file in rest.iter().filter(|a| !a.starts_with('-')) {
                    let removed = self.resolve(file).is_some_and(|p| {
                        if p.is_dir() { fs::remove_dir_all(p).is_ok() } else { fs::remove_file(p).is_ok() }
                    });
                    if !removed && !rest.iter().any(|a| a.starts_with('-') && a.contains('f')) {
                        out.push_str(&format!("rm: cannot remove '{file}'\n"));
                        code = 1;
                    }
                }
                Flow::Continue(code)
            }
            "touch" => {
                let mut code = 0;
                for file in rest {
                    let ok = self.resolve(file).is_some_and(|p| {
                        p.exists() || fs::write(p, "").is_ok()
                    });
                    if !ok {
                        out.push_str(&format!("touch: cannot touch '{file}'\n"));
                        code = 1;
                    }
                }
                Flow::Continue(code)
            }
            "mkdir" => {
                let mut code = 0;
                for dir in rest.iter().filter(|a| !a.starts_with('-')) {
                    if !self.resolve(dir).is_some_and(|p| fs::create_dir_all(p).is_ok()) {
                        out.push_str(&format!("mkdir: cannot create directory '{dir}'\n"));
                        code = 1;
                    }
                }
                Flow::Continue(code)
            }
            other => {
                out.push_str(&format!("fake-shell: {other}: command not found\n"));
                Flow::Continue(127)
            }
        }
    }

    fn grep(&self, args: &[String], out: &mut String) -> Flow {
        let mut quiet = false;
        let mut numbered = false;
        let mut invert = false;
        let mut count = false;
        let mut ignore_case = false;
        let mut positional = Vec::new();
        for a in args {
            match a.strip_prefix('-') {
                Some(flags) if !flags.is_empty() && positional.is_empty() => {
                    for f in flags.chars() {
                        match f {
                            'q' => quiet = true,
                            'n' => numbered = true,
                            'v' => invert = true,
                            'c' => count = true,
                            'i' => ignore_case = true,
                            _ => {}
                        }
                    }
                }
                _ => positional.push(a.as_str()),
            }
        }
        let Some((pattern, files)) = positional.split_first() else {
            out.push_str("grep: missing pattern\n");
            return Flow::Continue(2);
        };
        let needle = if ignore_case { pattern.to_lowercase() } else { pattern.to_string() };
        let multi = files.len() > 1;
        let mut matched = 0usize;
        let mut errored = false;
        for file in files {
            let Some(text) = self.resolve(file).and_then(|p| fs::read_to_string(p).ok()) else {
                out.push_str(&format!("grep: {file}: No such file or directory\n"));
                errored = true;
                continue;
            };
            let mut file_count = 0;
            for (n, line) in text.lines().enumerate() {
                let hay = if ignore_case { line.to_lowercase() } else { line.to_owned() };
                if hay.contains(&needle) != invert {
                    file_count += 1;
                    if !quiet && !count {
                        if multi {
                            out.push_str(&format!("{file}:"));
                        }
                        if numbered {
                            out.push_str(&format!("{}:", n + 1));
                        }
                        out.push_str(line);
                        out.push('\n');
                    }
                }
            }
            if count && !quiet {
                if multi {
                    out.push_str(&format!("{file}:"));
                }
                out.push_str(&format!("{file_count}\n"));
            }
            matched += file_count;
        }
        if matched > 0 {
            Flow::Continue(0)
        } else if errored {
            Flow::Continue(2)
        } else {
            Flow::Continue(1)
        }
    }
}

/// Splits on `;`, `&&`, `||` outside quotes.
fn split_sequence(cmd: &str) -> Vec<(Connector, String)> {
    let mut parts = Vec::new();
    let mut current = String::new();
    let mut connector = Connector::Always;
    let mut quote: Option<char> = None;
    let mut chars = cmd.chars().peekable();
    while let Some(c) = chars.next() {
        match (quote, c) {
            (Some(q), c) if c == q => {
                quote = None;
                current.push(c);
            }
            (Some(_), '\\') => {
                current.push(c);
                if let Some(n) = chars.next() {
                    current.push(n);
                }
            }
            (Some(_), c) => current.push(c),
            (None, '\'' | '"') => {
                quote = Some(c);
                current.push(c);
            }
            (None, ';' | '\n') => {
                parts.push((connector, std::mem::take(&mut current)));
                connector = Connector::Always;
            }
            (None, '&') if chars.peek() == Some(&'&') => {
                chars.next();
                parts.push((connector, std::mem::take(&mut current)));
                connector = Connector::And;
            }
            (None, '|') if chars.peek() == Some(&'|') => {
                chars.next();
                parts.push((connector, std::mem::take(&mut current)));
                connector = Connector::Or;
            }
            (None, c) => current.push(c),
        }
    }
    parts.push((connector, current));
    parts.into_iter().filter(|(_, s)| !s.trim().is_empty()).collect()
}
