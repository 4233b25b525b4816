//! Sequential execution of a plan against a persistent runner session.
//!
//! The runner is an external process speaking newline-delimited JSON over
//! its standard streams. Each request is `{"op": "run_cell", "step_index",
//! "source"}`; replies are `{"type", "step_index", "payload"}` with `type`
//! one of `stdout`, `file`, `figure`, `error`, `done`. A cell ends at its
//! `done` or `error` reply. File and figure payloads are paths relative to
//! the shared session directory.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::{Duration, Instant, SystemTime};

use serde::{Deserialize, Serialize};

use super::plan::ExecutionPlan;

pub const STEP_TIMEOUT: Duration = Duration::from_secs(30);
pub const SESSION_TIMEOUT: Duration = Duration::from_secs(600);

const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "svg", "gif", "webp"];
const TABLE_EXTENSIONS: &[&str] = &["csv", "tsv"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunnerRequest {
    pub op: String,
    pub step_index: usize,
    pub source: String,
}

impl RunnerRequest {
    pub fn run_cell(step_index: usize, source: impl Into<String>) -> Self {
        RunnerRequest {
            op: "run_cell".into(),
            step_index,
            source: source.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseType {
    Stdout,
    File,
    Figure,
    Error,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunnerResponse {
    #[serde(rename = "type")]
    pub kind: ResponseType,
    pub step_index: usize,
    #[serde(default)]
    pub payload: serde_json::Value,
}

impl RunnerResponse {
    pub fn text(&self) -> String {
        match &self.payload {
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Null => String::new(),
            other => other.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileKind {
    Figure,
    Table,
    Other,
}

impl FileKind {
    pub fn from_name(name: &str) -> FileKind {
        let ext = Path::new(name)
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if IMAGE_EXTENSIONS.contains(&ext.as_str()) {
            FileKind::Figure
        } else if TABLE_EXTENSIONS.contains(&ext.as_str()) {
            FileKind::Table
        } else {
            FileKind::Other
        }
    }
}

/// What the runner reported for one cell.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CellOutput {
    pub stdout: String,
    /// Session-relative paths with the kind the runner announced.
    pub files: Vec<(String, FileKind)>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RunnerError {
    #[error("runner unavailable: {0}")]
    Unavailable(String),
    #[error("runner session crashed: {0}")]
    SessionCrashed(String),
}

pub trait Runner {
    fn session_dir(&self) -> &Path;

    fn run_cell(&mut self, step_index: usize, source: &str, timeout: Duration) -> Result<CellOutput, RunnerError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProducedFile {
    pub name: String,
    pub bytes: Vec<u8>,
    pub kind: FileKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub step_index: usize,
    pub turn_index: usize,
    pub stdout: String,
    pub produced_files: Vec<ProducedFile>,
    pub error: Option<String>,
    /// Not run because the session died earlier.
    #[serde(default)]
    pub skipped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionOutcome {
    pub results: Vec<ExecutionResult>,
    pub crashed: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecutionLimits {
    pub step_timeout: Duration,
    pub session_timeout: Duration,
}

impl Default for ExecutionLimits {
    fn default() -> Self {
        ExecutionLimits {
            step_timeout: STEP_TIMEOUT,
            session_timeout: SESSION_TIMEOUT,
        }
    }
}

/// Rejects absolute paths and anything escaping the session directory.
pub fn confined_path(session_dir: &Path, relative: &str) -> Option<PathBuf> {
    let rel = Path::new(relative);
    if relative.is_empty() || rel.is_absolute() {
        return None;
    }
    if rel.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
        return None;
    }
    Some(session_dir.join(rel))
}

type Snapshot = BTreeMap<String, (u64, Option<SystemTime>)>;

fn snapshot(dir: &Path) -> Snapshot {
    fn walk(base: &Path, dir: &Path, out: &mut Snapshot) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for entry in entries.flatten() {
            let path = entry.path();
            let Ok(meta) = entry.metadata() else { continue };
            if meta.is_dir() {
                walk(base, &path, out);
            } else if let Ok(rel) = path.strip_prefix(base) {
                out.insert(
                    rel.to_string_lossy().replace('\\', "/"),
                    (meta.len(), meta.modified().ok()),
                );
            }
        }
    }
    let mut out = Snapshot::new();
    walk(dir, dir, &mut out);
    out
}

/// Runs every step of `plan` in order in one runner session.
///
/// A step whose cell raises still counts as run and the session continues.
/// If the runner dies or a step exceeds its timeout, that step records the
/// failure and every later step is marked skipped. Image files that appear
/// or change in the session directory during a step are attributed to it
/// even when the runner did not announce them.
pub fn run_session(plan: &ExecutionPlan, runner: &mut dyn Runner, limits: ExecutionLimits) -> SessionOutcome {
    let mut outcome = SessionOutcome::default();
    let started = Instant::now();
    let dir = runner.session_dir().to_path_buf();
    let mut before = snapshot(&dir);

    for step in &plan.steps {
        let mut result = ExecutionResult {
            step_index: step.step_index,
            turn_index: step.turn_index,
            stdout: String::new(),
            produced_files: Vec::new(),
            error: None,
            skipped: false,
        };
        if outcome.crashed.is_some() {
            result.skipped = true;
            outcome.results.push(result);
            continue;
        }
        let remaining = limits.session_timeout.saturating_sub(started.elapsed());
        if remaining.is_zero() {
            outcome.crashed = Some("session time limit reached".into());
            result.skipped = true;
            outcome.results.push(result);
            continue;
        }
        let timeout = limits.step_timeout.min(remaining);
        match runner.run_cell(step.step_index, &step.remapped_source, timeout) {
            Ok(cell) => {
                result.stdout = cell.stdout;
                result.error = cell.error;
                let after = snapshot(&dir);
                let mut names: Vec<(String, FileKind)> = Vec::new();
                for (name, kind) in cell.files {
                    if confined_path(&dir, &name).is_none() {
                        log::warn!("step {}: ignoring file outside session dir: {name}", step.step_index);
                        continue;
                    }
                    if !names.iter().any(|(n, _)| *n == name) {
                        names.push((name, kind));
                    }
                }
                for (name, meta) in &after {
                    let changed = before.get(name) != Some(meta);
                    if changed
                        && FileKind::from_name(name) == FileKind::Figure
                        && !names.iter().any(|(n, _)| n == name)
                    {
                        names.push((name.clone(), FileKind::Figure));
                    }
                }
                for (name, kind) in names {
                    let path = confined_path(&dir, &name).expect("checked above");
                    match std::fs::read(&path) {
                        Ok(bytes) => result.produced_files.push(ProducedFile { name, bytes, kind }),
                        Err(e) => log::warn!("step {}: cannot read {name}: {e}", step.step_index),
                    }
                }
                before = after;
            }
            Err(RunnerError::SessionCrashed(msg)) | Err(RunnerError::Unavailable(msg)) => {
                result.error = Some(msg.clone());
                outcome.crashed = Some(msg);
            }
        }
        outcome.results.push(result);
    }
    outcome
}

/// A runner process speaking the wire protocol.
pub struct ProcessRunner {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<String>,
    session_dir: PathBuf,
    dead: bool,
}

impl ProcessRunner {
    /// Starts `program args…` with the session directory as working
    /// directory.
    pub fn spawn(program: &str, args: &[String], session_dir: &Path) -> Result<Self, RunnerError> {
        std::fs::create_dir_all(session_dir).map_err(|e| RunnerError::Unavailable(e.to_string()))?;
        let mut child = Command::new(program)
            .args(args)
            .current_dir(session_dir)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| RunnerError::Unavailable(format!("{program}: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let stdin = child.stdin.take();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                let Ok(line) = line else { break };
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        Ok(ProcessRunner {
            child,
            stdin,
            lines: rx,
            session_dir: session_dir.to_path_buf(),
            dead: false,
        })
    }

    /// Parses a runner command line such as `python3 runner.py --flag`.
    pub fn spawn_command(command: &str, session_dir: &Path) -> Result<Self, RunnerError> {
        let mut parts = command.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| RunnerError::Unavailable("empty runner command".into()))?;
        let args: Vec<String> = parts.collect();
        Self::spawn(&program, &args, session_dir)
    }

    fn crash(&mut self, msg: String) -> RunnerError {
        self.dead = true;
        let _ = self.child.kill();
        RunnerError::SessionCrashed(msg)
    }
}

impl Runner for ProcessRunner {
    fn session_dir(&self) -> &Path {
        &self.session_dir
    }

    fn run_cell(&mut self, step_index: usize, source: &str, timeout: Duration) -> Result<CellOutput, RunnerError> {
        if self.dead {
            return Err(RunnerError::SessionCrashed("session already terminated".into()));
        }
        let request = serde_json::to_string(&RunnerRequest::run_cell(step_index, source)).expect("serializable");
        let write = self
            .stdin
            .as_mut()
            .ok_or_else(|| "runner stdin closed".to_string())
            .and_then(|w| {
                writeln!(w, "{request}")
                    .and_then(|_| w.flush())
                    .map_err(|e| e.to_string())
            });
        if let Err(e) = write {
            return Err(self.crash(e));
        }

        let deadline = Instant::now() + timeout;
        let mut out = CellOutput::default();
        loop {
            let wait = deadline.saturating_duration_since(Instant::now());
            let line = match self.lines.recv_timeout(wait) {
                Ok(line) => line,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(self.crash(format!("step {step_index} exceeded {}s", timeout.as_secs_f32())))
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Err(self.crash(format!("runner exited during step {step_index}")))
                }
            };
            if line.trim().is_empty() {
                continue;
            }
            let msg: RunnerResponse = match serde_json::from_str(&line) {
                Ok(m) => m,
                Err(e) => {
                    log::warn!("runner sent unparseable line ({e}): {line}");
                    continue;
                }
            };
            if msg.step_index != step_index {
                log::debug!("dropping stale runner message for step {}", msg.step_index);
                continue;
            }
            match msg.kind {
                ResponseType::Stdout => out.stdout.push_str(&msg.text()),
                ResponseType::File => {
                    let name = msg.text();
                    let kind = FileKind::from_name(&name);
                    out.files.push((name, kind));
                }
                ResponseType::Figure => out.files.push((msg.text(), FileKind::Figure)),
                ResponseType::Error => {
                    out.error = Some(msg.text());
                    return Ok(out);
                }
                ResponseType::Done => return Ok(out),
            }
        }
    }
}

impl Drop for ProcessRunner {
    fn drop(&mut self) {
        self.stdin.take();
        if !self.dead {
            let deadline = Instant::now() + Duration::from_millis(500);
            while Instant::now() < deadline {
                if let Ok(Some(_)) = self.child.try_wait() {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// In-process stand-in for a runner. The cell's stdout is its source text.
///
/// Lines of the form `#! figure NAME`, `#! table NAME` and `#! error MSG`
/// make the stub write a deterministic image file, write a small CSV file,
/// or fail the cell. `#! crash` ends the session.
pub struct EchoRunner {
    session_dir: PathBuf,
    pub cells_run: usize,
}

impl EchoRunner {
    pub fn new(session_dir: &Path) -> Self {
        EchoRunner {
            session_dir: session_dir.to_path_buf(),
            cells_run: 0,
        }
    }

    /// Bytes the stub writes for figure `name`: a PNG signature followed by
    /// the name, so distinct names give distinct images.
    pub fn figure_bytes(name: &str) -> Vec<u8> {
        let mut bytes = b"\x89PNG\r\n\x1a\n".to_vec();
        bytes.extend_from_slice(name.as_bytes());
        bytes
    }
}

impl Runner for EchoRunner {
    fn session_dir(&self) -> &Path {
        &self.session_dir
    }

    fn run_cell(&mut self, step_index: usize, source: &str, _timeout: Duration) -> Result<CellOutput, RunnerError> {
        self.cells_run += 1;
        let mut out = CellOutput {
            stdout: source.to_string(),
            ..Default::default()
        };
        for line in source.lines() {
            let Some(directive) = line.trim().strip_prefix("#!") else { continue };
            let mut parts = directive.trim().splitn(2, ' ');
            let op = parts.next().unwrap_or_default();
            let arg = parts.next().unwrap_or_default().trim();
            match op {
                "figure" | "table" => {
                    let path = confined_path(&self.session_dir, arg)
                        .ok_or_else(|| RunnerError::SessionCrashed(format!("bad path {arg:?}")))?;
                    let bytes = if op == "figure" {
                        Self::figure_bytes(arg)
                    } else {
                        format!("name,step\n{arg},{step_index}\n").into_bytes()
                    };
                    if let Some(parent) = path.parent() {
                        std::fs::create_dir_all(parent).map_err(|e| RunnerError::SessionCrashed(e.to_string()))?;
                    }
                    std::fs::write(&path, bytes).map_err(|e| RunnerError::SessionCrashed(e.to_string()))?;
                    let kind = if op == "figure" { FileKind::Figure } else { FileKind::Table };
                    out.files.push((arg.to_string(), kind));
                }
                "error" => {
                    out.error = Some(arg.to_string());
                    return Ok(out);
                }
                "crash" => return Err(RunnerError::SessionCrashed(format!("cell {step_index} crashed"))),
                _ => {}
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifacts::plan::ExecutionStep;

    fn plan(sources: &[&str]) -> ExecutionPlan {
        ExecutionPlan {
            steps: sources
                .iter()
                .enumerate()
                .map(|(i, s)| ExecutionStep {
                    step_index: i,
                    turn_index: i,
                    ordinal: 0,
                    source: s.to_string(),
                    remapped_source: s.to_string(),
                })
                .collect(),
            warnings: vec![],
        }
    }

    #[test]
    fn protocol_field_names() {
        let req = serde_json::to_value(RunnerRequest::run_cell(3, "print(1)")).unwrap();
        assert_eq!(req, serde_json::json!({"op": "run_cell", "step_index": 3, "source": "print(1)"}));
        let resp: RunnerResponse =
            serde_json::from_str(r#"{"type":"figure","step_index":2,"payload":"fig_0.png"}"#).unwrap();
        assert_eq!(resp.kind, ResponseType::Figure);
        assert_eq!(resp.text(), "fig_0.png");
        let done: RunnerResponse = serde_json::from_str(r#"{"type":"done","step_index":2}"#).unwrap();
        assert_eq!(done.text(), "");
    }

    #[test]
    fn confinement() {
        let dir = Path::new("/s");
        assert!(confined_path(dir, "a/b.png").is_some());
        assert!(confined_path(dir, "../b.png").is_none());
        assert!(confined_path(dir, "/etc/passwd").is_none());
        assert!(confined_path(dir, "").is_none());
    }

    #[test]
    fn empty_plan_empty_results() {
        let tmp = tempfile::tempdir().unwrap();
        let mut runner = EchoRunner::new(tmp.path());
        let out = run_session(&ExecutionPlan::default(), &mut runner, ExecutionLimits::default());
        assert!(out.results.is_empty());
        assert_eq!(runner.cells_run, 0);
    }

    #[test]
    fn error_continues_crash_skips() {
        let tmp = tempfile::tempdir().unwrap();
        let mut runner = EchoRunner::new(tmp.path());
        let out = run_session(
            &plan(&["#! error boom", "print(1)", "#! crash", "print(2)"]),
            &mut runner,
            ExecutionLimits::default(),
        );
        let steps: Vec<usize> = out.results.iter().map(|r| r.step_index).collect();
        assert_eq!(steps, vec![0, 1, 2, 3]);
        assert_eq!(out.results[0].error.as_deref(), Some("boom"));
        assert!(out.results[1].error.is_none());
        assert!(out.results[2].error.is_some());
        assert!(out.results[3].skipped);
        assert!(out.crashed.is_some());
        assert_eq!(runner.cells_run, 3);
    }

    #[test]
    fn figures_are_collected() {
        let tmp = tempfile::tempdir().unwrap();
        let mut runner = EchoRunner::new(tmp.path());
        let out = run_session(
            &plan(&["#! figure a.png\n#! figure b.png", "#! table t.csv"]),
            &mut runner,
            ExecutionLimits::default(),
        );
        let names: Vec<&str> = out.results[0].produced_files.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(names, vec!["a.png", "b.png"]);
        assert_eq!(out.results[0].produced_files[0].bytes, EchoRunner::figure_bytes("a.png"));
        assert_eq!(out.results[1].produced_files.len(), 1);
        assert_eq!(out.results[1].produced_files[0].kind, FileKind::Table);
    }

    #[test]
    fn unannounced_images_are_picked_up() {
        struct Silent(PathBuf);
        impl Runner for Silent {
            fn session_dir(&self) -> &Path {
                &self.0
            }
            fn run_cell(&mut self, i: usize, _: &str, _: Duration) -> Result<CellOutput, RunnerError> {
                std::fs::write(self.0.join(format!("plot_{i}.png")), [i as u8]).unwrap();
                std::fs::write(self.0.join("notes.txt"), "x").unwrap();
                Ok(CellOutput::default())
            }
        }
        let tmp = tempfile::tempdir().unwrap();
        let mut runner = Silent(tmp.path().to_path_buf());
        let out = run_session(&plan(&["a", "b"]), &mut runner, ExecutionLimits::default());
        assert_eq!(out.results[0].produced_files.len(), 1);
        assert_eq!(out.results[1].produced_files[0].name, "plot_1.png");
    }

    #[test]
    fn missing_program_is_unavailable() {
        let tmp = tempfile::tempdir().unwrap();
        let err = ProcessRunner::spawn("/nonexistent/runner-binary", &[], tmp.path()).err();
        assert!(matches!(err, Some(RunnerError::Unavailable(_))));
    }
}
