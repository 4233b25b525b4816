//! Sessions on disk and in memory, and the structuring job.
//!
//! Layout of one session directory:
//!
//! ```text
//! <root>/<session_id>/
//!     session.json          status, warnings, counters
//!     export.json           the uploaded export, byte for byte
//!     datasets/<name>       uploaded dataset files
//!     state.json            the structured state, once ready
//!     artifacts/...         artifact payloads
//!     compositions/<cid>.json
//!     sandbox/              runner working directory
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use convlens_core::artifacts::{plan_execution, DatasetManifest, EchoRunner, ProcessRunner, Runner};
use convlens_core::composition::{
    build_summary_prompt, generate_summary, serialize_composition, Composition, CompositionOp, SummaryOutcome,
    SummaryParams,
};
use convlens_core::ingest::stats::state_stats;
use convlens_core::ingest::{ingest_export, ConversationStats};
use convlens_core::llm::LlmBackend;
use convlens_core::model::Conversation;
use convlens_core::pipeline::{assemble, execute};
use convlens_core::state::StructuredState;
use convlens_core::structuring::run_pipeline;

use crate::config::{ConfigError, RunnerMode, ServiceConfig};
use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Structuring,
    Executing,
    Ready,
    Failed,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pending => "pending",
            Status::Structuring => "structuring",
            Status::Executing => "executing",
            Status::Ready => "ready",
            Status::Failed => "failed",
        }
    }

    fn is_running(self) -> bool {
        matches!(self, Status::Pending | Status::Structuring | Status::Executing)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub title: String,
    pub status: Status,
    /// Ready, but some module fell back or execution stopped early.
    pub partial: bool,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub export_digest: String,
    pub next_composition: u64,
}

/// A ready session's state with its precomputed statistics.
pub struct Ready {
    pub state: StructuredState,
    pub stats: ConversationStats,
}

pub struct Session {
    pub id: String,
    pub dir: PathBuf,
    meta: RwLock<SessionMeta>,
    ready: RwLock<Option<Arc<Ready>>>,
    compositions: Mutex<BTreeMap<String, Composition>>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable");
    out.push(b'\n');
    out
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> std::io::Result<T> {
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

/// File names only: no separators, no dot-dot, not empty.
fn safe_name(name: &str) -> bool {
    !name.is_empty() && name != "." && name != ".." && !name.contains(['/', '\\']) && !name.starts_with('.')
}

impl Session {
    pub fn meta(&self) -> SessionMeta {
        self.meta.read().expect("meta lock").clone()
    }

    pub fn ready(&self) -> Result<Arc<Ready>, ApiError> {
        let meta = self.meta();
        match (&meta.status, self.ready.read().expect("ready lock").clone()) {
            (Status::Ready, Some(r)) => Ok(r),
            _ => Err(ApiError::NotReady {
                id: self.id.clone(),
                status: meta.status.as_str().to_string(),
            }),
        }
    }

    fn save_meta(&self, meta: &SessionMeta) -> std::io::Result<()> {
        write_atomic(&self.dir.join("session.json"), &to_json(meta))
    }

    fn update_meta(&self, f: impl FnOnce(&mut SessionMeta)) -> std::io::Result<()> {
        let mut meta = self.meta.write().expect("meta lock");
        f(&mut meta);
        self.save_meta(&meta)
    }

    fn composition_path(&self, cid: &str) -> PathBuf {
        self.dir.join("compositions").join(format!("{cid}.json"))
    }

    fn save_composition(&self, c: &Composition) -> std::io::Result<()> {
        write_atomic(&self.composition_path(&c.composition_id), &to_json(c))
    }

    /// The path of an artifact payload inside the session directory.
    pub fn artifact_file(&self, path: &str) -> Option<PathBuf> {
        convlens_core::artifacts::runner::confined_path(&self.dir, path.trim_start_matches('/'))
    }

    fn manifest(&self) -> std::io::Result<DatasetManifest> {
        let mut manifest = DatasetManifest::new();
        let dir = self.dir.join("datasets");
        if dir.is_dir() {
            for entry in std::fs::read_dir(&dir)? {
                let entry = entry?;
                let name = entry.file_name().to_string_lossy().into_owned();
                manifest.insert(name, entry.path().to_string_lossy().into_owned());
            }
        }
        Ok(manifest)
    }
}

/// All sessions under one data root.
pub struct Store {
    pub config: ServiceConfig,
    backend: Option<Arc<dyn LlmBackend>>,
    sessions: RwLock<BTreeMap<String, Arc<Session>>>,
    next_id: Mutex<u64>,
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot open data root {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryReply {
    pub composition_id: String,
    pub markdown: String,
    pub summary: String,
    pub attempts: u32,
    pub warnings: Vec<String>,
}

impl Store {
    /// Opens the data root and loads every session in it. Sessions whose
    /// job was interrupted are queued again.
    pub fn open(config: ServiceConfig) -> Result<Arc<Store>, StoreError> {
        let backend = config.make_backend()?;
        Self::open_with_backend(config, backend)
    }

    pub fn open_with_backend(
        config: ServiceConfig,
        backend: Option<Arc<dyn LlmBackend>>,
    ) -> Result<Arc<Store>, StoreError> {
        let root = config.data_root.clone();
        let io = |source| StoreError::Io {
            path: root.clone(),
            source,
        };
        std::fs::create_dir_all(&root).map_err(io)?;
        let mut sessions = BTreeMap::new();
        let mut max_id = 0u64;
        let mut resume = Vec::new();
        let mut entries: Vec<_> = std::fs::read_dir(&root)
            .map_err(io)?
            .filter_map(Result::ok)
            .filter(|e| e.path().join("session.json").is_file())
            .collect();
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with('.') {
                continue;
            }
            match Self::load_session(&entry.path()) {
                Ok(session) => {
                    if let Some(n) = name.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                        max_id = max_id.max(n);
                    }
                    if session.meta().status.is_running() {
                        resume.push(session.clone());
                    }
                    sessions.insert(name, session);
                }
                Err(e) => log::warn!("skipping session {name}: {e}"),
            }
        }
        let store = Arc::new(Store {
            config,
            backend,
            sessions: RwLock::new(sessions),
            next_id: Mutex::new(max_id + 1),
        });
        for session in resume {
            log::info!("resuming interrupted job of session {}", session.id);
            store.spawn_job(session);
        }
        Ok(store)
    }

    fn load_session(dir: &Path) -> std::io::Result<Arc<Session>> {
        let mut meta: SessionMeta = read_json(&dir.join("session.json"))?;
        let mut ready = None;
        if meta.status == Status::Ready {
            let state: StructuredState = read_json(&dir.join("state.json"))?;
            let stats = state_stats(&state);
            ready = Some(Arc::new(Ready { state, stats }));
        } else if meta.status.is_running() {
            meta.status = Status::Pending;
        }
        let mut compositions = BTreeMap::new();
        let cdir = dir.join("compositions");
        if cdir.is_dir() {
            for entry in std::fs::read_dir(&cdir)? {
                let path = entry?.path();
                if path.extension().is_some_and(|e| e == "json") {
                    let c: Composition = read_json(&path)?;
                    compositions.insert(c.composition_id.clone(), c);
                }
            }
        }
        Ok(Arc::new(Session {
            id: meta.session_id.clone(),
            dir: dir.to_path_buf(),
            meta: RwLock::new(meta),
            ready: RwLock::new(ready),
            compositions: Mutex::new(compositions),
        }))
    }

    pub fn backend(&self) -> Option<&Arc<dyn LlmBackend>> {
        self.backend.as_ref()
    }

    pub fn session(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    pub fn list(&self) -> Vec<SessionMeta> {
        self.sessions
            .read()
            .expect("sessions lock")
            .values()
            .map(|s| s.meta())
            .collect()
    }

    fn allocate_id(&self) -> String {
        let mut next = self.next_id.lock().expect("id lock");
        let id = format!("s{next}");
        *next += 1;
        id
    }

    /// Validates the upload, persists it and starts the structuring job.
    /// Nothing is written when the export is malformed or names a dataset
    /// that was not uploaded.
    pub fn create_session(
        self: &Arc<Self>,
        export: &[u8],
        datasets: &BTreeMap<String, Vec<u8>>,
    ) -> Result<SessionMeta, ApiError> {
        let conv = ingest_export(export)?;
        for name in datasets.keys() {
            if !safe_name(name) {
                return Err(ApiError::BadRequest(format!("dataset name {name:?} is not a plain file name")));
            }
        }
        let mut probe = DatasetManifest::new();
        for name in datasets.keys() {
            probe.insert(name.clone(), name.clone());
        }
        plan_execution(&conv, &probe)?;

        let id = self.allocate_id();
        let dir = self.config.data_root.join(&id);
        let staging = self.config.data_root.join(format!(".{id}.staging"));
        let meta = SessionMeta {
            session_id: id.clone(),
            title: conv.title.clone(),
            status: Status::Pending,
            partial: false,
            warnings: Vec::new(),
            error: None,
            export_digest: conv.source_export_digest.clone(),
            next_composition: 1,
        };
        let stage = || -> std::io::Result<()> {
            let _ = std::fs::remove_dir_all(&staging);
            std::fs::create_dir_all(staging.join("datasets"))?;
            std::fs::write(staging.join("export.json"), export)?;
            for (name, bytes) in datasets {
                std::fs::write(staging.join("datasets").join(name), bytes)?;
            }
            std::fs::write(staging.join("session.json"), to_json(&meta))?;
            std::fs::rename(&staging, &dir)
        };
        stage()?;
        let session = Arc::new(Session {
            id: id.clone(),
            dir,
            meta: RwLock::new(meta.clone()),
            ready: RwLock::new(None),
            compositions: Mutex::new(BTreeMap::new()),
        });
        self.sessions.write().expect("sessions lock").insert(id, session.clone());
        self.spawn_job(session);
        Ok(meta)
    }

    /// Registers an already structured state as a ready session, with its
    /// artifact payloads keyed by session-relative path.
    pub fn import_state(
        &self,
        state: StructuredState,
        files: &BTreeMap<String, Vec<u8>>,
    ) -> Result<SessionMeta, ApiError> {
        let id = self.allocate_id();
        let dir = self.config.data_root.join(&id);
        for (path, bytes) in files {
            let target = convlens_core::artifacts::runner::confined_path(&dir, path.trim_start_matches('/'))
                .ok_or_else(|| ApiError::BadRequest(format!("artifact path {path:?} leaves the session")))?;
            write_atomic(&target, bytes)?;
        }
        write_atomic(&dir.join("state.json"), &to_json(&state))?;
        let meta = SessionMeta {
            session_id: id.clone(),
            title: state.conversation.title.clone(),
            status: Status::Ready,
            partial: !state.warnings.is_empty(),
            warnings: state.warnings.clone(),
            error: None,
            export_digest: state.conversation.source_export_digest.clone(),
            next_composition: 1,
        };
        write_atomic(&dir.join("session.json"), &to_json(&meta))?;
        let stats = state_stats(&state);
        let session = Arc::new(Session {
            id: id.clone(),
            dir,
            meta: RwLock::new(meta.clone()),
            ready: RwLock::new(Some(Arc::new(Ready { state, stats }))),
            compositions: Mutex::new(BTreeMap::new()),
        });
        self.sessions.write().expect("sessions lock").insert(id, session);
        Ok(meta)
    }

    fn spawn_job(self: &Arc<Self>, session: Arc<Session>) {
        let store = self.clone();
        std::thread::spawn(move || {
            let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| store.run_job(&session)));
            let error = match outcome {
                Ok(Ok(())) => return,
                Ok(Err(e)) => e,
                Err(_) => "structuring job panicked".to_string(),
            };
            log::error!("session {} failed: {error}", session.id);
            let _ = session.update_meta(|m| {
                m.status = Status::Failed;
                m.error = Some(error);
            });
        });
    }

    fn make_runner(&self, sandbox: &Path) -> Result<Option<Box<dyn Runner>>, String> {
        match &self.config.runner {
            RunnerMode::None => Ok(None),
            RunnerMode::Echo => Ok(Some(Box::new(EchoRunner::new(sandbox)))),
            RunnerMode::Command(cmd) => ProcessRunner::spawn_command(cmd, sandbox)
                .map(|r| Some(Box::new(r) as Box<dyn Runner>))
                .map_err(|e| e.to_string()),
        }
    }

    fn run_job(&self, session: &Session) -> Result<(), String> {
        let io = |e: std::io::Error| e.to_string();
        let export = std::fs::read(session.dir.join("export.json")).map_err(io)?;
        let conv: Conversation = ingest_export(&export).map_err(|e| e.to_string())?;
        let manifest = session.manifest().map_err(io)?;
        let plan = plan_execution(&conv, &manifest).map_err(|e| e.to_string())?;
        session
            .update_meta(|m| m.status = Status::Structuring)
            .map_err(io)?;
        let sandbox = session.dir.join("sandbox");
        let backend = self.backend.as_deref();
        let (extraction, executed, runner_note) = std::thread::scope(|s| {
            let executing = s.spawn(|| match self.make_runner(&sandbox) {
                Ok(Some(mut runner)) => (execute(&conv, &plan, Some(runner.as_mut()), self.config.limits), None),
                Ok(None) => (execute(&conv, &plan, None, self.config.limits), None),
                Err(e) => (
                    execute(&conv, &plan, None, self.config.limits),
                    Some(format!("runner unavailable ({e}); only static artifacts were registered")),
                ),
            });
            let extraction = run_pipeline(&conv, backend);
            let _ = session.update_meta(|m| m.status = Status::Executing);
            let (executed, note) = executing.join().expect("execution thread panicked");
            (extraction, executed, note)
        });
        let (registration, outcome) = executed;
        let mut state = assemble(conv, &plan, extraction, &registration, &outcome);
        state.warnings.extend(runner_note);
        for (path, bytes) in &registration.files {
            let target = session
                .artifact_file(path)
                .ok_or_else(|| format!("artifact path {path:?} leaves the session"))?;
            write_atomic(&target, bytes).map_err(io)?;
        }
        write_atomic(&session.dir.join("state.json"), &to_json(&state)).map_err(io)?;
        let stats = state_stats(&state);
        let warnings = state.warnings.clone();
        *session.ready.write().expect("ready lock") = Some(Arc::new(Ready { state, stats }));
        session
            .update_meta(|m| {
                m.status = Status::Ready;
                m.partial = !warnings.is_empty();
                m.warnings = warnings;
            })
            .map_err(io)
    }

    pub fn create_composition(&self, session: &Session) -> Result<Composition, ApiError> {
        session.ready()?;
        let mut meta = session.meta.write().expect("meta lock");
        let cid = format!("c{}", meta.next_composition);
        let c = Composition::new(cid.clone());
        session.save_composition(&c)?;
        meta.next_composition += 1;
        session.save_meta(&meta)?;
        session.compositions.lock().expect("compositions lock").insert(cid, c.clone());
        Ok(c)
    }

    pub fn composition(&self, session: &Session, cid: &str) -> Result<Composition, ApiError> {
        session
            .compositions
            .lock()
            .expect("compositions lock")
            .get(cid)
            .cloned()
            .ok_or_else(|| ApiError::UnknownComposition(cid.to_string()))
    }

    /// Applies `ops` in order. Either all apply and the result is persisted,
    /// or none do. Returns the composition and the block id of each op.
    pub fn patch_composition(
        &self,
        session: &Session,
        cid: &str,
        ops: &[CompositionOp],
    ) -> Result<(Composition, Vec<u64>), ApiError> {
        let ready = session.ready()?;
        let mut all = session.compositions.lock().expect("compositions lock");
        let current = all.get(cid).ok_or_else(|| ApiError::UnknownComposition(cid.to_string()))?;
        let mut next = current.clone();
        let mut ids = Vec::with_capacity(ops.len());
        for op in ops {
            ids.push(next.apply(&ready.state, op)?);
        }
        session.save_composition(&next)?;
        all.insert(cid.to_string(), next.clone());
        Ok((next, ids))
    }

    pub fn serialize(&self, session: &Session, cid: &str) -> Result<String, ApiError> {
        let ready = session.ready()?;
        let mut all = session.compositions.lock().expect("compositions lock");
        let c = all.get_mut(cid).ok_or_else(|| ApiError::UnknownComposition(cid.to_string()))?;
        let md = serialize_composition(c, &ready.state)?;
        c.serialized_markdown = Some(md.clone());
        session.save_composition(c)?;
        Ok(md)
    }

    /// Serializes the composition and asks the backend for a summary. The
    /// composition lock is not held during the model call.
    pub fn summarize(&self, session: &Session, cid: &str, params: SummaryParams) -> Result<SummaryReply, ApiError> {
        params.validate()?;
        let backend = self.backend.clone().ok_or(ApiError::NoBackend)?;
        let md = self.serialize(session, cid)?;
        let request = build_summary_prompt(&md, params)?;
        let SummaryOutcome {
            text,
            attempts,
            warnings,
        } = generate_summary(&request, &md, backend.as_ref())?;
        let mut all = session.compositions.lock().expect("compositions lock");
        if let Some(c) = all.get_mut(cid) {
            c.summary_params = Some(params);
            c.generated_summary = Some(text.clone());
            c.summary_warnings = warnings.clone();
            session.save_composition(c)?;
        }
        Ok(SummaryReply {
            composition_id: cid.to_string(),
            markdown: md,
            summary: text,
            attempts,
            warnings,
        })
    }
}
