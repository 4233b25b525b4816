//! Artifact engine: execution planning, the runner session, and the
//! deduplicating registry.

pub mod plan;
pub mod register;
pub mod registry;
pub mod runner;

pub use plan::{plan_execution, remap_data_paths, DatasetManifest, ExecutionPlan, ExecutionStep, PlanError};
pub use register::{register_artifacts, Registration};
pub use registry::{Artifact, ArtifactKind, ArtifactRegistry};
pub use runner::{
    run_session, EchoRunner, ExecutionLimits, ExecutionResult, FileKind, ProcessRunner, Runner, RunnerError,
    SessionOutcome,
};
