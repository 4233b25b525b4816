//! End-to-end build of a structured state: plan and run the code cells,
//! register artifacts, and run the extraction modules.

use std::collections::BTreeMap;

use crate::artifacts::{
    plan_execution, register_artifacts, run_session, DatasetManifest, ExecutionLimits, ExecutionPlan, PlanError,
    Registration, Runner, SessionOutcome,
};
use crate::llm::LlmBackend;
use crate::model::Conversation;
use crate::state::StructuredState;
use crate::structuring::{run_pipeline, Extraction};

/// A finished build: the state plus the artifact payloads to store next to
/// it, keyed by session-relative path.
#[derive(Debug, Clone, PartialEq)]
pub struct Build {
    pub state: StructuredState,
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Build {
    /// Ready with warnings: some module fell back, execution stopped early,
    /// or ingestion flagged the transcript.
    pub fn is_partial(&self) -> bool {
        !self.state.warnings.is_empty()
    }
}

/// Runs the plan if a runner is given; without one only the static code,
/// console tables and embeds are registered.
pub fn execute(
    conversation: &Conversation,
    plan: &ExecutionPlan,
    runner: Option<&mut dyn Runner>,
    limits: ExecutionLimits,
) -> (Registration, SessionOutcome) {
    let outcome = match runner {
        Some(r) => run_session(plan, r, limits),
        None => SessionOutcome::default(),
    };
    (register_artifacts(conversation, &outcome.results), outcome)
}

/// Joins the pieces into one state and collects every warning.
pub fn assemble(
    conversation: Conversation,
    plan: &ExecutionPlan,
    extraction: Extraction,
    registration: &Registration,
    outcome: &SessionOutcome,
) -> StructuredState {
    let mut warnings: Vec<String> = conversation.validation_flags.clone();
    warnings.extend(plan.warnings.iter().cloned());
    if let Some(reason) = &outcome.crashed {
        let skipped = outcome.results.iter().filter(|r| r.skipped).count();
        warnings.push(format!("execution stopped ({reason}); {skipped} step(s) skipped"));
    }
    warnings.extend(extraction.warnings());
    let mut state = StructuredState::new(
        conversation,
        extraction.thread_forest,
        extraction.speech_acts,
        extraction.insights,
        registration.registry.clone(),
    );
    state.warnings = warnings;
    state
}

/// Plans, executes and structures `conversation`. Extraction runs on a
/// second thread while the cells execute.
pub fn build_state(
    conversation: Conversation,
    manifest: &DatasetManifest,
    backend: Option<&dyn LlmBackend>,
    runner: Option<&mut dyn Runner>,
    limits: ExecutionLimits,
) -> Result<Build, PlanError> {
    let plan = plan_execution(&conversation, manifest)?;
    let (extraction, (registration, outcome)) = std::thread::scope(|s| {
        let extracting = s.spawn(|| run_pipeline(&conversation, backend));
        let executed = execute(&conversation, &plan, runner, limits);
        (extracting.join().expect("extraction panicked"), executed)
    });
    let state = assemble(conversation, &plan, extraction, &registration, &outcome);
    Ok(Build {
        state,
        files: registration.files,
    })
}
