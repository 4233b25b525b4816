//! The canonical structured state of a session and element resolution.

use serde::{Deserialize, Serialize};

use crate::artifacts::{Artifact, ArtifactKind, ArtifactRegistry};
use crate::forest::{ThreadForest, ThreadId, ThreadNode};
use crate::model::{Conversation, ElementKind, ElementRef, Insight, SpeechActTag, Turn};

pub const SCHEMA_VERSION: u32 = 1;

/// Everything the structuring job produces for one conversation. This is the
/// document written to `state.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredState {
    pub schema_version: u32,
    pub conversation: Conversation,
    pub thread_forest: ThreadForest,
    pub speech_acts: Vec<SpeechActTag>,
    pub insights: Vec<Insight>,
    pub artifact_registry: ArtifactRegistry,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResolveError {
    #[error("unknown {} reference {}", .0.kind.as_str(), .0.target_id)]
    UnknownRef(ElementRef),
    #[error("{} reference {} does not name an element of that kind", .0.kind.as_str(), .0.target_id)]
    KindMismatch(ElementRef),
}

/// A resolved element, borrowed from the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Element<'a> {
    Turn(&'a Turn),
    Thread(&'a ThreadNode),
    Insight(usize, &'a Insight),
    Artifact(&'a Artifact),
    Note(&'a str),
}

impl StructuredState {
    pub fn new(
        conversation: Conversation,
        thread_forest: ThreadForest,
        speech_acts: Vec<SpeechActTag>,
        insights: Vec<Insight>,
        artifact_registry: ArtifactRegistry,
    ) -> Self {
        let mut state = StructuredState {
            schema_version: SCHEMA_VERSION,
            conversation,
            thread_forest,
            speech_acts,
            insights,
            artifact_registry,
            warnings: Vec::new(),
        };
        state.sync_turn_annotations();
        state
    }

    /// Copies speech-act tags and artifact references onto the turns so the
    /// two views never disagree.
    pub fn sync_turn_annotations(&mut self) {
        self.speech_acts.sort_by_key(|t| t.turn_index);
        for turn in &mut self.conversation.turns {
            turn.speech_act = self
                .speech_acts
                .iter()
                .find(|t| t.turn_index == turn.turn_index)
                .copied();
            turn.artifacts = ArtifactKind::ALL
                .iter()
                .rev()
                .flat_map(|k| self.artifact_registry.for_turn(turn.turn_index, *k))
                .map(|a| a.artifact_id.clone())
                .collect();
        }
    }

    pub fn speech_act(&self, turn_index: usize) -> Option<&SpeechActTag> {
        self.speech_acts.iter().find(|t| t.turn_index == turn_index)
    }

    /// Title used for a turn: its leaf thread title, or the opening words of
    /// the user query when no leaf exists.
    pub fn turn_title(&self, turn_index: usize) -> String {
        if let Some(leaf) = self.thread_forest.leaf_for_turn(turn_index) {
            return leaf.title.clone();
        }
        self.conversation
            .turn(turn_index)
            .map(|t| crate::structuring::fallback::leading_words(&t.user_message.content, 8))
            .unwrap_or_default()
    }

    /// Insights whose earliest source message lies in `turn_index`.
    pub fn insights_anchored_at(&self, turn_index: usize) -> Vec<usize> {
        self.insights
            .iter()
            .enumerate()
            .filter(|(_, ins)| ins.turn_indices(&self.conversation).first() == Some(&turn_index))
            .map(|(i, _)| i)
            .collect()
    }

    /// Artifacts referenced from a turn: code, then tables, then
    /// visualizations.
    pub fn artifacts_of_turn(&self, turn_index: usize) -> Vec<&Artifact> {
        [ArtifactKind::Code, ArtifactKind::DataTable, ArtifactKind::Visualization]
            .into_iter()
            .flat_map(|k| self.artifact_registry.for_turn(turn_index, k))
            .collect()
    }

    pub fn resolve<'a>(&'a self, r: &'a ElementRef) -> Result<Element<'a>, ResolveError> {
        resolve_ref(self, r)
    }
}

fn numeric_target(r: &ElementRef) -> Result<u64, ResolveError> {
    r.target_id
        .trim()
        .parse::<u64>()
        .map_err(|_| ResolveError::KindMismatch(r.clone()))
}

/// Resolves a reference against the session state.
///
/// Turn, thread and insight targets must be integers; a non-integer target
/// for those kinds (or an integer target for an artifact) is a kind mismatch
/// rather than an unknown reference.
pub fn resolve_ref<'a>(state: &'a StructuredState, r: &'a ElementRef) -> Result<Element<'a>, ResolveError> {
    let unknown = || ResolveError::UnknownRef(r.clone());
    match r.kind {
        ElementKind::Turn => {
            let idx = numeric_target(r)?;
            usize::try_from(idx)
                .ok()
                .and_then(|i| state.conversation.turn(i))
                .map(Element::Turn)
                .ok_or_else(unknown)
        }
        ElementKind::Thread => {
            let id = numeric_target(r)?;
            ThreadId::try_from(id)
                .ok()
                .and_then(|id| state.thread_forest.get(id))
                .map(Element::Thread)
                .ok_or_else(unknown)
        }
        ElementKind::Insight => {
            let idx = numeric_target(r)?;
            usize::try_from(idx)
                .ok()
                .and_then(|i| state.insights.get(i).map(|ins| Element::Insight(i, ins)))
                .ok_or_else(unknown)
        }
        ElementKind::Artifact => {
            if ArtifactKind::from_artifact_id(r.target_id.trim()).is_none() {
                return Err(ResolveError::KindMismatch(r.clone()));
            }
            state
                .artifact_registry
                .get(r.target_id.trim())
                .map(Element::Artifact)
                .ok_or_else(unknown)
        }
        ElementKind::Note => Ok(Element::Note(&r.target_id)),
    }
}
