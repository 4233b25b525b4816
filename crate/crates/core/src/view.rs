//! Filtered views of a structured state: outline rows, detail threads and
//! annotated turns.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::artifacts::{Artifact, ArtifactKind};
use crate::forest::{ThreadId, ThreadNode};
use crate::model::{Insight, Turn};
use crate::state::StructuredState;
use crate::taxonomy::{InsightType, SpeechActKind};

/// Per-facet selections. `None` leaves a facet unfiltered; within a facet
/// the selected values are alternatives.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FilterSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech_acts: Option<BTreeSet<SpeechActKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insight_types: Option<BTreeSet<InsightType>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub artifact_kinds: Option<BTreeSet<ArtifactKind>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad filter {0:?}: {1}")]
pub struct FilterParseError(pub String, pub String);

impl FilterSpec {
    pub fn is_empty(&self) -> bool {
        self.speech_acts.is_none() && self.insight_types.is_none() && self.artifact_kinds.is_none()
    }

    pub fn shows_speech_act(&self, kind: SpeechActKind) -> bool {
        self.speech_acts.as_ref().is_none_or(|s| s.contains(&kind))
    }

    pub fn shows_insight(&self, insight: &Insight) -> bool {
        self.insight_types
            .as_ref()
            .is_none_or(|s| insight.types.iter().any(|t| s.contains(t)))
    }

    pub fn shows_artifact(&self, kind: ArtifactKind) -> bool {
        self.artifact_kinds.as_ref().is_none_or(|s| s.contains(&kind))
    }
}

fn parse_set<T: Ord>(
    raw: &str,
    facet: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<BTreeSet<T>, FilterParseError> {
    raw.split(',')
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .map(|v| parse(v).ok_or_else(|| FilterParseError(v.to_string(), format!("not a value of {facet}"))))
        .collect()
}

/// Compact form used by the CLI and the `filters` query parameter:
/// `speech_acts:FactFinding,Debugging;insight_types:Outlier;artifact_kinds:code`.
/// A facet with nothing after the colon selects nothing.
impl FromStr for FilterSpec {
    type Err = FilterParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut spec = FilterSpec::default();
        for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (facet, values) = part
                .split_once(':')
                .ok_or_else(|| FilterParseError(part.to_string(), "expected facet:values".into()))?;
            match facet.trim() {
                "speech_acts" | "speech_act" => {
                    spec.speech_acts = Some(parse_set(values, facet, SpeechActKind::from_alias)?);
                }
                "insight_types" | "insight_type" => {
                    spec.insight_types = Some(parse_set(values, facet, InsightType::parse)?);
                }
                "artifact_kinds" | "artifact_kind" | "artifacts" => {
                    spec.artifact_kinds = Some(parse_set(values, facet, ArtifactKind::parse)?);
                }
                other => return Err(FilterParseError(other.to_string(), "unknown facet".into())),
            }
        }
        Ok(spec)
    }
}

impl fmt::Display for FilterSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(s) = &self.speech_acts {
            let v: Vec<&str> = s.iter().map(|k| k.as_str()).collect();
            parts.push(format!("speech_acts:{}", v.join(",")));
        }
        if let Some(s) = &self.insight_types {
            let v: Vec<&str> = s.iter().map(|k| k.as_str()).collect();
            parts.push(format!("insight_types:{}", v.join(",")));
        }
        if let Some(s) = &self.artifact_kinds {
            let v: Vec<&str> = s.iter().map(|k| k.as_str()).collect();
            parts.push(format!("artifact_kinds:{}", v.join(",")));
        }
        f.write_str(&parts.join(";"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactIcon {
    pub artifact_id: String,
    pub kind: ArtifactKind,
}

/// One outline row. Rows are never dropped by filters; only their icons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRow {
    pub turn_index: usize,
    pub title: String,
    pub speech_act: Option<SpeechActKind>,
    /// Positions of the insights anchored here.
    pub insights: Vec<usize>,
    pub artifacts: Vec<ArtifactIcon>,
    /// Containing threads, outermost first.
    pub threads: Vec<ThreadId>,
}

impl TurnRow {
    pub fn element_count(&self) -> usize {
        usize::from(self.speech_act.is_some()) + self.insights.len() + self.artifacts.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementCounts {
    pub turns: usize,
    pub speech_acts: usize,
    pub insights: usize,
    pub artifacts: usize,
}

impl ElementCounts {
    fn add(&mut self, other: &ElementCounts) {
        self.turns += other.turns;
        self.speech_acts += other.speech_acts;
        self.insights += other.insights;
        self.artifacts += other.artifacts;
    }

    pub fn elements(&self) -> usize {
        self.speech_acts + self.insights + self.artifacts
    }
}

/// A thread in the detail view with the counts of the visible elements
/// below it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadView {
    pub thread_id: ThreadId,
    pub title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn_index: Option<usize>,
    pub counts: ElementCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ThreadView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsightView {
    pub index: usize,
    pub statement: String,
    pub types: Vec<InsightType>,
    pub turn_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructureView {
    pub filters: FilterSpec,
    pub turns: Vec<TurnRow>,
    pub threads: Vec<ThreadView>,
    pub insights: Vec<InsightView>,
    pub artifacts: Vec<ArtifactIcon>,
}

impl StructureView {
    /// Every visible element as a `kind:id` string, for set comparisons.
    pub fn element_set(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for row in &self.turns {
            if let Some(k) = row.speech_act {
                out.insert(format!("speech_act:{}:{k}", row.turn_index));
            }
            for i in &row.insights {
                out.insert(format!("insight:{i}"));
            }
            for a in &row.artifacts {
                out.insert(format!("artifact:{}:{}", row.turn_index, a.artifact_id));
            }
        }
        for i in &self.insights {
            out.insert(format!("insight:{}", i.index));
        }
        for a in &self.artifacts {
            out.insert(format!("artifact:{}", a.artifact_id));
        }
        fn threads(ts: &[ThreadView], out: &mut BTreeSet<String>) {
            for t in ts {
                out.insert(format!("thread:{}", t.thread_id));
                threads(&t.children, out);
            }
        }
        threads(&self.threads, &mut out);
        out
    }
}

fn turn_row(state: &StructuredState, turn: &Turn, filter: &FilterSpec) -> TurnRow {
    let i = turn.turn_index;
    let threads = state
        .thread_forest
        .leaf_for_turn(i)
        .map(|leaf| {
            let mut chain = state.thread_forest.ancestors(leaf.thread_id);
            chain.push(leaf.thread_id);
            chain
        })
        .unwrap_or_default();
    TurnRow {
        turn_index: i,
        title: state.turn_title(i),
        speech_act: state.speech_act(i).map(|t| t.kind).filter(|k| filter.shows_speech_act(*k)),
        insights: state
            .insights_anchored_at(i)
            .into_iter()
            .filter(|&n| filter.shows_insight(&state.insights[n]))
            .collect(),
        artifacts: state
            .artifacts_of_turn(i)
            .into_iter()
            .filter(|a| filter.shows_artifact(a.kind))
            .map(|a| ArtifactIcon {
                artifact_id: a.artifact_id.clone(),
                kind: a.kind,
            })
            .collect(),
        threads,
    }
}

fn thread_view(state: &StructuredState, node: &ThreadNode, rows: &[TurnRow], prune: bool) -> Option<ThreadView> {
    let mut counts = ElementCounts::default();
    let mut children = Vec::new();
    if let Some(turn) = node.turn_index {
        let row = &rows[turn];
        counts.turns = 1;
        counts.speech_acts = usize::from(row.speech_act.is_some());
        counts.insights = row.insights.len();
        counts.artifacts = row.artifacts.len();
    } else {
        for id in node.children() {
            let Some(child) = state.thread_forest.get(*id) else { continue };
            if let Some(view) = thread_view(state, child, rows, prune) {
                counts.add(&view.counts);
                children.push(view);
            }
        }
    }
    if prune && counts.elements() == 0 {
        return None;
    }
    Some(ThreadView {
        thread_id: node.thread_id,
        title: node.title.clone(),
        turn_index: node.turn_index,
        counts,
        children,
    })
}

/// The outline and detail view under `filter`. Turn rows are always all
/// present; threads with nothing visible below them are left out unless
/// the filter is empty.
pub fn structure_view(state: &StructuredState, filter: &FilterSpec) -> StructureView {
    let turns: Vec<TurnRow> = state
        .conversation
        .turns
        .iter()
        .map(|t| turn_row(state, t, filter))
        .collect();
    let prune = !filter.is_empty();
    let threads = state
        .thread_forest
        .roots
        .iter()
        .filter_map(|id| state.thread_forest.get(*id))
        .filter_map(|node| thread_view(state, node, &turns, prune))
        .collect();
    let insights = state
        .insights
        .iter()
        .enumerate()
        .filter(|(_, ins)| filter.shows_insight(ins))
        .map(|(index, ins)| InsightView {
            index,
            statement: ins.statement.clone(),
            types: ins.types.clone(),
            turn_indices: ins.turn_indices(&state.conversation),
        })
        .collect();
    let artifacts = state
        .artifact_registry
        .iter()
        .filter(|a| filter.shows_artifact(a.kind))
        .map(|a| ArtifactIcon {
            artifact_id: a.artifact_id.clone(),
            kind: a.kind,
        })
        .collect();
    StructureView {
        filters: filter.clone(),
        turns,
        threads,
        insights,
        artifacts,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThreadRef {
    pub thread_id: ThreadId,
    pub title: String,
}

/// A turn with everything the annotated conversation shows next to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedTurn {
    pub turn: Turn,
    pub title: String,
    pub speech_act: Option<SpeechActKind>,
    pub artifacts: Vec<Artifact>,
    pub insights: Vec<InsightView>,
    /// Containing threads, outermost first, ending with the leaf.
    pub threads: Vec<ThreadRef>,
}

pub fn annotated_turn(state: &StructuredState, turn_index: usize) -> Option<AnnotatedTurn> {
    let turn = state.conversation.turn(turn_index)?;
    let row = turn_row(state, turn, &FilterSpec::default());
    let threads = row
        .threads
        .iter()
        .filter_map(|id| state.thread_forest.get(*id))
        .map(|n| ThreadRef {
            thread_id: n.thread_id,
            title: n.title.clone(),
        })
        .collect();
    let insights = state
        .insights
        .iter()
        .enumerate()
        .filter(|(_, ins)| ins.turn_indices(&state.conversation).contains(&turn_index))
        .map(|(index, ins)| InsightView {
            index,
            statement: ins.statement.clone(),
            types: ins.types.clone(),
            turn_indices: ins.turn_indices(&state.conversation),
        })
        .collect();
    Some(AnnotatedTurn {
        turn: turn.clone(),
        title: row.title,
        speech_act: row.speech_act,
        artifacts: state.artifacts_of_turn(turn_index).into_iter().cloned().collect(),
        insights,
        threads,
    })
}
