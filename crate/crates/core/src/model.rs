//! Shared domain types for a parsed analytical conversation.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::taxonomy::{InsightType, SpeechActKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
    Tool,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::User => "user",
            Role::Assistant => "assistant",
            Role::Tool => "tool",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub message_id: String,
    pub role: Role,
    /// Markdown text. Code cells are stored as a fenced block, tool output
    /// verbatim.
    pub content: String,
    /// Assigned by turn assembly; zero until then.
    #[serde(default)]
    pub turn_index: usize,
}

impl Message {
    pub fn new(message_id: impl Into<String>, role: Role, content: impl Into<String>) -> Self {
        Message {
            message_id: message_id.into(),
            role,
            content: content.into(),
            turn_index: 0,
        }
    }
}

/// Identifier of an entry in the artifact registry.
pub type ArtifactRef = String;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_index: usize,
    pub user_message: Message,
    pub responses: Vec<Message>,
    #[serde(default)]
    pub speech_act: Option<SpeechActTag>,
    #[serde(default)]
    pub artifacts: Vec<ArtifactRef>,
}

impl Turn {
    /// User message followed by the responses, in conversation order.
    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        std::iter::once(&self.user_message).chain(self.responses.iter())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub conversation_id: String,
    pub title: String,
    pub turns: Vec<Turn>,
    /// Hex SHA-256 of the raw export bytes.
    pub source_export_digest: String,
    /// Assistant/tool messages that appeared before the first user message.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub preamble: Vec<Message>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validation_flags: Vec<String>,
}

impl Conversation {
    pub fn turn(&self, index: usize) -> Option<&Turn> {
        self.turns.get(index)
    }

    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.turns.iter().flat_map(Turn::messages)
    }

    pub fn find_message(&self, message_id: &str) -> Option<&Message> {
        self.messages().find(|m| m.message_id == message_id)
    }

    pub fn message_count(&self) -> usize {
        self.turns.iter().map(|t| 1 + t.responses.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeechActTag {
    pub kind: SpeechActKind,
    pub turn_index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InsightEvidence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_console: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_text: Option<String>,
}

impl InsightEvidence {
    pub fn is_empty(&self) -> bool {
        let blank = |v: &Option<String>| v.as_deref().is_none_or(|s| s.trim().is_empty());
        blank(&self.code) && blank(&self.code_console) && blank(&self.source_text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Insight {
    pub statement: String,
    #[serde(default)]
    pub keywords: Vec<String>,
    pub source_message_ids: Vec<String>,
    /// First entry is the primary type for display.
    pub types: Vec<InsightType>,
    pub evidence: InsightEvidence,
}

impl Insight {
    pub fn primary_type(&self) -> Option<InsightType> {
        self.types.first().copied()
    }

    /// Turns that contain at least one of the insight's source messages,
    /// ascending and deduplicated.
    pub fn turn_indices(&self, conversation: &Conversation) -> Vec<usize> {
        let mut turns: Vec<usize> = self
            .source_message_ids
            .iter()
            .filter_map(|id| conversation.find_message(id))
            .map(|m| m.turn_index)
            .collect();
        turns.sort_unstable();
        turns.dedup();
        turns
    }

    /// Checks the invariants against the conversation and returns every
    /// violation found.
    pub fn violations(&self, conversation: &Conversation) -> Vec<String> {
        let mut out = Vec::new();
        if self.statement.trim().is_empty() {
            out.push("insight statement is empty".to_string());
        }
        if self.types.is_empty() {
            out.push(format!("insight {:?} has no types", self.statement));
        }
        if self.source_message_ids.is_empty() {
            out.push(format!("insight {:?} has no source messages", self.statement));
        }
        for id in &self.source_message_ids {
            if conversation.find_message(id).is_none() {
                out.push(format!(
                    "insight {:?} references unknown message {id}",
                    self.statement
                ));
            }
        }
        if self.evidence.is_empty() {
            out.push(format!("insight {:?} has no evidence", self.statement));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Turn,
    Thread,
    Insight,
    Artifact,
    Note,
}

impl ElementKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ElementKind::Turn => "turn",
            ElementKind::Thread => "thread",
            ElementKind::Insight => "insight",
            ElementKind::Artifact => "artifact",
            ElementKind::Note => "note",
        }
    }

    pub fn parse(raw: &str) -> Option<ElementKind> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "turn" => Some(ElementKind::Turn),
            "thread" => Some(ElementKind::Thread),
            "insight" => Some(ElementKind::Insight),
            "artifact" => Some(ElementKind::Artifact),
            "note" => Some(ElementKind::Note),
            _ => None,
        }
    }
}

/// Reference to an element of a structured session. Turns, threads and
/// insights are addressed by integer (turn index, thread id, insight
/// position); artifacts by registry id. For notes the target carries the
/// note text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ElementRef {
    pub kind: ElementKind,
    pub target_id: String,
}

impl ElementRef {
    pub fn new(kind: ElementKind, target_id: impl ToString) -> Self {
        ElementRef {
            kind,
            target_id: target_id.to_string(),
        }
    }

    pub fn turn(index: usize) -> Self {
        Self::new(ElementKind::Turn, index)
    }

    pub fn thread(id: u32) -> Self {
        Self::new(ElementKind::Thread, id)
    }

    pub fn insight(index: usize) -> Self {
        Self::new(ElementKind::Insight, index)
    }

    pub fn artifact(id: impl Into<String>) -> Self {
        Self::new(ElementKind::Artifact, id.into())
    }

    pub fn note(text: impl Into<String>) -> Self {
        Self::new(ElementKind::Note, text.into())
    }
}

impl fmt::Display for ElementRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.kind.as_str(), self.target_id)
    }
}

impl std::str::FromStr for ElementRef {
    type Err = String;

    /// Parses `kind:target`, e.g. `insight:0` or `artifact:code-3`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, target) = s
            .split_once(':')
            .ok_or_else(|| format!("expected kind:target, got {s:?}"))?;
        let kind = ElementKind::parse(kind).ok_or_else(|| format!("unknown element kind {kind:?}"))?;
        Ok(ElementRef::new(kind, target))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_ref_parses_kind_prefix() {
        let r: ElementRef = "artifact:code-3".parse().unwrap();
        assert_eq!(r, ElementRef::artifact("code-3"));
        assert_eq!(r.to_string(), "artifact:code-3");
        assert!("bogus:1".parse::<ElementRef>().is_err());
        assert!("insight".parse::<ElementRef>().is_err());
    }

    #[test]
    fn evidence_counts_blank_fields_as_absent() {
        assert!(InsightEvidence::default().is_empty());
        let ev = InsightEvidence {
            code_console: Some("  ".into()),
            ..Default::default()
        };
        assert!(ev.is_empty());
        let ev = InsightEvidence {
            source_text: Some("quote".into()),
            ..Default::default()
        };
        assert!(!ev.is_empty());
    }
}
