//! Reader and writer for the chat-assistant export document: a JSON object
//! with a `mapping` of nodes (each with `parent`, `children` and an optional
//! `message`) and a `current_node` marker.

use std::collections::{BTreeMap, HashSet};

use serde::Deserialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::IngestError;
use crate::markdown::fence;
use crate::model::{Message, Role};

/// Upload directory used by the hosted interpreter.
pub const UPLOAD_DIR: &str = "/mnt/data/";

const SKIPPED_CONTENT_TYPES: &[&str] = &[
    "model_editable_context",
    "user_editable_context",
    "thoughts",
    "reasoning_recap",
];

/// Messages on the canonical path of an export plus identifying metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExportTranscript {
    pub conversation_id: String,
    pub title: String,
    pub messages: Vec<Message>,
    pub digest: String,
}

#[derive(Debug, Deserialize)]
struct RawNode {
    #[serde(default)]
    message: Option<RawMessage>,
    #[serde(default)]
    parent: Option<String>,
}

#[derive(Debug, Deserialize)]
struct RawMessage {
    #[serde(default)]
    id: Option<String>,
    author: RawAuthor,
    #[serde(default)]
    content: Option<Value>,
    #[serde(default)]
    metadata: Option<Value>,
}

#[derive(Debug, Deserialize)]
struct RawAuthor {
    role: String,
}

pub fn digest_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Parses an export document and returns the messages on the path from the
/// root to `current_node`, in conversation order. System messages, hidden
/// messages and context-only content types are dropped.
pub fn parse_export(document: &[u8]) -> Result<ExportTranscript, IngestError> {
    let digest = digest_hex(document);
    let value: Value = serde_json::from_slice(document)
        .map_err(|e| IngestError::MalformedExport(format!("not valid JSON: {e}")))?;
    let object = match value {
        Value::Object(map) => map,
        Value::Array(mut items) if items.len() == 1 => match items.pop() {
            Some(Value::Object(map)) => map,
            _ => return Err(IngestError::MalformedExport("expected a conversation object".into())),
        },
        _ => return Err(IngestError::MalformedExport("expected a conversation object".into())),
    };

    let mapping_value = object
        .get("mapping")
        .ok_or_else(|| IngestError::MalformedExport("missing `mapping`".into()))?;
    let mapping: BTreeMap<String, RawNode> = serde_json::from_value(mapping_value.clone())
        .map_err(|e| IngestError::MalformedExport(format!("bad `mapping`: {e}")))?;
    let current = object
        .get("current_node")
        .and_then(Value::as_str)
        .ok_or_else(|| IngestError::MalformedExport("missing `current_node`".into()))?;
    if !mapping.contains_key(current) {
        return Err(IngestError::MalformedExport(format!(
            "current_node {current:?} is not in mapping"
        )));
    }

    let mut path = Vec::new();
    let mut seen = HashSet::new();
    let mut cursor = Some(current.to_string());
    while let Some(id) = cursor {
        if !seen.insert(id.clone()) {
            return Err(IngestError::MalformedExport(format!("parent cycle at node {id:?}")));
        }
        let node = mapping.get(&id).ok_or_else(|| {
            IngestError::MalformedExport(format!("parent {id:?} is not in mapping"))
        })?;
        path.push((id.clone(), node));
        cursor = node.parent.clone();
    }
    path.reverse();

    let mut messages = Vec::new();
    for (node_id, node) in path {
        let Some(raw) = &node.message else { continue };
        if let Some(msg) = convert_message(&node_id, raw)? {
            messages.push(msg);
        }
    }
    if !messages.iter().any(|m| m.role == Role::User) {
        return Err(IngestError::EmptyConversation);
    }

    let conversation_id = ["conversation_id", "id"]
        .iter()
        .find_map(|k| object.get(*k).and_then(Value::as_str))
        .map(str::to_string)
        .unwrap_or_else(|| digest[..16].to_string());
    let title = object
        .get("title")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();

    Ok(ExportTranscript {
        conversation_id,
        title,
        messages,
        digest,
    })
}

fn convert_message(node_id: &str, raw: &RawMessage) -> Result<Option<Message>, IngestError> {
    let role = match raw.author.role.as_str() {
        "user" => Role::User,
        "assistant" => Role::Assistant,
        "tool" => Role::Tool,
        "system" | "critic" | "developer" => return Ok(None),
        other => {
            return Err(IngestError::MalformedExport(format!(
                "node {node_id:?}: unknown author role {other:?}"
            )))
        }
    };
    let hidden = raw
        .metadata
        .as_ref()
        .and_then(|m| m.get("is_visually_hidden_from_conversation"))
        .and_then(Value::as_bool)
        .unwrap_or(false);
    if hidden {
        return Ok(None);
    }
    let Some(content) = raw.content.as_ref() else {
        return Ok(None);
    };
    let Some(text) = content_text(node_id, content)? else {
        return Ok(None);
    };
    let id = raw.id.clone().unwrap_or_else(|| node_id.to_string());
    Ok(Some(Message::new(id, role, text)))
}

fn content_text(node_id: &str, content: &Value) -> Result<Option<String>, IngestError> {
    let content_type = content
        .get("content_type")
        .and_then(Value::as_str)
        .unwrap_or("text");
    if SKIPPED_CONTENT_TYPES.contains(&content_type) {
        return Ok(None);
    }
    match content_type {
        "code" => {
            let text = content.get("text").and_then(Value::as_str).ok_or_else(|| {
                IngestError::MalformedExport(format!("node {node_id:?}: code content without text"))
            })?;
            let language = match content.get("language").and_then(Value::as_str) {
                None | Some("unknown") | Some("") => "python",
                Some(l) => l,
            };
            Ok(Some(fence(language, text)))
        }
        "execution_output" => Ok(Some(
            content
                .get("text")
                .and_then(Value::as_str)
                .unwrap_or_default()
                .to_string(),
        )),
        _ => {
            if let Some(parts) = content.get("parts").and_then(Value::as_array) {
                let rendered: Vec<String> = parts.iter().filter_map(render_part).collect();
                return Ok(Some(rendered.join("\n")));
            }
            if let Some(text) = content.get("text").and_then(Value::as_str) {
                return Ok(Some(text.to_string()));
            }
            Err(IngestError::MalformedExport(format!(
                "node {node_id:?}: content of type {content_type:?} has neither parts nor text"
            )))
        }
    }
}

/// Text parts pass through; image pointers become image embeds so that
/// downstream artifact detection can see them; anything else is dropped.
fn render_part(part: &Value) -> Option<String> {
    match part {
        Value::String(s) => Some(s.clone()),
        Value::Object(obj) => {
            let pointer = obj.get("asset_pointer").and_then(Value::as_str)?;
            Some(format!("![image]({pointer})"))
        }
        _ => None,
    }
}

/// Builds a linear export document from `(role, content)` pairs, for tests
/// and fixtures. Code cells are written as assistant `code` content when the
/// content is a single python fence and tool messages as execution output.
#[derive(Debug, Clone, Default)]
pub struct ExportBuilder {
    title: String,
    conversation_id: String,
    nodes: Vec<(String, Value)>,
    branches: Vec<(usize, String, Value)>,
}

impl ExportBuilder {
    pub fn new(title: impl Into<String>) -> Self {
        ExportBuilder {
            title: title.into(),
            conversation_id: "fixture".into(),
            ..Default::default()
        }
    }

    pub fn conversation_id(mut self, id: impl Into<String>) -> Self {
        self.conversation_id = id.into();
        self
    }

    pub fn message(mut self, role: Role, content: &str) -> Self {
        let id = format!("m{}", self.nodes.len());
        let value = message_value(&id, role, content);
        self.nodes.push((id, value));
        self
    }

    pub fn user(self, content: &str) -> Self {
        self.message(Role::User, content)
    }

    pub fn assistant(self, content: &str) -> Self {
        self.message(Role::Assistant, content)
    }

    pub fn code(mut self, source: &str) -> Self {
        let id = format!("m{}", self.nodes.len());
        let value = json!({
            "id": id,
            "author": {"role": "assistant"},
            "content": {"content_type": "code", "language": "python", "text": source},
            "recipient": "python",
        });
        self.nodes.push((id, value));
        self
    }

    pub fn tool_output(mut self, output: &str) -> Self {
        let id = format!("m{}", self.nodes.len());
        let value = json!({
            "id": id,
            "author": {"role": "tool", "name": "python"},
            "content": {"content_type": "execution_output", "text": output},
        });
        self.nodes.push((id, value));
        self
    }

    /// Adds an abandoned sibling message hanging off the node at `after`
    /// (index into the messages added so far). It is never on the current
    /// path.
    pub fn abandoned_branch(mut self, after: usize, role: Role, content: &str) -> Self {
        let id = format!("b{}", self.branches.len());
        let value = message_value(&id, role, content);
        self.branches.push((after, id, value));
        self
    }

    pub fn build(&self) -> Value {
        let mut mapping = Map::new();
        let root = "root".to_string();
        let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let system = json!({
            "id": "sys",
            "author": {"role": "system"},
            "content": {"content_type": "text", "parts": [""]},
            "metadata": {"is_visually_hidden_from_conversation": true},
        });
        let mut chain: Vec<(String, Option<Value>)> = vec![(root.clone(), None), ("sys".into(), Some(system))];
        chain.extend(self.nodes.iter().map(|(id, v)| (id.clone(), Some(v.clone()))));
        for pair in chain.windows(2) {
            children.entry(pair[0].0.clone()).or_default().push(pair[1].0.clone());
        }
        let mut parents: BTreeMap<String, String> = chain
            .windows(2)
            .map(|p| (p[1].0.clone(), p[0].0.clone()))
            .collect();
        for (after, id, _) in &self.branches {
            let parent = chain
                .get(after + 2)
                .map(|(pid, _)| pid.clone())
                .unwrap_or_else(|| root.clone());
            children.entry(parent.clone()).or_default().push(id.clone());
            parents.insert(id.clone(), parent);
        }
        for (id, message) in chain
            .iter()
            .cloned()
            .chain(self.branches.iter().map(|(_, id, v)| (id.clone(), Some(v.clone()))))
        {
            mapping.insert(
                id.clone(),
                json!({
                    "id": id,
                    "message": message,
                    "parent": parents.get(&id),
                    "children": children.get(&id).cloned().unwrap_or_default(),
                }),
            );
        }
        let current = chain.last().map(|(id, _)| id.clone()).unwrap_or(root);
        json!({
            "title": self.title,
            "conversation_id": self.conversation_id,
            "mapping": mapping,
            "current_node": current,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(&self.build()).expect("serializable")
    }
}

fn message_value(id: &str, role: Role, content: &str) -> Value {
    json!({
        "id": id,
        "author": {"role": role.as_str()},
        "content": {"content_type": "text", "parts": [content]},
    })
}
