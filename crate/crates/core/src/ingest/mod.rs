//! Export parsing, turn assembly, code extraction and conversation
//! statistics.

pub mod code;
pub mod export;
pub mod stats;
pub mod tables;
pub mod tokens;

use crate::model::{Conversation, Message, Role, Turn};

pub use code::{extract_code_blocks, CodeBlock};
pub use export::{parse_export, ExportBuilder, ExportTranscript};
pub use stats::{compute_stats, decile_distribution, decile_histogram, ConversationStats, StatElement};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IngestError {
    #[error("malformed export: {0}")]
    MalformedExport(String),
    #[error("the export contains no user messages")]
    EmptyConversation,
}

/// Output of [`assemble_turns`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnAssembly {
    pub turns: Vec<Turn>,
    /// Assistant/tool messages before the first user message.
    pub preamble: Vec<Message>,
    pub flags: Vec<String>,
}

/// Groups messages into turns: each user message opens a turn that owns
/// every following assistant/tool message up to the next user message.
pub fn assemble_turns(messages: Vec<Message>) -> TurnAssembly {
    let mut turns: Vec<Turn> = Vec::new();
    let mut preamble = Vec::new();
    let mut flags = Vec::new();
    for mut msg in messages {
        if msg.role == Role::User {
            msg.turn_index = turns.len();
            turns.push(Turn {
                turn_index: turns.len(),
                user_message: msg,
                responses: Vec::new(),
                speech_act: None,
                artifacts: Vec::new(),
            });
        } else if let Some(turn) = turns.last_mut() {
            msg.turn_index = turn.turn_index;
            turn.responses.push(msg);
        } else {
            preamble.push(msg);
        }
    }
    if !preamble.is_empty() {
        flags.push(format!(
            "{} message(s) before the first user message were set aside as preamble",
            preamble.len()
        ));
    }
    for turn in &turns {
        if turn.responses.is_empty() {
            flags.push(format!("turn {} has no assistant response", turn.turn_index));
        }
    }
    TurnAssembly {
        turns,
        preamble,
        flags,
    }
}

/// Parses an export document into a [`Conversation`].
pub fn ingest_export(document: &[u8]) -> Result<Conversation, IngestError> {
    let transcript = parse_export(document)?;
    let assembly = assemble_turns(transcript.messages);
    Ok(Conversation {
        conversation_id: transcript.conversation_id,
        title: transcript.title,
        turns: assembly.turns,
        source_export_digest: transcript.digest,
        preamble: assembly.preamble,
        validation_flags: assembly.flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(roles: &str) -> Vec<Message> {
        roles
            .chars()
            .enumerate()
            .map(|(i, c)| {
                let role = match c {
                    'u' => Role::User,
                    'a' => Role::Assistant,
                    _ => Role::Tool,
                };
                Message::new(format!("m{i}"), role, format!("c{i}"))
            })
            .collect()
    }

    #[test]
    fn responses_follow_their_user_message() {
        let a = assemble_turns(seq("uaaua"));
        assert_eq!(a.turns.len(), 2);
        let counts: Vec<usize> = a.turns.iter().map(|t| t.responses.len()).collect();
        assert_eq!(counts, vec![2, 1]);
        assert!(a.flags.is_empty());
        assert_eq!(a.turns[1].responses[0].turn_index, 1);
    }

    #[test]
    fn lone_user_message_is_flagged() {
        let a = assemble_turns(seq("u"));
        assert_eq!(a.turns.len(), 1);
        assert!(a.turns[0].responses.is_empty());
        assert_eq!(a.flags.len(), 1);
    }

    #[test]
    fn leading_assistant_messages_go_to_preamble() {
        let a = assemble_turns(seq("atua"));
        assert_eq!(a.preamble.len(), 2);
        assert_eq!(a.turns.len(), 1);
        assert!(a.flags[0].contains("preamble"));
    }

    #[test]
    fn ingest_assigns_contiguous_indices() {
        let doc = ExportBuilder::new("x")
            .user("q0")
            .assistant("a0")
            .user("q1")
            .code("print(2)")
            .tool_output("2")
            .to_bytes();
        let conv = ingest_export(&doc).unwrap();
        assert_eq!(conv.turns.len(), 2);
        for (i, turn) in conv.turns.iter().enumerate() {
            assert_eq!(turn.turn_index, i);
            assert!(turn.messages().all(|m| m.turn_index == i));
        }
        assert_eq!(conv.message_count(), 5);
    }
}
