//! Speech-act classification of user queries.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use super::repair::{extract_json, int_field, list_field, str_field, validate_and_repair, Checked};
use super::{ExtractionModule, ExtractionReport, StructuringError};
use crate::llm::{LlmBackend, LlmRequest};
use crate::model::{Conversation, SpeechActTag};
use crate::prompts::{render, FORMAT_SPEECH_ACTS, SPEECH_ACTS_SYSTEM, SPEECH_ACTS_USER};
use crate::taxonomy::SpeechActKind;

/// Label list as the prompt names them, for repair messages.
const PROMPT_LABELS: &str = "Fact Finding, Specific Visualization, Domain Knowledge, Deeper Insights, Data Transformations, Recommendations, Refinement or Follow-up, Debugging";

pub fn speech_act_request(conversation: &Conversation) -> LlmRequest {
    let queries: Vec<Value> = conversation
        .turns
        .iter()
        .map(|t| json!({"turn": t.turn_index, "role": "USER", "content": t.user_message.content}))
        .collect();
    let user = render(
        SPEECH_ACTS_USER,
        &[
            ("format_instructions", FORMAT_SPEECH_ACTS.trim_end()),
            ("queries", &serde_json::to_string_pretty(&queries).expect("serializable")),
        ],
    );
    LlmRequest::new(SPEECH_ACTS_SYSTEM.trim_end(), user)
}

/// Checks a speech-act answer. Entries with recognised labels are kept even
/// when others are wrong; unknown labels, unknown turns, duplicates and
/// missing turns are reported.
pub fn check_speech_acts(raw: &str, turn_count: usize) -> Checked<Vec<SpeechActTag>> {
    let value = match extract_json(raw) {
        Ok(Some(v)) => v,
        Ok(None) => return Checked::reject(vec!["answer is empty".into()]),
        Err(e) => return Checked::reject(vec![e]),
    };
    let items = match list_field(&value, "speech_acts") {
        Ok(items) => items,
        Err(e) => return Checked::reject(vec![e]),
    };
    let mut violations = Vec::new();
    let mut tags: BTreeMap<usize, SpeechActKind> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        let turn = int_field(item, "msg_turn_id").or_else(|| int_field(item, "turn"));
        let Some(turn) = turn.filter(|t| *t >= 0 && (*t as usize) < turn_count) else {
            violations.push(format!("entry {i}: \"msg_turn_id\" missing or not a turn of the conversation"));
            continue;
        };
        let turn = turn as usize;
        let label = str_field(item, "speech_act").unwrap_or("");
        let Some(kind) = SpeechActKind::from_alias(label) else {
            violations.push(format!(
                "turn {turn}: unknown speech act {label:?}; use one of: {PROMPT_LABELS}"
            ));
            continue;
        };
        if tags.insert(turn, kind).is_some() {
            violations.push(format!("turn {turn} is labelled more than once"));
        }
    }
    let missing: Vec<String> = (0..turn_count)
        .filter(|t| !tags.contains_key(t))
        .map(|t| t.to_string())
        .collect();
    if !missing.is_empty() {
        violations.push(format!("no speech act for turn(s) {}", missing.join(", ")));
    }
    let out = tags
        .into_iter()
        .map(|(turn_index, kind)| SpeechActTag { kind, turn_index })
        .collect();
    Checked::from_parts(out, violations)
}

/// One tag per turn where possible. Turns still without a valid label after
/// the repair stay untagged; the report lists them.
pub fn classify_speech_acts(
    conversation: &Conversation,
    backend: &dyn LlmBackend,
) -> Result<(Vec<SpeechActTag>, ExtractionReport), StructuringError> {
    let n = conversation.turns.len();
    validate_and_repair(backend, ExtractionModule::SpeechActs, &speech_act_request(conversation), |raw| {
        check_speech_acts(raw, n)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;

    #[test]
    fn prompt_aliases_are_canonicalized() {
        let raw = r#"{"speech_acts":[{"msg_turn_id":0,"speech_act":"Refinement or Follow-up"},{"msg_turn_id":1,"speech_act":"Deeper Insights"}]}"#;
        match check_speech_acts(raw, 2) {
            Checked::Valid(tags) => {
                assert_eq!(tags[0].kind, SpeechActKind::Refinement);
                assert_eq!(tags[1].kind, SpeechActKind::DeepInsights);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_label_retries_then_leaves_untagged() {
        let bad = r#"{"speech_acts":[{"msg_turn_id":0,"speech_act":"Fact Finding"},{"msg_turn_id":1,"speech_act":"Chit Chat"}]}"#;
        let backend = ScriptedBackend::new([bad, bad]);
        let doc = crate::ingest::ExportBuilder::new("t").user("a").assistant("x").user("b").assistant("y").to_bytes();
        let conv = crate::ingest::ingest_export(&doc).unwrap();
        let (tags, report) = classify_speech_acts(&conv, &backend).unwrap();
        assert_eq!(tags.len(), 1);
        assert_eq!(report.attempts, 2);
        assert!(report.residual_warnings.iter().any(|w| w.contains("Chit Chat")));
        assert!(backend.requests()[1].user.contains("Refinement or Follow-up"));
    }
}
