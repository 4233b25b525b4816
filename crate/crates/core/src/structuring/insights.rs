//! Insight extraction with type and provenance checks.

use serde_json::{json, Value};

use super::repair::{extract_json, list_field, str_field, validate_and_repair, Checked};
use super::{ExtractionModule, ExtractionReport, StructuringError};
use crate::llm::{LlmBackend, LlmRequest};
use crate::model::{Conversation, Insight, InsightEvidence, Role};
use crate::prompts::{render, FORMAT_INSIGHTS, INSIGHTS_SYSTEM, INSIGHTS_USER};
use crate::taxonomy::InsightType;

/// Message ids as shown to the model: position in conversation order.
pub fn prompt_message_ids(conversation: &Conversation) -> Vec<String> {
    conversation.messages().map(|m| m.message_id.clone()).collect()
}

pub fn insight_request(conversation: &Conversation) -> LlmRequest {
    let messages: Vec<Value> = conversation
        .messages()
        .enumerate()
        .map(|(id, m)| {
            let role = if m.role == Role::User { "USER" } else { "ASSISTANT" };
            json!({"id": id, "role": role, "content": m.content})
        })
        .collect();
    let user = render(
        INSIGHTS_USER,
        &[
            ("format_instructions", FORMAT_INSIGHTS.trim_end()),
            ("conversation", &serde_json::to_string_pretty(&messages).expect("serializable")),
        ],
    );
    LlmRequest::new(INSIGHTS_SYSTEM.trim_end(), user)
}

fn optional_text(evidence: &Value, key: &str) -> Option<String> {
    match evidence.get(key)? {
        Value::String(s) if !s.trim().is_empty() => Some(s.clone()),
        Value::Array(parts) => {
            let joined: Vec<&str> = parts.iter().filter_map(Value::as_str).collect();
            (!joined.is_empty()).then(|| joined.join("\n"))
        }
        _ => None,
    }
}

fn parse_one(item: &Value, ids: &[String]) -> Result<Insight, Vec<String>> {
    let mut problems = Vec::new();
    let statement = str_field(item, "insight")
        .or_else(|| str_field(item, "statement"))
        .map(str::trim)
        .unwrap_or("")
        .to_string();
    if statement.is_empty() {
        problems.push("\"insight\" text is missing".to_string());
    }
    let keywords: Vec<String> = item
        .get("keywords")
        .and_then(Value::as_array)
        .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
        .unwrap_or_default();

    let mut sources = Vec::new();
    match item.get("sourceMessageIds").and_then(Value::as_array) {
        Some(raw_ids) if !raw_ids.is_empty() => {
            for raw in raw_ids {
                let id = raw.as_u64().or_else(|| raw.as_str().and_then(|s| s.trim().parse().ok()));
                match id.and_then(|i| ids.get(i as usize)) {
                    Some(mid) => {
                        if !sources.contains(mid) {
                            sources.push(mid.clone());
                        }
                    }
                    None => problems.push(format!(
                        "source message id {raw} does not exist (ids are 0..{})",
                        ids.len().saturating_sub(1)
                    )),
                }
            }
        }
        _ => problems.push("\"sourceMessageIds\" must be a non-empty list of message ids".to_string()),
    }

    let mut types = Vec::new();
    match item.get("types").and_then(Value::as_array) {
        Some(raw_types) if !raw_types.is_empty() => {
            for raw in raw_types {
                let label = raw.as_str().unwrap_or_default();
                match InsightType::parse(label) {
                    Some(t) if !types.contains(&t) => types.push(t),
                    Some(_) => {}
                    None => problems.push(format!(
                        "type {raw} is not an insight category; use only: {}",
                        InsightType::catalogue()
                    )),
                }
            }
        }
        _ => problems.push(format!(
            "\"types\" must be a non-empty list drawn from: {}",
            InsightType::catalogue()
        )),
    }

    let evidence = item.get("evidence").map(|e| InsightEvidence {
        code: optional_text(e, "code"),
        code_console: optional_text(e, "code_console"),
        source_text: optional_text(e, "source_text"),
    });
    let evidence = match evidence {
        Some(ev) if !ev.is_empty() => ev,
        _ => {
            problems.push("\"evidence\" needs at least one of code, code_console, source_text".to_string());
            InsightEvidence::default()
        }
    };

    if problems.is_empty() {
        Ok(Insight {
            statement,
            keywords,
            source_message_ids: sources,
            types,
            evidence,
        })
    } else {
        Err(problems)
    }
}

/// Checks an insight answer. Valid insights are kept; each invalid one is
/// reported with its problems and left out.
pub fn check_insights(raw: &str, ids: &[String]) -> Checked<Vec<Insight>> {
    let value = match extract_json(raw) {
        Ok(Some(v)) => v,
        Ok(None) => return Checked::Valid(Vec::new()),
        Err(e) => return Checked::reject(vec![e]),
    };
    let items = match list_field(&value, "insights") {
        Ok(items) => items,
        Err(e) => return Checked::reject(vec![e]),
    };
    let mut kept = Vec::new();
    let mut violations = Vec::new();
    for (i, item) in items.iter().enumerate() {
        match parse_one(item, ids) {
            Ok(ins) => kept.push(ins),
            Err(problems) => {
                let name = str_field(item, "insight").unwrap_or("");
                for p in problems {
                    violations.push(format!("insight {i} ({name:?}): {p}"));
                }
            }
        }
    }
    Checked::from_parts(kept, violations)
}

/// Insights that pass every check. Invalid ones remaining after the repair
/// are dropped and listed in the report.
pub fn extract_insights(
    conversation: &Conversation,
    backend: &dyn LlmBackend,
) -> Result<(Vec<Insight>, ExtractionReport), StructuringError> {
    let ids = prompt_message_ids(conversation);
    let (insights, mut report) =
        validate_and_repair(backend, ExtractionModule::Insights, &insight_request(conversation), |raw| {
            check_insights(raw, &ids)
        })?;
    for w in &mut report.residual_warnings {
        w.insert_str(0, "dropped ");
    }
    debug_assert!(insights.iter().all(|i| i.violations(conversation).is_empty()));
    Ok((insights, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;

    fn ids() -> Vec<String> {
        (0..4).map(|i| format!("m{i}")).collect()
    }

    #[test]
    fn complete_insight_parses() {
        let raw = r#"{"insights":[{"insight":"The top 3 values for the 'age' column are '25-34 years old' (1986, 49.51%).","keywords":["age"],"sourceMessageIds":[3],"types":["Value","Rank"],"evidence":{"code_console":"25-34 1986"}}]}"#;
        match check_insights(raw, &ids()) {
            Checked::Valid(v) => {
                assert_eq!(v[0].types, vec![InsightType::Value, InsightType::Rank]);
                assert_eq!(v[0].source_message_ids, vec!["m3"]);
                assert_eq!(v[0].primary_type(), Some(InsightType::Value));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_type_triggers_repair_listing_categories() {
        let bad = r#"{"insights":[{"insight":"Sales grow fast.","keywords":[],"sourceMessageIds":[1],"types":["Velocity"],"evidence":{"source_text":"grow"}}]}"#;
        let good = bad.replace("Velocity", "Trend");
        let backend = ScriptedBackend::new([bad.to_string(), good]);
        let doc = crate::ingest::ExportBuilder::new("t").user("a").assistant("grow").to_bytes();
        let conv = crate::ingest::ingest_export(&doc).unwrap();
        let (insights, report) = extract_insights(&conv, &backend).unwrap();
        assert_eq!(insights.len(), 1);
        assert_eq!(insights[0].types, vec![InsightType::Trend]);
        let repair = &backend.requests()[1].user;
        for t in InsightType::ALL {
            assert!(repair.contains(t.as_str()));
        }
        assert!(repair.contains("Velocity"));
        assert_eq!(report.attempts, 2);
    }

    #[test]
    fn fabricated_ids_and_missing_evidence_are_dropped() {
        let raw = r#"[
          {"insight":"A","sourceMessageIds":[9],"types":["Value"],"evidence":{"code":"x"}},
          {"insight":"B","sourceMessageIds":[0],"types":["Value"],"evidence":{}},
          {"insight":"C","sourceMessageIds":[0],"types":["Extreme"],"evidence":{"source_text":"c"}}
        ]"#;
        match check_insights(raw, &ids()) {
            Checked::Invalid { value: Some(kept), violations } => {
                assert_eq!(kept.len(), 1);
                assert_eq!(kept[0].statement, "C");
                assert_eq!(violations.len(), 2);
            }
            other => panic!("{other:?}"),
        }
    }
}
