//! Parsing model output as JSON and the one-shot repair loop.

use serde_json::Value;

use super::{ExtractionModule, ExtractionReport, StructuringError};
use crate::llm::{LlmBackend, LlmRequest};
use crate::markdown::scan_fences;
use crate::prompts::repair_request;

/// Result of checking one model answer.
#[derive(Debug, Clone, PartialEq)]
pub enum Checked<T> {
    Valid(T),
    /// `value` carries whatever part of the answer is usable; `None` means
    /// nothing is.
    Invalid { value: Option<T>, violations: Vec<String> },
}

impl<T> Checked<T> {
    pub fn from_parts(value: T, violations: Vec<String>) -> Self {
        if violations.is_empty() {
            Checked::Valid(value)
        } else {
            Checked::Invalid {
                value: Some(value),
                violations,
            }
        }
    }

    pub fn reject(violations: Vec<String>) -> Self {
        Checked::Invalid { value: None, violations }
    }
}

fn is_empty_answer(text: &str) -> bool {
    let t = text.trim();
    if t.is_empty() || matches!(t, "{}" | "[]" | "---" | "null" | "None" | "~") {
        return true;
    }
    let compact: String = t.chars().filter(|c| !c.is_whitespace()).collect();
    matches!(
        compact.as_str(),
        "threads:[]" | "threads:" | "{\"threads\":[]}" | "{\"threads\":null}"
    )
}

fn slice_between(text: &str, open: char, close: char) -> Option<&str> {
    let start = text.find(open)?;
    let end = text.rfind(close)?;
    (end > start).then(|| &text[start..=end])
}

/// Extracts the JSON document from a model answer. Code fences are
/// stripped; failing that, the span from the first `{` (or `[`) to the last
/// `}` (or `]`) is tried. `Ok(None)` means the answer is empty, which
/// includes an empty object, empty list or empty YAML document.
pub fn extract_json(raw: &str) -> Result<Option<Value>, String> {
    let scan = scan_fences(raw);
    let candidates: Vec<String> = if scan.blocks.is_empty() {
        vec![raw.to_string()]
    } else {
        scan.blocks.iter().map(|b| b.body.clone()).collect()
    };
    if candidates.iter().all(|c| is_empty_answer(c)) {
        return Ok(None);
    }
    let mut last_err = String::from("no JSON document found");
    for text in candidates.iter().filter(|c| !is_empty_answer(c)) {
        let t = text.trim();
        match serde_json::from_str::<Value>(t) {
            Ok(v) => return Ok(Some(v)),
            Err(e) => last_err = format!("answer is not valid JSON: {e}"),
        }
        for (open, close) in [('{', '}'), ('[', ']')] {
            if let Some(span) = slice_between(t, open, close) {
                if let Ok(v) = serde_json::from_str::<Value>(span) {
                    return Ok(Some(v));
                }
            }
        }
    }
    Err(last_err)
}

/// The list under `key` of a JSON answer, accepting a bare list too.
pub fn list_field<'a>(value: &'a Value, key: &str) -> Result<&'a Vec<Value>, String> {
    match value {
        Value::Array(items) => Ok(items),
        Value::Object(map) => match map.get(key) {
            Some(Value::Array(items)) => Ok(items),
            Some(Value::Null) | None => Err(format!("answer has no \"{key}\" list")),
            Some(_) => Err(format!("\"{key}\" is not a list")),
        },
        _ => Err(format!("answer is neither an object with \"{key}\" nor a list")),
    }
}

/// Integer field that may have been written as a string.
pub fn int_field(item: &Value, key: &str) -> Option<i64> {
    match item.get(key)? {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

pub fn str_field<'a>(item: &'a Value, key: &str) -> Option<&'a str> {
    item.get(key)?.as_str()
}

/// Sends `request`, checks the answer and, if it is invalid, sends one
/// repair request listing the problems.
///
/// Returns the first valid answer, or the usable part of the repaired answer
/// with its problems recorded as residual warnings. Fails with
/// `SchemaViolation` when the repaired answer is still unusable.
pub fn validate_and_repair<T>(
    backend: &dyn LlmBackend,
    module: ExtractionModule,
    request: &LlmRequest,
    check: impl Fn(&str) -> Checked<T>,
) -> Result<(T, ExtractionReport), StructuringError> {
    let mut report = ExtractionReport::new(module);
    let call = |req: &LlmRequest| {
        backend.complete(req).map_err(|e| StructuringError::BackendFailure {
            module,
            message: e.to_string(),
        })
    };
    report.attempts = 1;
    let first = call(request)?;
    let violations = match check(&first) {
        Checked::Valid(v) => return Ok((v, report)),
        Checked::Invalid { violations, .. } => violations,
    };
    report.repairs.push(format!("re-prompted with {} violation(s)", violations.len()));
    report.attempts = 2;
    let second = call(&repair_request(request, &first, &violations))?;
    match check(&second) {
        Checked::Valid(v) => Ok((v, report)),
        Checked::Invalid { value: Some(v), violations } => {
            report.residual_warnings.extend(violations);
            Ok((v, report))
        }
        Checked::Invalid { value: None, violations } => Err(StructuringError::SchemaViolation { module, violations }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;
    use serde_json::json;

    #[test]
    fn fenced_output_is_unwrapped() {
        let raw = "Here you go:\n```json\n{\"threads\": [1]}\n```\n";
        assert_eq!(extract_json(raw).unwrap(), Some(json!({"threads": [1]})));
    }

    #[test]
    fn prose_around_json() {
        let raw = "Sure! {\"a\": 1} Hope this helps.";
        assert_eq!(extract_json(raw).unwrap(), Some(json!({"a": 1})));
        assert!(extract_json("no json here").is_err());
    }

    #[test]
    fn empty_answers() {
        for raw in ["", "  ", "{}", "```yaml\n```", "```yaml\n{}\n```", "threads: []", "{\"threads\": []}"] {
            assert_eq!(extract_json(raw).unwrap(), None, "{raw:?}");
        }
    }

    fn check_number(raw: &str) -> Checked<i64> {
        match extract_json(raw) {
            Ok(Some(v)) => match v.get("n").and_then(Value::as_i64) {
                Some(n) if n >= 0 => Checked::Valid(n),
                Some(n) => Checked::from_parts(0, vec![format!("{n} is negative")]),
                None => Checked::reject(vec!["missing n".into()]),
            },
            _ => Checked::reject(vec!["unparseable".into()]),
        }
    }

    #[test]
    fn valid_first_time_is_one_attempt() {
        let backend = ScriptedBackend::new(["{\"n\": 3}"]);
        let (v, report) =
            validate_and_repair(&backend, ExtractionModule::Insights, &LlmRequest::new("s", "u"), check_number)
                .unwrap();
        assert_eq!(v, 3);
        assert_eq!(report.attempts, 1);
        assert!(report.repairs.is_empty());
    }

    #[test]
    fn repair_prompt_lists_violations() {
        let backend = ScriptedBackend::new(["{}", "{\"n\": 4}"]);
        let (v, report) =
            validate_and_repair(&backend, ExtractionModule::Insights, &LlmRequest::new("s", "u"), check_number)
                .unwrap();
        assert_eq!(v, 4);
        assert_eq!(report.attempts, 2);
        let requests = backend.requests();
        assert!(requests[1].user.contains("- unparseable"));
        assert!(requests[1].user.starts_with("u"));
    }

    #[test]
    fn unusable_after_repair_is_schema_violation() {
        let backend = ScriptedBackend::new(["x", "y"]);
        let err = validate_and_repair(&backend, ExtractionModule::Threads, &LlmRequest::new("s", "u"), check_number)
            .unwrap_err();
        assert!(matches!(err, StructuringError::SchemaViolation { .. }));
        let backend = ScriptedBackend::new(["x", "{\"n\": -1}"]);
        let (v, report) =
            validate_and_repair(&backend, ExtractionModule::Threads, &LlmRequest::new("s", "u"), check_number)
                .unwrap();
        assert_eq!(v, 0);
        assert_eq!(report.residual_warnings, vec!["-1 is negative"]);
    }
}
