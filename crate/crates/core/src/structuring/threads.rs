//! Turn summaries and level-by-level thread consolidation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::repair::{extract_json, int_field, list_field, str_field, validate_and_repair, Checked};
use super::{ExtractionModule, ExtractionReport, StructuringError};
use crate::forest::{ThreadForest, ThreadId, ThreadNode};
use crate::llm::{LlmBackend, LlmRequest};
use crate::model::Conversation;
use crate::prompts::{render, CONSOLIDATE_USER, FORMAT_CONSOLIDATE, FORMAT_TURN_SUMMARIES, THREADS_SYSTEM, TURN_SUMMARIES_USER};

/// Consolidation rounds before giving up on further grouping.
pub const MAX_CONSOLIDATION_ROUNDS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnSummary {
    pub thread_id: ThreadId,
    pub title: String,
    pub turn_index: usize,
}

fn pretty(value: &Value) -> String {
    serde_json::to_string_pretty(value).expect("serializable")
}

pub fn turn_summary_request(conversation: &Conversation) -> LlmRequest {
    let messages: Vec<Value> = conversation
        .messages()
        .map(|m| json!({"turn": m.turn_index, "role": m.role.as_str(), "content": m.content}))
        .collect();
    let user = render(
        TURN_SUMMARIES_USER,
        &[
            ("format_instructions", FORMAT_TURN_SUMMARIES.trim_end()),
            ("conversation", &pretty(&Value::Array(messages))),
        ],
    );
    LlmRequest::new(THREADS_SYSTEM.trim_end(), user)
}

/// Checks a turn-summary answer: one entry per turn, unique positive thread
/// ids, non-empty titles. Anything less is rejected as a whole.
pub fn check_turn_summaries(raw: &str, turn_count: usize) -> Checked<Vec<TurnSummary>> {
    let value = match extract_json(raw) {
        Ok(Some(v)) => v,
        Ok(None) => return Checked::reject(vec!["answer is empty".into()]),
        Err(e) => return Checked::reject(vec![e]),
    };
    let items = match list_field(&value, "threads") {
        Ok(items) => items,
        Err(e) => return Checked::reject(vec![e]),
    };
    let mut violations = Vec::new();
    let mut out: Vec<TurnSummary> = Vec::new();
    let mut tids = BTreeSet::new();
    let mut turns = BTreeSet::new();
    for (i, item) in items.iter().enumerate() {
        let tid = int_field(item, "tid");
        let turn = int_field(item, "turn");
        let title = str_field(item, "title").map(str::trim).unwrap_or("");
        let (Some(tid), Some(turn)) = (tid, turn) else {
            violations.push(format!("entry {i} needs integer \"tid\" and \"turn\" fields"));
            continue;
        };
        if tid <= 0 || tid > ThreadId::MAX as i64 {
            violations.push(format!("entry {i}: tid {tid} must be a positive integer"));
            continue;
        }
        if turn < 0 || turn as usize >= turn_count {
            violations.push(format!("entry {i}: turn {turn} does not exist (turns are 0..{})", turn_count.saturating_sub(1)));
            continue;
        }
        if title.is_empty() {
            violations.push(format!("entry {i}: title is empty"));
        }
        if !tids.insert(tid) {
            violations.push(format!("tid {tid} is used more than once"));
        }
        if !turns.insert(turn) {
            violations.push(format!("turn {turn} is summarized more than once"));
        }
        out.push(TurnSummary {
            thread_id: tid as ThreadId,
            title: title.to_string(),
            turn_index: turn as usize,
        });
    }
    let missing: Vec<String> = (0..turn_count)
        .filter(|t| !turns.contains(&(*t as i64)))
        .map(|t| t.to_string())
        .collect();
    if !missing.is_empty() {
        violations.push(format!(
            "expected {turn_count} summaries, one per turn; missing turn(s) {}",
            missing.join(", ")
        ));
    }
    if violations.is_empty() {
        out.sort_by_key(|s| s.turn_index);
        Checked::Valid(out)
    } else {
        Checked::reject(violations)
    }
}

/// One summary per turn, sorted by turn.
pub fn summarize_turns(
    conversation: &Conversation,
    backend: &dyn LlmBackend,
) -> Result<(Vec<TurnSummary>, ExtractionReport), StructuringError> {
    let n = conversation.turns.len();
    validate_and_repair(backend, ExtractionModule::Threads, &turn_summary_request(conversation), |raw| {
        check_turn_summaries(raw, n)
    })
}

pub fn forest_from_summaries(summaries: &[TurnSummary]) -> ThreadForest {
    ThreadForest::from_leaves(
        summaries
            .iter()
            .map(|s| ThreadNode::leaf(s.thread_id, s.title.clone(), s.turn_index)),
    )
}

fn root_entry(node: &ThreadNode) -> Value {
    match node.turn_index {
        Some(turn) => json!({"tid": node.thread_id, "title": node.title, "turn": turn}),
        None => json!({"tid": node.thread_id, "title": node.title, "child_ids": node.children()}),
    }
}

pub fn consolidation_request(forest: &ThreadForest) -> LlmRequest {
    let threads: Vec<Value> = forest
        .roots
        .iter()
        .filter_map(|id| forest.get(*id))
        .map(root_entry)
        .collect();
    let user = render(
        CONSOLIDATE_USER,
        &[
            ("format_instructions", FORMAT_CONSOLIDATE.trim_end()),
            ("threads", &pretty(&json!({ "threads": threads }))),
        ],
    );
    LlmRequest::new(THREADS_SYSTEM.trim_end(), user)
}

/// A proposed new thread over existing roots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grouping {
    pub thread_id: ThreadId,
    pub title: String,
    pub child_ids: Vec<ThreadId>,
}

/// Checks a consolidation answer against the current forest.
///
/// An empty answer means "nothing to group" and is valid. Every grouping
/// needs a fresh id, a title and at least two current roots as children,
/// and no root may be claimed twice. Entries that just repeat an existing
/// root unchanged (same id, no children) are ignored. Any violation rejects
/// the whole answer, so groupings are never partially applied.
pub fn check_grouping(raw: &str, forest: &ThreadForest) -> Checked<Vec<Grouping>> {
    let value = match extract_json(raw) {
        Ok(Some(v)) => v,
        Ok(None) => return Checked::Valid(Vec::new()),
        Err(e) => return Checked::reject(vec![e]),
    };
    let items = match list_field(&value, "threads") {
        Ok(items) => items,
        Err(e) => return Checked::reject(vec![e]),
    };
    let roots: BTreeSet<ThreadId> = forest.roots.iter().copied().collect();
    let mut violations = Vec::new();
    let mut groups = Vec::new();
    let mut new_ids = BTreeSet::new();
    let mut claimed: BTreeSet<ThreadId> = BTreeSet::new();
    for (i, item) in items.iter().enumerate() {
        let Some(tid) = int_field(item, "tid") else {
            violations.push(format!("entry {i} has no integer \"tid\""));
            continue;
        };
        let children = item.get("child_ids").and_then(Value::as_array);
        let Some(children) = children else {
            let echo = u32::try_from(tid).is_ok_and(|t| roots.contains(&t));
            if !echo {
                violations.push(format!("entry {i} (tid {tid}) has no \"child_ids\" list"));
            }
            continue;
        };
        if tid <= 0 || tid > ThreadId::MAX as i64 {
            violations.push(format!("tid {tid} must be a positive integer"));
            continue;
        }
        let tid = tid as ThreadId;
        if forest.get(tid).is_some() {
            violations.push(format!("tid {tid} is already used by an existing thread; new threads need a new unique id"));
        }
        if !new_ids.insert(tid) {
            violations.push(format!("tid {tid} is proposed more than once"));
        }
        let title = str_field(item, "title").map(str::trim).unwrap_or("");
        if title.is_empty() {
            violations.push(format!("thread {tid} has an empty title"));
        }
        let mut child_ids = Vec::new();
        for c in children {
            let Some(c) = c.as_i64().or_else(|| c.as_str().and_then(|s| s.trim().parse().ok())) else {
                violations.push(format!("thread {tid}: child id {c} is not an integer"));
                continue;
            };
            let Some(c) = u32::try_from(c).ok().filter(|c| roots.contains(c)) else {
                violations.push(format!("thread {tid}: child {c} is not one of the input threads"));
                continue;
            };
            if child_ids.contains(&c) {
                violations.push(format!("thread {tid}: child {c} is listed twice"));
                continue;
            }
            if !claimed.insert(c) {
                violations.push(format!("thread {c} is grouped under more than one new thread"));
                continue;
            }
            child_ids.push(c);
        }
        if child_ids.len() < 2 {
            violations.push(format!("thread {tid} must group at least two input threads"));
        }
        groups.push(Grouping {
            thread_id: tid,
            title: title.to_string(),
            child_ids,
        });
    }
    if violations.is_empty() {
        Checked::Valid(groups)
    } else {
        Checked::reject(violations)
    }
}

/// Applies validated groupings. Each new thread takes the root position of
/// its first child; the other children leave the root list.
pub fn apply_groupings(forest: &mut ThreadForest, groups: &[Grouping]) {
    for g in groups {
        let first = g.child_ids[0];
        let pos = forest.roots.iter().position(|r| *r == first).expect("validated child is a root");
        forest.roots[pos] = g.thread_id;
        forest.roots.retain(|r| !g.child_ids.contains(r));
        forest
            .nodes
            .insert(g.thread_id, ThreadNode::group(g.thread_id, g.title.clone(), g.child_ids.clone()));
    }
}

/// Groups root threads round by round until the model proposes nothing,
/// only one root is left, a grouping stays invalid after its repair, or the
/// round cap is reached. The returned report covers every round.
pub fn consolidate_threads(
    mut forest: ThreadForest,
    backend: &dyn LlmBackend,
) -> (ThreadForest, ExtractionReport) {
    let mut report = ExtractionReport::new(ExtractionModule::Threads);
    for round in 1..=MAX_CONSOLIDATION_ROUNDS {
        if forest.roots.len() < 2 {
            break;
        }
        let request = consolidation_request(&forest);
        let snapshot = forest.clone();
        let outcome = validate_and_repair(backend, ExtractionModule::Threads, &request, |raw| {
            check_grouping(raw, &snapshot)
        });
        match outcome {
            Ok((groups, r)) => {
                report.absorb(r);
                if groups.is_empty() {
                    break;
                }
                apply_groupings(&mut forest, &groups);
                if round == MAX_CONSOLIDATION_ROUNDS {
                    report
                        .residual_warnings
                        .push(format!("stopped consolidating after {MAX_CONSOLIDATION_ROUNDS} rounds"));
                }
            }
            Err(e) => {
                report.attempts += match e {
                    StructuringError::SchemaViolation { .. } => 2,
                    _ => 1,
                };
                report
                    .residual_warnings
                    .push(format!("consolidation round {round} rejected: {e}"));
                break;
            }
        }
    }
    (forest, report)
}
