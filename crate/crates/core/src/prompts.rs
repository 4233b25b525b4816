//! Prompt templates, stored as text assets under `prompts/`.
//!
//! Templates use `{{name}}` placeholders. Substitution is a single pass, so
//! placeholder-like text inside a payload is left alone.

use crate::llm::LlmRequest;

/// Bumped whenever any template text changes; recorded transcripts are only
/// valid for the version they were made with.
pub const PROMPT_VERSION: u32 = 1;

pub const THREADS_SYSTEM: &str = include_str!("../prompts/threads.system.txt");
pub const TURN_SUMMARIES_USER: &str = include_str!("../prompts/turn_summaries.user.txt");
pub const CONSOLIDATE_USER: &str = include_str!("../prompts/consolidate.user.txt");
pub const SPEECH_ACTS_SYSTEM: &str = include_str!("../prompts/speech_acts.system.txt");
pub const SPEECH_ACTS_USER: &str = include_str!("../prompts/speech_acts.user.txt");
pub const INSIGHTS_SYSTEM: &str = include_str!("../prompts/insights.system.txt");
pub const INSIGHTS_USER: &str = include_str!("../prompts/insights.user.txt");
pub const SUMMARY_SYSTEM: &str = include_str!("../prompts/summary.system.txt");
pub const SUMMARY_USER: &str = include_str!("../prompts/summary.user.txt");
pub const SUMMARY_PRESETS: &str = include_str!("../prompts/summary.presets.txt");

pub const FORMAT_TURN_SUMMARIES: &str = include_str!("../prompts/format.turn_summaries.txt");
pub const FORMAT_CONSOLIDATE: &str = include_str!("../prompts/format.consolidate.txt");
pub const FORMAT_SPEECH_ACTS: &str = include_str!("../prompts/format.speech_acts.txt");
pub const FORMAT_INSIGHTS: &str = include_str!("../prompts/format.insights.txt");

/// Fills `{{key}}` placeholders. Unknown placeholders are kept verbatim.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                let key = &after[..end];
                match vars.iter().find(|(k, _)| *k == key) {
                    Some((_, v)) => out.push_str(v),
                    None => out.push_str(&rest[start..start + 2 + end + 2]),
                }
                rest = &after[end + 2..];
            }
            None => {
                out.push_str(&rest[start..]);
                rest = "";
            }
        }
    }
    out.push_str(rest);
    out
}

/// Preset sentence for a summary slider (`length`, `technical_detail`,
/// `formality`) at `level` 1..=3.
pub fn summary_preset(slider: &str, level: u8) -> Option<&'static str> {
    let key = format!("{slider}.{level}");
    SUMMARY_PRESETS.lines().find_map(|line| {
        let (k, v) = line.split_once(" = ")?;
        (k.trim() == key).then_some(v.trim_end())
    })
}

/// Follow-up request after an invalid answer: the original prompt, the
/// rejected answer, and the list of problems.
pub fn repair_request(original: &LlmRequest, previous_output: &str, violations: &[String]) -> LlmRequest {
    let mut user = original.user.clone();
    user.push_str("\n\nYour previous answer was:\n\n```\n");
    user.push_str(previous_output.trim_end());
    user.push_str("\n```\n\nIt was rejected for these reasons:\n\n");
    for v in violations {
        user.push_str("- ");
        user.push_str(v);
        user.push('\n');
    }
    user.push_str("\nReturn a corrected answer in the required format, and nothing else.\n");
    LlmRequest::new(original.system.clone(), user)
}
