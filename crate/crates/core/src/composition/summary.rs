//! Slider-driven summary generation from serialized compositions.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::llm::{LlmBackend, LlmRequest};
use crate::markdown::{extract_links, normalize_target};
use crate::prompts::{render, repair_request, summary_preset, SUMMARY_SYSTEM, SUMMARY_USER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SummaryParams {
    pub length: u8,
    pub technical_detail: u8,
    pub formality: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SummaryError {
    #[error("{slider} must be 1, 2 or 3 (got {value})")]
    InvalidParams { slider: &'static str, value: u8 },
    #[error("nothing to summarize: the composition is empty")]
    EmptyContent,
    #[error("backend failure: {0}")]
    BackendFailure(String),
}

impl SummaryParams {
    pub fn new(length: u8, technical_detail: u8, formality: u8) -> Result<Self, SummaryError> {
        let p = SummaryParams {
            length,
            technical_detail,
            formality,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), SummaryError> {
        for (slider, value) in self.sliders() {
            if !(1..=3).contains(&value) {
                return Err(SummaryError::InvalidParams { slider, value });
            }
        }
        Ok(())
    }

    fn sliders(&self) -> [(&'static str, u8); 3] {
        [
            ("length", self.length),
            ("technical_detail", self.technical_detail),
            ("formality", self.formality),
        ]
    }
}

impl Default for SummaryParams {
    fn default() -> Self {
        SummaryParams {
            length: 2,
            technical_detail: 2,
            formality: 2,
        }
    }
}

/// The summary prompt for `markdown` with the preset sentence of each
/// slider filled in.
pub fn build_summary_prompt(markdown: &str, params: SummaryParams) -> Result<LlmRequest, SummaryError> {
    params.validate()?;
    let preset = |slider, level| summary_preset(slider, level).expect("levels validated");
    let user = render(
        SUMMARY_USER,
        &[
            ("markdown", markdown),
            ("length", preset("length", params.length)),
            ("technical_detail", preset("technical_detail", params.technical_detail)),
            ("formality", preset("formality", params.formality)),
        ],
    );
    Ok(LlmRequest::new(SUMMARY_SYSTEM.trim_end(), user.trim_end()))
}

/// Problems with a generated summary: empty output, link targets absent
/// from the source, and image embeds whose target the source never links.
pub fn validate_summary(summary: &str, source_markdown: &str) -> Vec<String> {
    let mut violations = Vec::new();
    if summary.trim().is_empty() {
        violations.push("the summary is empty".to_string());
        return violations;
    }
    let known: BTreeSet<String> = extract_links(source_markdown)
        .iter()
        .map(|l| normalize_target(&l.target))
        .collect();
    let mut reported = BTreeSet::new();
    for link in extract_links(summary) {
        let target = normalize_target(&link.target);
        if known.contains(&target) || !reported.insert((link.is_image, target)) {
            continue;
        }
        if link.is_image {
            violations.push(format!(
                "image embed {} is not among the images and links of the content",
                link.target
            ));
        } else {
            violations.push(format!("link {} does not appear in the content", link.target));
        }
    }
    violations
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryOutcome {
    pub text: String,
    pub attempts: u32,
    /// Violations left after the repair attempt.
    pub warnings: Vec<String>,
}

/// Sends the prompt, validates the answer against `source_markdown`, and
/// re-prompts once if it is invalid. A still-invalid answer is returned
/// with its violations as warnings.
pub fn generate_summary(
    request: &LlmRequest,
    source_markdown: &str,
    backend: &dyn LlmBackend,
) -> Result<SummaryOutcome, SummaryError> {
    if source_markdown.trim().is_empty() {
        return Err(SummaryError::EmptyContent);
    }
    let call = |req: &LlmRequest| {
        backend
            .complete(req)
            .map(|t| t.trim().to_string())
            .map_err(|e| SummaryError::BackendFailure(e.to_string()))
    };
    let first = call(request)?;
    let violations = validate_summary(&first, source_markdown);
    if violations.is_empty() {
        return Ok(SummaryOutcome {
            text: first,
            attempts: 1,
            warnings: Vec::new(),
        });
    }
    let second = call(&repair_request(request, &first, &violations))?;
    let warnings = validate_summary(&second, source_markdown);
    Ok(SummaryOutcome {
        text: second,
        attempts: 2,
        warnings,
    })
}
