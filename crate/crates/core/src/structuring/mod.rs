//! The three extraction modules (threads, speech acts, insights), their
//! validation, and the offline fallback.

pub mod fallback;
pub mod insights;
pub mod repair;
pub mod speech_acts;
pub mod threads;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::forest::ThreadForest;
use crate::llm::LlmBackend;
use crate::model::{Conversation, Insight, SpeechActTag};

pub use fallback::{classify_by_keywords, fallback_speech_acts, fallback_threads, leading_words};
pub use insights::extract_insights;
pub use repair::{extract_json, validate_and_repair, Checked};
pub use speech_acts::classify_speech_acts;
pub use threads::{consolidate_threads, summarize_turns, TurnSummary, MAX_CONSOLIDATION_ROUNDS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionModule {
    Threads,
    SpeechActs,
    Insights,
}

impl fmt::Display for ExtractionModule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExtractionModule::Threads => "threads",
            ExtractionModule::SpeechActs => "speech_acts",
            ExtractionModule::Insights => "insights",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub module: ExtractionModule,
    pub attempts: u32,
    pub repairs: Vec<String>,
    pub residual_warnings: Vec<String>,
    /// Set when the module's output was replaced by the fallback.
    #[serde(default)]
    pub fell_back: bool,
}

impl ExtractionReport {
    pub fn new(module: ExtractionModule) -> Self {
        ExtractionReport {
            module,
            attempts: 0,
            repairs: Vec::new(),
            residual_warnings: Vec::new(),
            fell_back: false,
        }
    }

    /// Adds the counts and notes of a sub-call for the same module.
    pub fn absorb(&mut self, other: ExtractionReport) {
        self.attempts += other.attempts;
        self.repairs.extend(other.repairs);
        self.residual_warnings.extend(other.residual_warnings);
        self.fell_back |= other.fell_back;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StructuringError {
    #[error("{module}: backend failure: {message}")]
    BackendFailure { module: ExtractionModule, message: String },
    #[error("{module}: answer still invalid after repair: {}", violations.join("; "))]
    SchemaViolation {
        module: ExtractionModule,
        violations: Vec<String>,
    },
}

/// Threads, speech acts and insights for one conversation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Extraction {
    pub thread_forest: ThreadForest,
    pub speech_acts: Vec<SpeechActTag>,
    pub insights: Vec<Insight>,
    pub reports: Vec<ExtractionReport>,
}

impl Extraction {
    /// Warnings for the session: one line per module that fell back, plus
    /// every residual warning.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for r in &self.reports {
            for w in &r.residual_warnings {
                out.push(format!("{}: {w}", r.module));
            }
        }
        out
    }

    pub fn is_partial(&self) -> bool {
        self.reports.iter().any(|r| r.fell_back || !r.residual_warnings.is_empty())
    }
}

/// Deterministic extraction with no model: one leaf per turn, keyword
/// speech acts, no insights.
pub fn fallback_extract(conversation: &Conversation) -> Extraction {
    Extraction {
        thread_forest: fallback_threads(conversation),
        speech_acts: fallback_speech_acts(conversation),
        insights: Vec::new(),
        reports: Vec::new(),
    }
}

fn fell_back(module: ExtractionModule, error: &StructuringError) -> ExtractionReport {
    let mut r = ExtractionReport::new(module);
    r.attempts = match error {
        StructuringError::SchemaViolation { .. } => 2,
        StructuringError::BackendFailure { .. } => 1,
    };
    r.fell_back = true;
    r.residual_warnings.push(format!("fell back to offline rules: {error}"));
    r
}

fn thread_module(conversation: &Conversation, backend: &dyn LlmBackend) -> (ThreadForest, ExtractionReport) {
    let n = conversation.turns.len();
    let (summaries, mut report) = match summarize_turns(conversation, backend) {
        Ok(ok) => ok,
        Err(e) => return (fallback_threads(conversation), fell_back(ExtractionModule::Threads, &e)),
    };
    let leaves = threads::forest_from_summaries(&summaries);
    let (forest, consolidation) = consolidate_threads(leaves.clone(), backend);
    report.absorb(consolidation);
    match forest.validate(n) {
        Ok(()) => (forest, report),
        Err(e) => {
            report.residual_warnings.push(format!("consolidated forest invalid ({e}); kept turn summaries"));
            (leaves, report)
        }
    }
}

/// Runs the three extraction modules concurrently. With no backend, or for
/// any module whose call fails, the module's fallback output is used and
/// the report says so. Every returned structure is fully validated.
pub fn run_pipeline(conversation: &Conversation, backend: Option<&dyn LlmBackend>) -> Extraction {
    let Some(backend) = backend else {
        return fallback_extract(conversation);
    };
    let (threads, acts, insights) = std::thread::scope(|s| {
        let t = s.spawn(|| thread_module(conversation, backend));
        let a = s.spawn(|| classify_speech_acts(conversation, backend));
        let i = s.spawn(|| extract_insights(conversation, backend));
        (
            t.join().expect("thread module panicked"),
            a.join().expect("speech-act module panicked"),
            i.join().expect("insight module panicked"),
        )
    });
    let (thread_forest, thread_report) = threads;
    let (speech_acts, act_report) = match acts {
        Ok(ok) => ok,
        Err(e) => (fallback_speech_acts(conversation), fell_back(ExtractionModule::SpeechActs, &e)),
    };
    let (insights, insight_report) = match insights {
        Ok(ok) => ok,
        Err(e) => (Vec::new(), fell_back(ExtractionModule::Insights, &e)),
    };
    Extraction {
        thread_forest,
        speech_acts,
        insights,
        reports: vec![thread_report, act_report, insight_report],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ingest_export, ExportBuilder};
    use crate::llm::{BackendError, LlmRequest};

    fn three_turns() -> Conversation {
        let doc = ExportBuilder::new("t")
            .user("How many rows?")
            .assistant("4042")
            .user("Plot ages")
            .assistant("done")
            .user("Sort by count")
            .assistant("sorted")
            .to_bytes();
        ingest_export(&doc).unwrap()
    }

    #[test]
    fn fallback_on_three_turns() {
        let ex = run_pipeline(&three_turns(), None);
        assert_eq!(ex.thread_forest.roots.len(), 3);
        assert_eq!(ex.speech_acts.len(), 3);
        assert!(ex.insights.is_empty());
        assert!(!ex.is_partial());
    }

    /// Answers by prompt type; insight requests fail.
    struct ByPrompt;
    impl LlmBackend for ByPrompt {
        fn complete(&self, r: &LlmRequest) -> Result<String, BackendError> {
            if r.user.contains("Analysis Turn Summaries:") {
                Ok(r#"{"threads":[{"tid":1,"title":"rows","turn":0},{"tid":2,"title":"ages","turn":1},{"tid":3,"title":"sort","turn":2}]}"#.into())
            } else if r.user.contains("Grouped Analysis Threads Summary:") {
                Ok("{}".into())
            } else if r.user.contains("Speech Acts:") {
                Ok(r#"{"speech_acts":[{"msg_turn_id":0,"speech_act":"Fact Finding"},{"msg_turn_id":1,"speech_act":"Specific Visualization"},{"msg_turn_id":2,"speech_act":"Data Transformations"}]}"#.into())
            } else {
                Err(BackendError::Transport("insights down".into()))
            }
        }
    }

    #[test]
    fn failing_insight_module_falls_back_alone() {
        let conv = three_turns();
        let ex = run_pipeline(&conv, Some(&ByPrompt));
        assert_eq!(ex.thread_forest.get(2).unwrap().title, "ages");
        assert_eq!(ex.speech_acts.len(), 3);
        assert!(ex.insights.is_empty());
        let insight_report = ex.reports.iter().find(|r| r.module == ExtractionModule::Insights).unwrap();
        assert!(insight_report.fell_back);
        assert!(ex.is_partial());
        assert!(ex.warnings().iter().any(|w| w.starts_with("insights:")));
    }
}
