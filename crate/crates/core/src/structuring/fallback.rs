//! Deterministic structuring without a model.
//!
//! Every turn becomes its own leaf thread, titled with the first eight words
//! of the user query. Speech acts come from keyword rules applied to the
//! query, matching case-insensitively at the start of a word:
//!
//! | keywords | speech act |
//! |---|---|
//! | plot, chart, graph, visualiz/visualis, histogram, heatmap, scatter | SpecificVisualization |
//! | filter, sort, group | DataTransformations |
//! | anything else | FactFinding |
//!
//! No insights are produced.

use std::sync::OnceLock;

use regex::Regex;

use crate::forest::{ThreadForest, ThreadNode};
use crate::model::{Conversation, SpeechActTag};
use crate::taxonomy::SpeechActKind;

pub const TITLE_WORDS: usize = 8;

/// The first `n` whitespace-separated words of `text`, joined by single
/// spaces.
pub fn leading_words(text: &str, n: usize) -> String {
    text.split_whitespace().take(n).collect::<Vec<_>>().join(" ")
}

fn rules() -> &'static [(Regex, SpeechActKind)] {
    static RULES: OnceLock<Vec<(Regex, SpeechActKind)>> = OnceLock::new();
    RULES.get_or_init(|| {
        vec![
            (
                Regex::new(r"(?i)\b(plot|chart|graph|visuali[sz]|histogram|heatmap|scatter)").expect("valid regex"),
                SpeechActKind::SpecificVisualization,
            ),
            (
                Regex::new(r"(?i)\b(filter|sort|group)").expect("valid regex"),
                SpeechActKind::DataTransformations,
            ),
        ]
    })
}

pub fn classify_by_keywords(query: &str) -> SpeechActKind {
    rules()
        .iter()
        .find(|(re, _)| re.is_match(query))
        .map(|(_, kind)| *kind)
        .unwrap_or(SpeechActKind::FactFinding)
}

fn title_for(conversation: &Conversation, turn_index: usize) -> String {
    let title = leading_words(&conversation.turns[turn_index].user_message.content, TITLE_WORDS);
    if title.is_empty() {
        format!("Turn {}", turn_index + 1)
    } else {
        title
    }
}

/// One root leaf per turn; thread ids are turn index + 1.
pub fn fallback_threads(conversation: &Conversation) -> ThreadForest {
    ThreadForest::from_leaves(
        (0..conversation.turns.len()).map(|i| ThreadNode::leaf(i as u32 + 1, title_for(conversation, i), i)),
    )
}

pub fn fallback_speech_acts(conversation: &Conversation) -> Vec<SpeechActTag> {
    conversation
        .turns
        .iter()
        .map(|t| SpeechActTag {
            kind: classify_by_keywords(&t.user_message.content),
            turn_index: t.turn_index,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ingest_export, ExportBuilder};

    #[test]
    fn keyword_rules() {
        assert_eq!(
            classify_by_keywords("Plot a bar chart of passengers by class."),
            SpeechActKind::SpecificVisualization
        );
        assert_eq!(
            classify_by_keywords("Can you filter to only show first class passengers?"),
            SpeechActKind::DataTransformations
        );
        assert_eq!(classify_by_keywords("Did any passengers survive?"), SpeechActKind::FactFinding);
        assert_eq!(classify_by_keywords("Please VISUALISE it"), SpeechActKind::SpecificVisualization);
        // word-start only: "autograph" and "resort" do not fire
        assert_eq!(classify_by_keywords("an autograph at the resort"), SpeechActKind::FactFinding);
    }

    #[test]
    fn five_turns_five_leaves() {
        let mut b = ExportBuilder::new("t");
        for i in 0..5 {
            b = b.user(&format!("question number {i} about the data with many extra words")).assistant("ok");
        }
        let conv = ingest_export(&b.to_bytes()).unwrap();
        let forest = fallback_threads(&conv);
        assert_eq!(forest.roots.len(), 5);
        forest.validate(5).unwrap();
        assert_eq!(forest.get(1).unwrap().title, "question number 0 about the data with many");
        assert_eq!(fallback_speech_acts(&conv).len(), 5);
    }
}
