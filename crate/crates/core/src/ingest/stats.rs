use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::code::extract_code_blocks;
use super::tokens::{count_prose_tokens, TOKENIZER_VERSION};
use crate::artifacts::{ArtifactKind, ArtifactRegistry};
use crate::model::{Conversation, Role};
use crate::state::StructuredState;
use crate::taxonomy::{InsightType, SpeechActKind};

pub const DECILES: usize = 10;

/// An element whose per-turn occurrences can be histogrammed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StatElement {
    Code,
    Artifact(ArtifactKind),
    Insight,
    SpeechAct(SpeechActKind),
    InsightType(InsightType),
}

impl fmt::Display for StatElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatElement::Code => f.write_str("code"),
            StatElement::Artifact(kind) => f.write_str(kind.as_str()),
            StatElement::Insight => f.write_str("insight"),
            StatElement::SpeechAct(kind) => write!(f, "speech_act:{kind}"),
            StatElement::InsightType(ty) => write!(f, "insight_type:{ty}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConversationStats {
    pub turn_count: usize,
    pub tokenizer: String,
    /// Mean prose tokens per user message.
    pub user_token_mean: f64,
    /// Mean prose tokens per assistant reply, where a reply is all assistant
    /// messages of one turn. Turns without assistant messages are skipped.
    pub assistant_token_mean: f64,
    pub code_block_count: usize,
    pub turns_with_code: usize,
    pub unique_code_count: usize,
    /// (artifact, turn) references of data tables.
    pub table_count: usize,
    pub turns_with_tables: usize,
    pub unique_table_count: usize,
    pub viz_count: usize,
    pub turns_with_viz: usize,
    pub unique_viz_count: usize,
    /// Percent of an element's occurrences falling in each tenth of the
    /// conversation, keyed by element name.
    pub deciles: BTreeMap<String, [f64; DECILES]>,
}

/// Ten-bin histogram: occurrence at turn `i` of `turn_count` lands in bin
/// `floor(10 * i / turn_count)`. Bins are percentages of the total and sum
/// to 100 unless there are no occurrences, in which case all are zero.
pub fn decile_histogram(turn_count: usize, occurrences: impl IntoIterator<Item = usize>) -> [f64; DECILES] {
    let mut counts = [0usize; DECILES];
    let mut total = 0usize;
    if turn_count == 0 {
        return [0.0; DECILES];
    }
    for turn in occurrences {
        if turn >= turn_count {
            continue;
        }
        counts[DECILES * turn / turn_count] += 1;
        total += 1;
    }
    if total == 0 {
        return [0.0; DECILES];
    }
    counts.map(|c| 100.0 * c as f64 / total as f64)
}

fn mean(values: &[usize]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<usize>() as f64 / values.len() as f64
    }
}

fn code_occurrences(conversation: &Conversation) -> Vec<usize> {
    conversation
        .turns
        .iter()
        .flat_map(|t| std::iter::repeat_n(t.turn_index, extract_code_blocks(t).len()))
        .collect()
}

fn artifact_occurrences(registry: &ArtifactRegistry, kind: ArtifactKind) -> Vec<usize> {
    registry
        .of_kind(kind)
        .flat_map(|a| a.turn_refs.iter().copied())
        .collect()
}

/// Occurrence turn indices of `element` in a structured session.
pub fn element_occurrences(state: &StructuredState, element: StatElement) -> Vec<usize> {
    let conv = &state.conversation;
    match element {
        StatElement::Code => code_occurrences(conv),
        StatElement::Artifact(kind) => artifact_occurrences(&state.artifact_registry, kind),
        StatElement::Insight => state
            .insights
            .iter()
            .flat_map(|i| i.turn_indices(conv))
            .collect(),
        StatElement::SpeechAct(kind) => state
            .speech_acts
            .iter()
            .filter(|t| t.kind == kind)
            .map(|t| t.turn_index)
            .collect(),
        StatElement::InsightType(ty) => state
            .insights
            .iter()
            .filter(|i| i.types.contains(&ty))
            .flat_map(|i| i.turn_indices(conv))
            .collect(),
    }
}

pub fn decile_distribution(state: &StructuredState, element: StatElement) -> [f64; DECILES] {
    decile_histogram(
        state.conversation.turns.len(),
        element_occurrences(state, element),
    )
}

/// Counts and code/table/visualization histograms for a conversation and
/// its artifact registry. With an empty registry only the code figures are
/// meaningful.
pub fn compute_stats(conversation: &Conversation, registry: &ArtifactRegistry) -> ConversationStats {
    let n = conversation.turns.len();
    let user_tokens: Vec<usize> = conversation
        .turns
        .iter()
        .map(|t| count_prose_tokens(&t.user_message.content))
        .collect();
    let assistant_tokens: Vec<usize> = conversation
        .turns
        .iter()
        .filter(|t| t.responses.iter().any(|m| m.role == Role::Assistant))
        .map(|t| {
            t.responses
                .iter()
                .filter(|m| m.role == Role::Assistant)
                .map(|m| count_prose_tokens(&m.content))
                .sum()
        })
        .collect();

    let mut code_blocks = 0;
    let mut turns_with_code = 0;
    let mut unique_code = BTreeSet::new();
    for turn in &conversation.turns {
        let blocks = extract_code_blocks(turn);
        code_blocks += blocks.len();
        turns_with_code += usize::from(!blocks.is_empty());
        unique_code.extend(blocks.iter().map(|b| b.normalized_source()));
    }

    let mut deciles = BTreeMap::new();
    deciles.insert(
        StatElement::Code.to_string(),
        decile_histogram(n, code_occurrences(conversation)),
    );
    for kind in [ArtifactKind::DataTable, ArtifactKind::Visualization] {
        deciles.insert(
            StatElement::Artifact(kind).to_string(),
            decile_histogram(n, artifact_occurrences(registry, kind)),
        );
    }

    ConversationStats {
        turn_count: n,
        tokenizer: TOKENIZER_VERSION.to_string(),
        user_token_mean: mean(&user_tokens),
        assistant_token_mean: mean(&assistant_tokens),
        code_block_count: code_blocks,
        turns_with_code,
        unique_code_count: unique_code.len(),
        table_count: artifact_occurrences(registry, ArtifactKind::DataTable).len(),
        turns_with_tables: registry.turns_with(ArtifactKind::DataTable),
        unique_table_count: registry.count(ArtifactKind::DataTable),
        viz_count: artifact_occurrences(registry, ArtifactKind::Visualization).len(),
        turns_with_viz: registry.turns_with(ArtifactKind::Visualization),
        unique_viz_count: registry.count(ArtifactKind::Visualization),
        deciles,
    }
}

/// [`compute_stats`] plus histograms for insights, every speech-act kind
/// and every insight type.
pub fn state_stats(state: &StructuredState) -> ConversationStats {
    let mut stats = compute_stats(&state.conversation, &state.artifact_registry);
    let mut elements = vec![StatElement::Insight];
    elements.extend(SpeechActKind::ALL.map(StatElement::SpeechAct));
    elements.extend(InsightType::ALL.map(StatElement::InsightType));
    for element in elements {
        stats
            .deciles
            .insert(element.to_string(), decile_distribution(state, element));
    }
    stats
}

impl ConversationStats {
    /// Plain-text rendering: one `key: value` line per count, then one line
    /// per histogram.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k}: {v}\n"));
        line("turn_count", self.turn_count.to_string());
        line("tokenizer", self.tokenizer.clone());
        line("user_token_mean", format!("{:.2}", self.user_token_mean));
        line("assistant_token_mean", format!("{:.2}", self.assistant_token_mean));
        line("code_block_count", self.code_block_count.to_string());
        line("turns_with_code", self.turns_with_code.to_string());
        line("unique_code_count", self.unique_code_count.to_string());
        line("table_count", self.table_count.to_string());
        line("turns_with_tables", self.turns_with_tables.to_string());
        line("unique_table_count", self.unique_table_count.to_string());
        line("viz_count", self.viz_count.to_string());
        line("turns_with_viz", self.turns_with_viz.to_string());
        line("unique_viz_count", self.unique_viz_count.to_string());
        for (name, bins) in &self.deciles {
            let cells: Vec<String> = bins.iter().map(|b| format!("{b:.2}")).collect();
            out.push_str(&format!("decile {name}: {}\n", cells.join(" ")));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle: count per bin by scanning bins and testing
    /// membership with integer arithmetic on the bin bounds.
    fn oracle(turn_count: usize, occ: &[usize]) -> [f64; 10] {
        let mut bins = [0.0; 10];
        let total = occ.len() as f64;
        for (b, slot) in bins.iter_mut().enumerate() {
            let hits = occ
                .iter()
                .filter(|&&i| b * turn_count <= 10 * i && 10 * i < (b + 1) * turn_count)
                .count();
            *slot = if total > 0.0 { 100.0 * hits as f64 / total } else { 0.0 };
        }
        bins
    }

    #[test]
    fn only_first_turn() {
        let mut expected = [0.0; 10];
        expected[0] = 100.0;
        assert_eq!(decile_histogram(10, [0]), expected);
    }

    #[test]
    fn absent_element_is_all_zero() {
        assert_eq!(decile_histogram(10, []), [0.0; 10]);
        assert_eq!(decile_histogram(0, [0]), [0.0; 10]);
    }

    #[test]
    fn uniform_over_twenty_turns() {
        let occ: Vec<usize> = (0..20).collect();
        let expected = oracle(20, &occ);
        assert_eq!(expected, [10.0; 10]);
        assert_eq!(decile_histogram(20, occ), expected);
    }

    #[test]
    fn matches_oracle_on_uneven_lengths() {
        for n in 1..40 {
            let occ: Vec<usize> = (0..n).filter(|i| i % 3 != 1).chain([n - 1, 0]).collect();
            let got = decile_histogram(n, occ.clone());
            let want = oracle(n, &occ);
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-9, "n={n}");
            }
            assert!((got.iter().sum::<f64>() - 100.0).abs() < 0.01);
        }
    }
}
