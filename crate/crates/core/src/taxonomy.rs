//! The two closed label sets used to annotate a conversation: speech acts on
//! user queries and insight types on extracted findings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Functional intent of a user query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SpeechActKind {
    FactFinding,
    DeepInsights,
    SpecificVisualization,
    DataTransformations,
    Refinement,
    Recommendation,
    DomainKnowledge,
    Debugging,
}

impl SpeechActKind {
    pub const ALL: [SpeechActKind; 8] = [
        SpeechActKind::FactFinding,
        SpeechActKind::DeepInsights,
        SpeechActKind::SpecificVisualization,
        SpeechActKind::DataTransformations,
        SpeechActKind::Refinement,
        SpeechActKind::Recommendation,
        SpeechActKind::DomainKnowledge,
        SpeechActKind::Debugging,
    ];

    /// Human-facing label, e.g. "Fact Finding".
    pub fn label(self) -> &'static str {
        match self {
            SpeechActKind::FactFinding => "Fact Finding",
            SpeechActKind::DeepInsights => "Deep Insights",
            SpeechActKind::SpecificVisualization => "Specific Visualization",
            SpeechActKind::DataTransformations => "Data Transformations",
            SpeechActKind::Refinement => "Refinement",
            SpeechActKind::Recommendation => "Recommendation",
            SpeechActKind::DomainKnowledge => "Domain Knowledge",
            SpeechActKind::Debugging => "Debugging",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpeechActKind::FactFinding => "FactFinding",
            SpeechActKind::DeepInsights => "DeepInsights",
            SpeechActKind::SpecificVisualization => "SpecificVisualization",
            SpeechActKind::DataTransformations => "DataTransformations",
            SpeechActKind::Refinement => "Refinement",
            SpeechActKind::Recommendation => "Recommendation",
            SpeechActKind::DomainKnowledge => "DomainKnowledge",
            SpeechActKind::Debugging => "Debugging",
        }
    }

    /// Maps a label as emitted by a model (or typed by a user) onto the
    /// canonical kind. Accepts the canonical identifier, the display label,
    /// and the names used in the extraction prompt ("Deeper Insights",
    /// "Recommendations", "Refinement or Follow-up"). Case and
    /// punctuation are ignored.
    pub fn from_alias(raw: &str) -> Option<SpeechActKind> {
        let key = alias_key(raw);
        let kind = match key.as_str() {
            "factfinding" => SpeechActKind::FactFinding,
            "deepinsights" | "deeperinsights" | "deepinsight" | "deeperinsight" => {
                SpeechActKind::DeepInsights
            }
            "specificvisualization" | "specificvisualisation" | "visualization" => {
                SpeechActKind::SpecificVisualization
            }
            "datatransformations" | "datatransformation" => SpeechActKind::DataTransformations,
            "refinement" | "refinementorfollowup" | "followup" | "refinementfollowup" => {
                SpeechActKind::Refinement
            }
            "recommendation" | "recommendations" => SpeechActKind::Recommendation,
            "domainknowledge" => SpeechActKind::DomainKnowledge,
            "debugging" => SpeechActKind::Debugging,
            _ => return None,
        };
        Some(kind)
    }
}

impl fmt::Display for SpeechActKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpeechActKind {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SpeechActKind::from_alias(s).ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

/// Category of a data insight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum InsightType {
    Value,
    Proportion,
    Difference,
    Distribution,
    Trend,
    Rank,
    Aggregation,
    Association,
    Extreme,
    Categorization,
    Outlier,
}

impl InsightType {
    pub const ALL: [InsightType; 11] = [
        InsightType::Value,
        InsightType::Proportion,
        InsightType::Difference,
        InsightType::Distribution,
        InsightType::Trend,
        InsightType::Rank,
        InsightType::Aggregation,
        InsightType::Association,
        InsightType::Extreme,
        InsightType::Categorization,
        InsightType::Outlier,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            InsightType::Value => "Value",
            InsightType::Proportion => "Proportion",
            InsightType::Difference => "Difference",
            InsightType::Distribution => "Distribution",
            InsightType::Trend => "Trend",
            InsightType::Rank => "Rank",
            InsightType::Aggregation => "Aggregation",
            InsightType::Association => "Association",
            InsightType::Extreme => "Extreme",
            InsightType::Categorization => "Categorization",
            InsightType::Outlier => "Outlier",
        }
    }

    /// Strict, case-insensitive lookup. Unlike speech acts there are no
    /// aliases: anything outside the eleven names is rejected.
    pub fn parse(raw: &str) -> Option<InsightType> {
        let key = alias_key(raw);
        InsightType::ALL
            .into_iter()
            .find(|t| t.as_str().eq_ignore_ascii_case(&key))
    }

    /// Comma separated list of all names, used in prompts and repair messages.
    pub fn catalogue() -> String {
        InsightType::ALL.map(InsightType::as_str).join(", ")
    }
}

impl fmt::Display for InsightType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InsightType {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        InsightType::parse(s).ok_or_else(|| UnknownLabel(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?}")]
pub struct UnknownLabel(pub String);

fn alias_key(raw: &str) -> String {
    raw.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_names_map_onto_canonical_kinds() {
        assert_eq!(
            SpeechActKind::from_alias("Deeper Insights"),
            Some(SpeechActKind::DeepInsights)
        );
        assert_eq!(
            SpeechActKind::from_alias("Recommendations"),
            Some(SpeechActKind::Recommendation)
        );
        assert_eq!(
            SpeechActKind::from_alias("Refinement or Follow-up"),
            Some(SpeechActKind::Refinement)
        );
        assert_eq!(SpeechActKind::from_alias("Velocity"), None);
    }

    #[test]
    fn labels_and_identifiers_round_trip() {
        for kind in SpeechActKind::ALL {
            assert_eq!(SpeechActKind::from_alias(kind.label()), Some(kind));
            assert_eq!(kind.as_str().parse::<SpeechActKind>(), Ok(kind));
        }
        for ty in InsightType::ALL {
            assert_eq!(InsightType::parse(ty.as_str()), Some(ty));
            assert_eq!(InsightType::parse(&ty.as_str().to_uppercase()), Some(ty));
        }
    }

    #[test]
    fn insight_types_have_no_aliases() {
        assert_eq!(InsightType::parse("Velocity"), None);
        assert_eq!(InsightType::parse("Outliers"), None);
        assert_eq!(InsightType::ALL.len(), 11);
        assert!(InsightType::catalogue().starts_with("Value, Proportion"));
    }
}
