use std::path::{Path, PathBuf};

use convlens_core::artifacts::{DatasetManifest, EchoRunner, ExecutionLimits};
use convlens_core::composition::{
    build_summary_prompt, generate_summary, serialize_composition, Composition, SummaryParams,
};
use convlens_core::ingest::ingest_export;
use convlens_core::llm::{LlmBackend, ReplayBackend};
use convlens_core::model::ElementRef;
use convlens_core::pipeline::build_state;
use convlens_core::state::StructuredState;
use convlens_core::structuring::{classify_by_keywords, classify_speech_acts, extract_insights, run_pipeline};
use convlens_core::taxonomy::{InsightType, SpeechActKind};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

fn replay(dir: &str) -> ReplayBackend {
    ReplayBackend::from_file(&fixture(&format!("{dir}/transcript.json"))).unwrap()
}

#[test]
fn coffee_consolidation_matches_recorded_grouping() {
    let conv = ingest_export(&std::fs::read(fixture("coffee/export.json")).unwrap()).unwrap();
    assert_eq!(conv.turns.len(), 12);
    let backend = replay("coffee");
    let ex = run_pipeline(&conv, Some(&backend as &dyn LlmBackend));
    assert!(ex.warnings().is_empty(), "{:?}", ex.warnings());
    let node = ex.thread_forest.get(13).expect("grouped thread");
    assert_eq!(node.title, "Coffee drinker categorization and detailed analysis");
    assert_eq!(node.children(), &[3, 4, 5, 6, 8, 9, 10, 12]);
    assert_eq!(ex.thread_forest.roots, vec![1, 2, 13, 7, 11]);
    ex.thread_forest.validate(12).unwrap();
    assert_eq!(ex.insights.len(), 3);
    assert_eq!(ex.speech_acts[2].kind, SpeechActKind::DomainKnowledge);
}

#[test]
fn coffee_full_build_with_echo_runner() {
    let conv = ingest_export(&std::fs::read(fixture("coffee/export.json")).unwrap()).unwrap();
    let manifest = DatasetManifest::load(&fixture("coffee/datasets.json")).unwrap();
    let backend = replay("coffee");
    let dir = tempfile::tempdir().unwrap();
    let mut runner = EchoRunner::new(dir.path());
    let build = build_state(
        conv,
        &manifest,
        Some(&backend as &dyn LlmBackend),
        Some(&mut runner),
        ExecutionLimits::default(),
    )
    .unwrap();
    let stats = convlens_core::ingest::stats::state_stats(&build.state);
    assert_eq!(stats.turn_count, 12);
    assert!(stats.turns_with_viz >= 2);
    assert!(stats.turns_with_tables >= 2);
}

#[test]
fn speech_act_examples_with_recorded_answers() {
    let conv = ingest_export(&std::fs::read(fixture("speech_acts/export.json")).unwrap()).unwrap();
    let (tags, report) = classify_speech_acts(&conv, &replay("speech_acts")).unwrap();
    assert!(report.residual_warnings.is_empty());
    let expected = [
        SpeechActKind::FactFinding,
        SpeechActKind::DeepInsights,
        SpeechActKind::SpecificVisualization,
        SpeechActKind::DataTransformations,
        SpeechActKind::Refinement,
        SpeechActKind::Recommendation,
        SpeechActKind::DomainKnowledge,
        SpeechActKind::Debugging,
    ];
    let got: Vec<_> = tags.iter().map(|t| t.kind).collect();
    assert_eq!(got, expected);
}

#[test]
fn keyword_rules_cover_three_examples() {
    for (query, kind) in [
        ("Did any passengers survive?", SpeechActKind::FactFinding),
        ("Plot a bar chart of passengers by class.", SpeechActKind::SpecificVisualization),
        ("Can you filter to only show first class passengers?", SpeechActKind::DataTransformations),
    ] {
        assert_eq!(classify_by_keywords(query), kind, "{query}");
    }
}

#[test]
fn insight_examples_with_recorded_answers() {
    let conv = ingest_export(&std::fs::read(fixture("insights/export.json")).unwrap()).unwrap();
    let (insights, report) = extract_insights(&conv, &replay("insights")).unwrap();
    assert!(report.residual_warnings.is_empty());
    assert_eq!(insights.len(), 11);
    let types: Vec<_> = insights.iter().map(|i| i.primary_type().unwrap()).collect();
    assert_eq!(
        types,
        [
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
        ]
    );
    for (k, ins) in insights.iter().enumerate() {
        assert!(ins.violations(&conv).is_empty());
        assert_eq!(ins.turn_indices(&conv), vec![k]);
    }
}

fn report_state() -> StructuredState {
    serde_json::from_slice(&std::fs::read(fixture("report_example/state.json")).unwrap()).unwrap()
}

#[test]
fn report_summary_is_reproduced() {
    let state = report_state();
    let mut c = Composition::new("report_example");
    let viz = state.artifact_registry.get("viz-0").unwrap();
    assert_eq!(viz.turn_index, 7);
    for r in [
        ElementRef::turn(5),
        ElementRef::artifact("viz-0"),
        ElementRef::turn(10),
        ElementRef::insight(0),
    ] {
        c.add_block(&state, &r, None).unwrap();
    }
    let md = serialize_composition(&c, &state).unwrap();
    assert_eq!(md, std::fs::read_to_string(fixture("report_example/expected_input.md")).unwrap());
    let req = build_summary_prompt(&md, SummaryParams::new(1, 1, 2).unwrap()).unwrap();
    assert!(req.user.contains("read in 30 seconds or less (100 words or less)"));
    assert!(req.user.contains("The summary should be semi-formal."));
    let out = generate_summary(&req, &md, &replay("report_example")).unwrap();
    assert_eq!(out.attempts, 1);
    assert!(out.warnings.is_empty(), "{:?}", out.warnings);
    assert_eq!(out.text, std::fs::read_to_string(fixture("report_example/expected_output.md")).unwrap());
}
