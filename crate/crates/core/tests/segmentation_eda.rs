mod common;

use apprentice_core::eval::{segmentation_accuracy, DEFAULT_MARGIN_S};
use apprentice_core::gateway::{MockEntry, MockGateway, MockScript};
use apprentice_core::segmentation::{segment_video, SegmentLabel, SegmentationError};
use proptest::prelude::*;

fn label(category: &str, start: f64, end: f64) -> SegmentLabel {
    SegmentLabel {
        category: category.into(),
        start,
        end,
    }
}

#[test]
fn eda_segments_and_keys() {
    let eda = common::eda();
    let run = segment_video(&eda.transcript, &eda.config, &common::eda_gateway()).unwrap();
    let keys: Vec<String> = run.segments.iter().map(|s| s.key()).collect();
    assert_eq!(
        keys,
        [
            "Understand the dataset - 402",
            "Visualize the data - 435",
            "Interpret the chart - 462",
            "Visualize the data - 509",
        ]
    );
    let histogram = &run.segments[1];
    assert_eq!((histogram.start_s, histogram.end_s), (435.23, 461.93));
    assert_eq!(histogram.sentence_range, [8, 12]);
    // One quote was paraphrased and resolved by similarity.
    assert_eq!(run.warnings.len(), 1);
    assert!(run.warnings[0].contains("similarity"));
    assert_eq!(
        segmentation_accuracy(&run.labels(), &common::eda_gold(), DEFAULT_MARGIN_S),
        1.0
    );
}

#[test]
fn segmentation_is_deterministic() {
    let eda = common::eda();
    let first = segment_video(&eda.transcript, &eda.config, &common::eda_gateway()).unwrap();
    for _ in 0..5 {
        let again = segment_video(&eda.transcript, &eda.config, &common::eda_gateway()).unwrap();
        assert_eq!(again, first);
    }
}

#[test]
fn verbatim_summary_needs_no_retrieval() {
    let eda = common::eda();
    let summary = serde_json::json!([[
        "Understand the dataset",
        "so this dataset is recent grads from the college majors data"
    ]]);
    let gw = MockGateway::new(MockScript::new(vec![MockEntry::new(
        "Summarize the video content",
        summary.to_string(),
    )]));
    let run = segment_video(&eda.transcript, &eda.config, &gw).unwrap();
    assert_eq!(run.segments.len(), 1);
    assert_eq!(run.segments[0].sentence_range, [1, 1]);
    assert_eq!(gw.calls().len(), 1);
}

#[test]
fn unknown_goals_are_dropped_with_a_warning() {
    let eda = common::eda();
    let summary = serde_json::json!([
        ["Deploy the model", "They ship it."],
        [
            "Visualize the data",
            "and then geom_histogram and we'll see the distribution of median earnings"
        ]
    ]);
    let gw = MockGateway::new(MockScript::new(vec![MockEntry::new("Summarize", summary.to_string())]));
    let run = segment_video(&eda.transcript, &eda.config, &gw).unwrap();
    assert_eq!(run.segments.len(), 1);
    assert!(run.warnings.iter().any(|w| w.contains("Deploy the model")));
}

#[test]
fn unanchored_summary_is_an_error() {
    let eda = common::eda();
    let summary = serde_json::json!([["Visualize the data", "They plot something."]]);
    let retrieve = serde_json::json!([{"category": "Visualize the data", "sentences": []}]);
    let gw = MockGateway::new(MockScript::new(vec![
        MockEntry::new("Summarize", summary.to_string()),
        MockEntry::new("Retrieve", retrieve.to_string()),
    ]));
    let err = segment_video(&eda.transcript, &eda.config, &gw).unwrap_err();
    assert!(matches!(err, SegmentationError::UnresolvedAnchor { .. }));
}

#[test]
fn garbage_reply_is_a_parse_error() {
    let eda = common::eda();
    let gw = MockGateway::new(MockScript::new(vec![MockEntry::any("I cannot help with that.")]));
    let err = segment_video(&eda.transcript, &eda.config, &gw).unwrap_err();
    assert!(matches!(err, SegmentationError::Parse { stage: "summarize", .. }));
}

#[test]
fn margin_matcher_published_pair() {
    let gold = [label("Visualize the data", 437.0, 460.0)];
    let predicted = [label("Visualize the data", 435.23, 461.93)];
    assert_eq!(segmentation_accuracy(&predicted, &gold, 5.0), 1.0);
    assert_eq!(segmentation_accuracy(&predicted, &gold, 1.0), 0.0);
}

#[test]
fn margin_boundaries() {
    let gold = [label("g", 437.0, 460.0)];
    for d in [-5.0, -2.5, 0.0, 3.0, 5.0] {
        assert_eq!(segmentation_accuracy(&[label("g", 437.0 + d, 460.0)], &gold, 5.0), 1.0);
        assert_eq!(segmentation_accuracy(&[label("g", 437.0, 460.0 + d)], &gold, 5.0), 1.0);
    }
    assert!(segmentation_accuracy(&[label("g", 443.0, 460.0)], &gold, 5.0) < 1.0);
    assert!(segmentation_accuracy(&[label("g", 437.0, 454.0)], &gold, 5.0) < 1.0);
}

#[test]
fn empty_gold() {
    assert_eq!(segmentation_accuracy(&[], &[], 5.0), 1.0);
    assert_eq!(segmentation_accuracy(&[label("g", 0.0, 1.0)], &[], 5.0), 0.0);
}

proptest! {
    #[test]
    fn perturbation_within_margin_always_matches(ds in -5.0..=5.0f64, de in -5.0..=5.0f64) {
        let gold = common::eda_gold();
        let mut predicted = gold.clone();
        predicted[1].start += ds;
        predicted[1].end += de;
        prop_assert_eq!(segmentation_accuracy(&predicted, &gold, 5.0), 1.0);
    }

    #[test]
    fn perturbation_past_margin_loses_the_segment(d in 5.01..30.0f64, sign: bool, which: bool) {
        let gold = common::eda_gold();
        let mut predicted = gold.clone();
        let d = if sign { d } else { -d };
        if which { predicted[2].start += d } else { predicted[2].end += d }
        prop_assert_eq!(segmentation_accuracy(&predicted, &gold, 5.0), 0.75);
    }
}
