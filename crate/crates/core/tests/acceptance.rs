//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Randomized parts use fixed seeds so a failure reproduces.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use apprentice_core::dsl::{compile, DslDocument};
use apprentice_core::eval::{intent_metrics, segmentation_accuracy, Layer, DEFAULT_MARGIN_S};
use apprentice_core::pipeline;
use apprentice_core::planner::{plan, MoveHistory};
use apprentice_core::replay::replay;
use apprentice_core::segmentation::{segment_video, SegmentLabel};
use apprentice_core::student::Thresholds;
use common::oracles;
use proptest::strategy::Strategy;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

type Check = Result<String, String>;

/// Name, time budget and the check itself.
type Criterion = (&'static str, Duration, fn() -> Check);

fn runner(cases: u32) -> TestRunner {
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn bkt_grid() -> Check {
    let n = oracles::bkt_grid_check()?;
    Ok(format!("{n} updates within 1e-12"))
}

fn planner_exhaustion() -> Check {
    let n = oracles::planner_exhaustive_check()?;
    Ok(format!("{n} planner cases"))
}

fn dsl_round_trip() -> Check {
    let eda = common::eda();
    let items = common::appendix_items();
    let mut history = MoveHistory::default();
    let plans = plan(
        &items,
        &common::appendix_mastery(),
        &mut history,
        &Thresholds::default(),
        0.1,
    );
    let doc =
        compile(&plans, &items, &[common::appendix_segment()], &eda.config.action_set).map_err(|e| e.to_string())?;
    let entries = doc
        .segments
        .get("Visualize the data - 509")
        .ok_or("published segment missing")?;
    let body = apprentice_core::json::to_canonical_string(entries).map_err(|e| e.to_string())?;
    ensure(format!("{body}\n") == common::fixture("appendix_dsl.json"), || {
        "published segment differs".into()
    })?;

    runner(100)
        .run(&oracles::any_dsl_document(), |doc| {
            let text = doc.to_canonical();
            let back = DslDocument::from_json(&text).map_err(|e| TestCaseError::fail(e.to_string()))?;
            if back != doc || back.to_canonical() != text {
                return Err(TestCaseError::fail("round trip changed the document"));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("byte-identical, 100 round trips".into())
}

fn e2e_replay() -> Check {
    let eda = common::eda();
    let gw = common::eda_gateway();
    let mut model = common::seeded_student("s1", &gw);
    let (mut session, _) = pipeline::create_session("accept", &eda.config, &eda.transcript, &eda.code, &model, &gw)
        .map_err(|e| e.to_string())?;
    let report = replay(&mut session, &mut model, &gw, &common::eda_events()).map_err(|e| e.to_string())?;
    common::check_trace(&report)?;
    let observed = common::observed_anchors(&session, &report.observations);
    common::model_matches(&model, &common::composed_oracle(&observed))?;
    Ok(format!(
        "{} events, {} observations",
        session.counters.events,
        observed.len()
    ))
}

fn label(category: &str, start: f64, end: f64) -> SegmentLabel {
    SegmentLabel {
        category: category.into(),
        start,
        end,
    }
}

fn segmentation() -> Check {
    let eda = common::eda();
    let first = segment_video(&eda.transcript, &eda.config, &common::eda_gateway()).map_err(|e| e.to_string())?;
    for _ in 0..5 {
        let again = segment_video(&eda.transcript, &eda.config, &common::eda_gateway()).map_err(|e| e.to_string())?;
        ensure(again == first, || "segmentation is not deterministic".into())?;
    }
    let gold = [label("Visualize the data", 437.0, 460.0)];
    let predicted = [label("Visualize the data", 435.23, 461.93)];
    ensure(segmentation_accuracy(&predicted, &gold, 5.0) == 1.0, || {
        "published pair did not match".into()
    })?;

    let gold = common::eda_gold();
    ensure(
        segmentation_accuracy(&first.labels(), &gold, DEFAULT_MARGIN_S) == 1.0,
        || "EDA run below 1.0".into(),
    )?;
    let within = (0..gold.len(), -5.0..=5.0f64, -5.0..=5.0f64);
    runner(200)
        .run(&within, |(i, ds, de)| {
            let mut p = gold.clone();
            p[i].start += ds;
            p[i].end += de;
            let acc = segmentation_accuracy(&p, &gold, 5.0);
            if acc != 1.0 {
                return Err(TestCaseError::fail(format!("segment {i} moved by {ds}/{de}: {acc}")));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    for i in 0..gold.len() {
        for (ds, de) in [(6.0, 0.0), (-6.0, 0.0), (0.0, 6.0), (0.0, -6.0)] {
            let mut p = gold.clone();
            p[i].start += ds;
            p[i].end += de;
            let acc = segmentation_accuracy(&p, &gold, 5.0);
            ensure(acc < 1.0, || format!("6 s shift of segment {i} still scored {acc}"))?;
        }
    }
    Ok("deterministic x5, margin cases hold".into())
}

fn metrics() -> Check {
    let m = intent_metrics(&oracles::hand_corpus(), Layer::Method).map_err(|e| e.to_string())?;
    for (name, v) in [("precision", m.precision), ("recall", m.recall), ("f1", m.f1)] {
        ensure((v - oracles::HAND_MACRO).abs() < 1e-12, || {
            format!("hand corpus {name} = {v}")
        })?;
    }
    let agree: Vec<_> = oracles::hand_corpus()
        .into_iter()
        .map(|mut u| {
            u.annotated = u.predicted;
            u
        })
        .collect();
    for layer in Layer::ALL {
        let m = intent_metrics(&agree, layer).map_err(|e| e.to_string())?;
        ensure((m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0), || {
            format!("all-agree {layer:?} below 1")
        })?;
    }
    runner(1000)
        .run(&oracles::any_corpus().boxed(), |corpus| {
            for layer in Layer::ALL {
                let m = intent_metrics(&corpus, layer).map_err(|e| TestCaseError::fail(e.to_string()))?;
                let mut values = vec![m.precision, m.recall, m.f1];
                for c in m.per_class.values() {
                    values.extend([c.precision, c.recall, c.f1]);
                    if c.precision == 0.0 && c.recall == 0.0 && c.f1 != 0.0 {
                        return Err(TestCaseError::fail("f1 nonzero at P = R = 0"));
                    }
                }
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(TestCaseError::fail(format!("{layer:?} out of bounds")));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("macro {:.6}, 1000 random corpora bounded", oracles::HAND_MACRO))
}

fn durability() -> Check {
    let n = common::crash::random_crash_trials()?;
    Ok(format!("{n} crash points, no acked observation lost"))
}

fn main() -> ExitCode {
    let checks: [Criterion; 7] = [
        ("BKT grid oracle", Duration::from_secs(5), bkt_grid),
        ("planner exhaustion", Duration::from_secs(10), planner_exhaustion),
        ("DSL byte equality and round trips", Duration::MAX, dsl_round_trip),
        ("end-to-end mock replay", Duration::from_secs(30), e2e_replay),
        ("segmentation determinism and margin", Duration::MAX, segmentation),
        ("intent metrics", Duration::MAX, metrics),
        ("persistence durability", Duration::MAX, durability),
    ];
    let mut failed = 0;
    for (n, (name, budget, check)) in checks.into_iter().enumerate() {
        let started = Instant::now();
        let result = check();
        let elapsed = started.elapsed();
        let result = match result {
            Ok(detail) if elapsed > budget => Err(format!("{detail}, but took longer than {budget:?}")),
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS [{}] {name} ({elapsed:.2?}): {detail}", n + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name} ({elapsed:.2?}): {why}", n + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
