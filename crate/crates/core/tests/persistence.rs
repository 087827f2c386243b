mod common;

use apprentice_core::gateway::MockGateway;
use apprentice_core::orchestrator::EventEnvelope;
use apprentice_core::store::{model_version, recover, FileStore, MemoryStore, SessionRecord, Store};
use apprentice_core::student::Outcome;
use common::crash::{random_crash_trials, SESSION, STUDENT};

#[test]
fn fifty_random_crash_points_lose_nothing() {
    assert_eq!(random_crash_trials().unwrap(), 50);
}

#[test]
fn recovery_promotes_only_newer_snapshots() {
    let store = MemoryStore::new();
    let gw = MockGateway::empty();
    let mut old = common::seeded_student(STUDENT, &gw);
    store.save_model(&old).unwrap();
    let mut newer = old.clone();
    newer
        .observe("use 'coord_flip'", Outcome::Correct, &gw, &Default::default())
        .unwrap();
    assert!(model_version(&newer) > model_version(&old));

    let eda = common::eda();
    let (session, _) = apprentice_core::pipeline::create_session(
        SESSION,
        &eda.config,
        &eda.transcript,
        &eda.code,
        &old,
        &common::eda_gateway(),
    )
    .unwrap();
    let record = SessionRecord {
        session,
        created_at: 0,
        processed: Default::default(),
        model_snapshot: Some(newer.clone()),
    };
    store.save_session(&record).unwrap();
    assert_eq!(recover(&store).unwrap(), 1);
    assert_eq!(store.load_model(STUDENT).unwrap(), Some(newer.clone()));
    // Running again, or with an older snapshot, changes nothing.
    assert_eq!(recover(&store).unwrap(), 0);
    old.similarity_threshold = 0.5;
    let stale = SessionRecord {
        model_snapshot: Some(old),
        ..record
    };
    store.save_session(&stale).unwrap();
    assert_eq!(recover(&store).unwrap(), 0);
    assert_eq!(store.load_model(STUDENT).unwrap(), Some(newer));
}

#[test]
fn corrupt_records_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let store = FileStore::open(dir.path()).unwrap();
    std::fs::write(store.model_path("bad"), "{not json").unwrap();
    assert!(store.load_model("bad").is_err());
    assert!(store.load_model("../escape").is_err());
}

#[test]
fn malformed_event_script_is_rejected_by_serde() {
    let bad: Result<EventEnvelope, _> = serde_json::from_str(r#"{"type":"teleport"}"#);
    assert!(bad.is_err());
}
