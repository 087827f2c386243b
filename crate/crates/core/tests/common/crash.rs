//! Kill-and-restart harness for the file store.

use std::path::Path;
use std::sync::Arc;

use apprentice_core::gateway::{LlmGateway, MockGateway};
use apprentice_core::orchestrator::Phase;
use apprentice_core::service::{CreateSession, Delivery, TutorService};
use apprentice_core::store::{FileStore, Store};
use apprentice_core::student::Observation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STUDENT: &str = "s1";
pub const SESSION: &str = "eda-1";

#[derive(Debug, Clone, Copy)]
pub enum Crash {
    /// The process dies after the ack; both files are on disk.
    Clean,
    /// The model write of the last commit never happened.
    LostModelWrite,
    /// A half-written temp file is left beside the records.
    StrayTemp,
}

fn open(dir: &Path, gw: &Arc<MockGateway>) -> TutorService {
    let store: Arc<dyn Store> = Arc::new(FileStore::open(dir).unwrap());
    let gateway: Arc<dyn LlmGateway> = gw.clone();
    TutorService::new(store, gateway).unwrap()
}

fn start(dir: &Path, gw: &Arc<MockGateway>) -> TutorService {
    let store = FileStore::open(dir).unwrap();
    store.save_model(&super::seeded_student(STUDENT, gw.as_ref())).unwrap();
    let service = open(dir, gw);
    let eda = super::eda();
    service
        .create_session(CreateSession {
            student_id: STUDENT.into(),
            config: eda.config,
            session_id: Some(SESSION.into()),
            transcript: Some(eda.transcript),
            code: Some(eda.code),
        })
        .unwrap();
    service
}

fn drain(service: &TutorService) {
    for _ in 0..64 {
        match service.next_message(SESSION).unwrap() {
            Delivery::Message { .. } => {}
            Delivery::Blocked { .. } | Delivery::Done => return,
        }
    }
    panic!("session never blocked");
}

fn expected_model(service: &TutorService, acked: &[Observation]) -> Vec<(String, f64, u32)> {
    let record = service.session_record(SESSION).unwrap();
    super::composed_oracle(&super::observed_anchors(&record.session, acked))
}

pub fn run_with_crash(crash_after: usize, mode: Crash) -> Result<(), String> {
    let dir = tempfile::tempdir().unwrap();
    let gw = Arc::new(super::eda_gateway());
    let events = super::eda_events();
    let files = FileStore::open(dir.path()).unwrap();
    let mut service = start(dir.path(), &gw);
    let mut acked: Vec<Observation> = Vec::new();

    for (i, envelope) in events.iter().enumerate() {
        drain(&service);
        let model_before = std::fs::read(files.model_path(STUDENT)).unwrap();
        let ack = service
            .post_event(SESSION, envelope.clone())
            .map_err(|e| e.to_string())?;
        acked.extend(ack.observation);
        if i + 1 != crash_after {
            continue;
        }
        match mode {
            Crash::Clean => {}
            Crash::LostModelWrite => std::fs::write(files.model_path(STUDENT), model_before).unwrap(),
            Crash::StrayTemp => {
                std::fs::write(dir.path().join("models").join(".tmpCRASH"), b"{\"student_id\":").unwrap()
            }
        }
        drop(service);
        service = open(dir.path(), &gw);
        let stored = files
            .load_model(STUDENT)
            .unwrap()
            .ok_or("model missing after restart")?;
        super::model_matches(&stored, &expected_model(&service, &acked))
            .map_err(|e| format!("after restart at event {crash_after} ({mode:?}): {e}"))?;
        // Redelivery of the acked event is recognised and changes nothing.
        let again = service
            .post_event(SESSION, envelope.clone())
            .map_err(|e| e.to_string())?;
        if !again.duplicate || files.load_model(STUDENT).unwrap().as_ref() != Some(&stored) {
            return Err("redelivered event was applied twice".into());
        }
    }
    drain(&service);
    let record = service.session_record(SESSION).unwrap();
    if record.session.phase != Phase::Done {
        return Err(format!("ended in {:?}", record.session.phase));
    }
    let final_model = service.get_student_model(STUDENT).unwrap();
    super::model_matches(&final_model, &expected_model(&service, &acked))?;
    if acked.len() != 5 {
        return Err(format!("{} observations acked", acked.len()));
    }
    Ok(())
}

/// Fifty crash points and modes drawn from a fixed seed.
pub fn random_crash_trials() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let events = super::eda_events().len();
    for trial in 0..50 {
        let point = rng.gen_range(1..=events);
        let mode = match rng.gen_range(0..3) {
            0 => Crash::Clean,
            1 => Crash::LostModelWrite,
            _ => Crash::StrayTemp,
        };
        run_with_crash(point, mode).map_err(|e| format!("trial {trial}: {e}"))?;
    }
    Ok(50)
}
