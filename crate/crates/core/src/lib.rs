//! Cognitive-apprenticeship tutoring for programming videos.
//!
//! The offline pipeline turns a transcript, a code artifact and an expert
//! config into segments, knowledge items, move plans and a DSL document.
//! The online loop ([`orchestrator`]) walks the compiled queue with one
//! student while [`student`] tracks mastery.

pub mod dsl;
pub mod eval;
pub mod gateway;
pub mod ingestion;
pub mod json;
pub mod knowledge;
pub mod orchestrator;
pub mod pipeline;
pub mod planner;
pub mod prompts;
pub mod replay;
pub mod segmentation;
pub mod service;
pub mod store;
pub mod student;
