//! Review sessions for LM-assisted dialogue generation.
//!
//! A [`Session`] is a pure state machine driven by [`SessionEvent`]s. The
//! [`Orchestrator`] turns reviewer actions into events, calling the language
//! model when text is needed; the [`SessionStore`] persists the event log and
//! periodic snapshots.

pub mod demo;
mod error;
mod orchestrator;
mod session;
mod store;

pub use error::SessionError;
pub use orchestrator::{system_clock, Action, AnnotateRequest, Clock, Orchestrator, Outcome, Reply};
pub use session::{
    ConflictPrompt, EventKind, GenerationFailure, Phase, Proposal, Session, SessionConfig, SessionEvent,
};
pub use store::{valid_id, SessionStore, StoreError, EVENTS_FILE, SNAPSHOT_FILE};
