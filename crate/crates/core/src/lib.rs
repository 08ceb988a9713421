//! Core data model, state engine, and scoring for schema-guided dialogue
//! generation and entity-centric state tracking.

pub mod corpus;
pub mod dialogue;
pub mod document;
pub mod metrics;
pub mod ontology;
pub mod prompt;
pub mod state;
pub mod state_change;
pub mod text;
