//! HTTP service and batch commands for review sessions, corpora and scoring.

pub mod api;
pub mod cli;
