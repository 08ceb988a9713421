use parley_core::ontology::TripletError;
use parley_core::prompt::{PromptError, ScenarioError};
use parley_core::state::StateError;
use parley_lm::LmError;

use crate::session::Phase;

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("{action} is not allowed in phase {phase}")]
    WrongPhase { action: &'static str, phase: Phase },
    #[error("there is no current subdialogue")]
    NoProposal,
    #[error("the current subdialogue is empty")]
    EmptySubdialogue,
    #[error("turn {0} is not part of the current subdialogue")]
    NotInProposal(usize),
    #[error("turn {0} does not exist")]
    UnknownTurn(usize),
    #[error("the current subdialogue has annotations; remove them before changing its text")]
    FrozenByAnnotations,
    #[error("turn text is empty")]
    EmptyText,
    #[error("story is empty")]
    EmptyStory,
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("proposed turn at position {position} is numbered {found}, expected {expected}")]
    TurnNumbering {
        position: usize,
        expected: usize,
        found: usize,
    },
    #[error("span {start}..{end} is invalid for turn {turn} of {len} characters")]
    BadOffsets {
        turn: usize,
        start: usize,
        end: usize,
        len: usize,
    },
    #[error("span {start}..{end} of turn {turn} covers only whitespace")]
    BlankSpan { turn: usize, start: usize, end: usize },
    #[error("annotation on turn {turn} precedes the last annotated turn {last}")]
    AnnotationOrder { turn: usize, last: usize },
    #[error("annotation is disabled for this session")]
    AnnotationDisabled,
    #[error(transparent)]
    Triplet(#[from] TripletError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("conflict {0} is awaiting resolution")]
    ConflictPending(u64),
    #[error("no conflict is pending")]
    NoConflict,
    #[error("conflict {given} is stale; the pending conflict is {pending}")]
    StaleConflict { given: u64, pending: u64 },
    #[error("there is no annotation to remove")]
    NothingToUndo,
    #[error("the ending has not been accepted; complete with force to override")]
    EndingNotAccepted,
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error("event {found} does not follow event {expected}")]
    EventSeq { expected: u64, found: u64 },
    #[error("an event log must start with session_created and contain it once")]
    Creation,
    #[error("event seq {expected} expected, got {found}")]
    StaleSeq { expected: u64, found: u64 },
}

impl SessionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::WrongPhase { .. } => "wrong_phase",
            SessionError::NoProposal => "no_proposal",
            SessionError::EmptySubdialogue => "empty_subdialogue",
            SessionError::NotInProposal(_) => "turn_not_in_proposal",
            SessionError::UnknownTurn(_) => "unknown_turn",
            SessionError::FrozenByAnnotations => "proposal_frozen",
            SessionError::EmptyText => "empty_text",
            SessionError::EmptyStory => "empty_story",
            SessionError::EmptyInstruction => "empty_instruction",
            SessionError::TurnNumbering { .. } => "turn_numbering",
            SessionError::BadOffsets { .. } => "invalid_offsets",
            SessionError::BlankSpan { .. } => "blank_span",
            SessionError::AnnotationOrder { .. } => "annotation_order",
            SessionError::AnnotationDisabled => "annotation_disabled",
            SessionError::Triplet(_) => "invalid_triplet",
            SessionError::State(_) => "state_error",
            SessionError::ConflictPending(_) => "conflict_pending",
            SessionError::NoConflict => "no_conflict",
            SessionError::StaleConflict { .. } => "stale_conflict",
            SessionError::NothingToUndo => "nothing_to_undo",
            SessionError::EndingNotAccepted => "ending_not_accepted",
            SessionError::Scenario(_) => "invalid_scenario",
            SessionError::Prompt(_) => "prompt_error",
            SessionError::Lm(_) => "backend_error",
            SessionError::EventSeq { .. } => "event_sequence",
            SessionError::Creation => "event_log_creation",
            SessionError::StaleSeq { .. } => "stale_seq",
        }
    }
}
