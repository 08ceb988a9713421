//! Session state and the events that change it.
//!
//! [`Session::apply`] is the only way session state changes. It needs neither
//! the ontology nor a language model, so any session can be rebuilt from its
//! event log alone.

use std::fmt;

use serde::{Deserialize, Serialize};

use parley_core::dialogue::{TerminationSignals, Turn};
use parley_core::document::{
    char_slice, exchange_key, exchange_tlbs, Boundary, DialogueDocument, SessionStats, SpanAnnotation,
};
use parley_core::prompt::{PromptConfig, ScenarioSpec};
use parley_core::state::{replay_cb_sequence, Resolution, StateError, StateSnapshot};
use parley_lm::LmParams;

use crate::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    DraftingStory,
    Generating,
    Reviewing,
    Annotating,
    EndingProposed,
    Completed,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::DraftingStory => "drafting_story",
            Phase::Generating => "generating",
            Phase::Reviewing => "reviewing",
            Phase::Annotating => "annotating",
            Phase::EndingProposed => "ending_proposed",
            Phase::Completed => "completed",
        })
    }
}

fn yes() -> bool {
    true
}

/// Per-session settings, fixed at creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Whether spans may be annotated in this session.
    #[serde(default = "yes")]
    pub annotation: bool,
    #[serde(default)]
    pub termination: TerminationSignals,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub lm: LmParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            annotation: true,
            termination: TerminationSignals::default(),
            prompt: PromptConfig::default(),
            lm: LmParams::default(),
            annotator: None,
        }
    }
}

/// The subdialogue under review. Turn indices continue the committed history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub turns: Vec<Turn>,
    /// Parallel to `turns`: whether the reviewer changed the text.
    pub edited: Vec<bool>,
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instruction: Option<String>,
    #[serde(default)]
    pub ending_rejected: bool,
}

/// Raised when an annotation meets a fill from an earlier exchange with
/// different values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictPrompt {
    /// Seq of the event that raised the conflict.
    pub id: u64,
    pub referent: String,
    pub domain: String,
    pub slot: String,
    pub existing: Vec<String>,
    pub incoming: SpanAnnotation,
    pub allowed: Vec<Resolution>,
}

/// The reviewer-visible trace of a proposal that could not be parsed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationFailure {
    pub message: String,
    /// Raw LM output of each attempt.
    pub raw_text: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    SessionCreated {
        id: String,
        scenario: ScenarioSpec,
        config: SessionConfig,
    },
    StorySet {
        story: String,
        generated: bool,
    },
    InstructionAdded {
        instruction: String,
    },
    SubdialogueProposed {
        turns: Vec<Turn>,
        raw_text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instruction: Option<String>,
    },
    /// Turns of the current proposal after the first `keep` were replaced.
    Regenerated {
        keep: usize,
        turns: Vec<Turn>,
        raw_text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        instruction: Option<String>,
    },
    GenerationFailed {
        message: String,
        raw_text: Vec<String>,
    },
    TurnEdited {
        turn_index: usize,
        text: String,
    },
    TurnDeleted {
        turn_index: usize,
    },
    SpanAnnotated {
        annotation: SpanAnnotation,
    },
    ConflictRaised {
        annotation: SpanAnnotation,
        existing: Vec<String>,
    },
    ConflictResolved {
        conflict_id: u64,
        resolution: Resolution,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        prior: Option<String>,
    },
    ConflictCancelled {
        conflict_id: u64,
    },
    /// The most recent annotation was withdrawn.
    AnnotationRemoved,
    SubdialogueCommitted,
    EndingRejected,
    EndingAccepted,
    Completed {
        forced: bool,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::SessionCreated { .. } => "session_created",
            EventKind::StorySet { .. } => "story_set",
            EventKind::InstructionAdded { .. } => "instruction_added",
            EventKind::SubdialogueProposed { .. } => "subdialogue_proposed",
            EventKind::Regenerated { .. } => "regenerated",
            EventKind::GenerationFailed { .. } => "generation_failed",
            EventKind::TurnEdited { .. } => "turn_edited",
            EventKind::TurnDeleted { .. } => "turn_deleted",
            EventKind::SpanAnnotated { .. } => "span_annotated",
            EventKind::ConflictRaised { .. } => "conflict_raised",
            EventKind::ConflictResolved { .. } => "conflict_resolved",
            EventKind::ConflictCancelled { .. } => "conflict_cancelled",
            EventKind::AnnotationRemoved => "annotation_removed",
            EventKind::SubdialogueCommitted => "subdialogue_committed",
            EventKind::EndingRejected => "ending_rejected",
            EventKind::EndingAccepted => "ending_accepted",
            EventKind::Completed { .. } => "completed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    /// Milliseconds since the Unix epoch. Not part of the replayed state.
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub scenario: ScenarioSpec,
    pub config: SessionConfig,
    pub phase: Phase,
    /// Committed turns, starting with the initial exchange.
    pub history: Vec<Turn>,
    pub boundaries: Vec<Boundary>,
    pub current: Option<Proposal>,
    pub annotations: Vec<SpanAnnotation>,
    pub pending_conflict: Option<ConflictPrompt>,
    pub instructions: Vec<String>,
    pub last_failure: Option<GenerationFailure>,
    pub stats: SessionStats,
    /// Cumulative belief over committed and proposed turns.
    pub running_cb: StateSnapshot,
    pub ending_accepted: bool,
    pub document: Option<DialogueDocument>,
    /// Seq the next event must carry.
    pub next_seq: u64,
}

impl Session {
    /// Rebuild a session from its complete event log.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a SessionEvent>) -> Result<Session, SessionError> {
        let mut events = events.into_iter();
        let first = events.next().ok_or(SessionError::Creation)?;
        let mut session = Session::from_created(first)?;
        for e in events {
            session.apply(e)?;
        }
        Ok(session)
    }

    pub fn from_created(event: &SessionEvent) -> Result<Session, SessionError> {
        let EventKind::SessionCreated { id, scenario, config } = &event.kind else {
            return Err(SessionError::Creation);
        };
        if event.seq != 0 {
            return Err(SessionError::EventSeq {
                expected: 0,
                found: event.seq,
            });
        }
        Ok(Session {
            id: id.clone(),
            phase: if scenario.story.is_some() {
                Phase::Generating
            } else {
                Phase::DraftingStory
            },
            history: scenario.initial_exchange.clone(),
            scenario: scenario.clone(),
            config: config.clone(),
            boundaries: Vec::new(),
            current: None,
            annotations: Vec::new(),
            pending_conflict: None,
            instructions: Vec::new(),
            last_failure: None,
            stats: SessionStats::default(),
            running_cb: StateSnapshot::empty(),
            ending_accepted: false,
            document: None,
            next_seq: 1,
        })
    }

    /// Apply one event. On error the session is unchanged.
    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), SessionError> {
        if event.seq != self.next_seq {
            return Err(SessionError::EventSeq {
                expected: self.next_seq,
                found: event.seq,
            });
        }
        let mut next = self.clone();
        next.apply_kind(event.seq, &event.kind)?;
        next.next_seq += 1;
        *self = next;
        Ok(())
    }

    /// Committed turns followed by the proposal's turns.
    pub fn all_turns(&self) -> Vec<Turn> {
        let mut turns = self.history.clone();
        if let Some(p) = &self.current {
            turns.extend(p.turns.iter().cloned());
        }
        turns
    }

    pub fn turn(&self, index: usize) -> Option<&Turn> {
        let h = self.history.len();
        if (1..=h).contains(&index) {
            self.history.get(index - 1)
        } else {
            self.current.as_ref().and_then(|p| p.turns.get(index.checked_sub(h + 1)?))
        }
    }

    /// Turns generated but neither committed nor discarded yet.
    pub fn pending_turns(&self) -> usize {
        self.current.as_ref().map_or(0, |p| p.turns.len())
    }

    fn proposal_has_annotations(&self) -> bool {
        let h = self.history.len();
        self.annotations.iter().any(|a| a.turn_index > h)
    }

    fn phase_error(&self, action: &'static str) -> SessionError {
        SessionError::WrongPhase {
            action,
            phase: self.phase,
        }
    }

    fn no_pending_conflict(&self) -> Result<(), SessionError> {
        match &self.pending_conflict {
            Some(c) => Err(SessionError::ConflictPending(c.id)),
            None => Ok(()),
        }
    }

    pub fn check_story(&self) -> Result<(), SessionError> {
        if self.phase != Phase::DraftingStory {
            return Err(self.phase_error("setting the story"));
        }
        Ok(())
    }

    pub fn check_propose(&self) -> Result<(), SessionError> {
        if !matches!(self.phase, Phase::Generating | Phase::Reviewing) {
            return Err(self.phase_error("proposing a subdialogue"));
        }
        self.no_pending_conflict()?;
        if self.proposal_has_annotations() {
            return Err(SessionError::FrozenByAnnotations);
        }
        Ok(())
    }

    fn check_mutable_proposal(&self, action: &'static str) -> Result<&Proposal, SessionError> {
        if !matches!(self.phase, Phase::Reviewing | Phase::Annotating | Phase::EndingProposed) {
            return Err(self.phase_error(action));
        }
        self.no_pending_conflict()?;
        let p = self.current.as_ref().ok_or(SessionError::NoProposal)?;
        if self.proposal_has_annotations() {
            return Err(SessionError::FrozenByAnnotations);
        }
        Ok(p)
    }

    /// Validate a regeneration starting at `from_turn` (the whole proposal
    /// when `None`) and return how many leading turns are kept.
    pub fn check_regenerate(&self, from_turn: Option<usize>) -> Result<usize, SessionError> {
        let p = self.check_mutable_proposal("regenerating")?;
        match from_turn {
            None => Ok(0),
            Some(t) => {
                let first = self.history.len() + 1;
                if t < first || t >= first + p.turns.len() {
                    return Err(SessionError::NotInProposal(t));
                }
                Ok(t - first)
            }
        }
    }

    pub fn check_turn_change(&self, turn_index: usize) -> Result<usize, SessionError> {
        let p = self.check_mutable_proposal("changing a turn")?;
        let first = self.history.len() + 1;
        if turn_index == 0 || turn_index >= first + p.turns.len() {
            return Err(SessionError::UnknownTurn(turn_index));
        }
        if turn_index < first {
            return Err(SessionError::NotInProposal(turn_index));
        }
        Ok(turn_index - first)
    }

    pub fn check_annotate(&self) -> Result<(), SessionError> {
        if !self.config.annotation {
            return Err(SessionError::AnnotationDisabled);
        }
        if matches!(self.phase, Phase::DraftingStory | Phase::Completed) {
            return Err(self.phase_error("annotating"));
        }
        self.no_pending_conflict()
    }

    /// Structural checks on a span: the turn exists, the offsets fit, the
    /// span is not blank, and annotation order is kept.
    pub fn check_span(&self, a: &SpanAnnotation) -> Result<(), SessionError> {
        let turn = self.turn(a.turn_index).ok_or(SessionError::UnknownTurn(a.turn_index))?;
        let len = turn.char_len();
        let text = char_slice(&turn.text, a.char_start, a.char_end).ok_or(SessionError::BadOffsets {
            turn: a.turn_index,
            start: a.char_start,
            end: a.char_end,
            len,
        })?;
        if text.trim().is_empty() {
            return Err(SessionError::BlankSpan {
                turn: a.turn_index,
                start: a.char_start,
                end: a.char_end,
            });
        }
        if let Some(last) = self.annotations.last() {
            if a.turn_index < last.turn_index {
                return Err(SessionError::AnnotationOrder {
                    turn: a.turn_index,
                    last: last.turn_index,
                });
            }
        }
        Ok(())
    }

    /// Cumulative belief over all exchanges before the one containing `turn`.
    pub fn belief_before(&self, turn: usize) -> Result<StateSnapshot, StateError> {
        let turns = self.all_turns();
        let key = exchange_key(&turns, turn);
        let tlbs = exchange_tlbs(&turns, &self.annotations);
        Ok(replay_cb_sequence(&tlbs)?
            .into_iter()
            .take_while(|s| s.as_of_turn < key)
            .last()
            .unwrap_or_default())
    }

    /// Whether an annotation already in the exchange of `turn` touched the slot.
    pub fn touched_in_exchange(&self, turn: usize, referent: &str, domain: &str, slot: &str) -> bool {
        let turns = self.all_turns();
        let key = exchange_key(&turns, turn);
        self.annotations.iter().any(|a| {
            exchange_key(&turns, a.turn_index) == key
                && a.triplet.referent == referent
                && a.triplet.domain == domain
                && a.triplet.slot == slot
        })
    }

    fn derive_cb(&self) -> Result<StateSnapshot, StateError> {
        let tlbs = exchange_tlbs(&self.all_turns(), &self.annotations);
        Ok(replay_cb_sequence(&tlbs)?.pop().unwrap_or_default())
    }

    fn record_annotation(&mut self, a: SpanAnnotation) -> Result<(), SessionError> {
        self.check_span(&a)?;
        self.annotations.push(a);
        self.running_cb = self.derive_cb()?;
        if self.phase == Phase::Reviewing && self.proposal_has_annotations() {
            self.phase = Phase::Annotating;
        }
        Ok(())
    }

    fn refresh_cb(&mut self) -> Result<(), SessionError> {
        self.running_cb = self.derive_cb()?;
        Ok(())
    }

    /// Phase after the proposal changed.
    fn settle(&mut self) {
        let Some(p) = &self.current else { return };
        self.phase = if !p.ending_rejected && self.config.termination.detect(&p.turns) {
            Phase::EndingProposed
        } else if self.proposal_has_annotations() {
            Phase::Annotating
        } else {
            Phase::Reviewing
        };
    }

    fn check_numbering(&self, turns: &[Turn], first: usize) -> Result<(), SessionError> {
        for (position, t) in turns.iter().enumerate() {
            if t.index != first + position {
                return Err(SessionError::TurnNumbering {
                    position,
                    expected: first + position,
                    found: t.index,
                });
            }
            if t.text.trim().is_empty() {
                return Err(SessionError::EmptyText);
            }
        }
        Ok(())
    }

    fn commit_current(&mut self) {
        let Some(p) = self.current.take() else { return };
        if p.turns.is_empty() {
            return;
        }
        self.stats.subdialogues += 1;
        self.stats.committed_turns += p.turns.len();
        self.stats.edited_turns += p.edited.iter().filter(|e| **e).count();
        self.history.extend(p.turns);
        self.close_boundary();
    }

    fn close_boundary(&mut self) {
        let start = self.boundaries.last().map_or(1, |b| b.end + 1);
        if self.history.len() >= start {
            self.boundaries.push(Boundary {
                start,
                end: self.history.len(),
            });
        }
    }

    fn apply_kind(&mut self, seq: u64, kind: &EventKind) -> Result<(), SessionError> {
        match kind {
            EventKind::SessionCreated { .. } => return Err(SessionError::Creation),
            EventKind::StorySet { story, .. } => {
                self.check_story()?;
                if story.trim().is_empty() {
                    return Err(SessionError::EmptyStory);
                }
                self.scenario.story = Some(story.clone());
                self.phase = Phase::Generating;
            }
            EventKind::InstructionAdded { instruction } => {
                if matches!(self.phase, Phase::DraftingStory | Phase::Completed) {
                    return Err(self.phase_error("adding an instruction"));
                }
                if instruction.trim().is_empty() {
                    return Err(SessionError::EmptyInstruction);
                }
                self.instructions.push(instruction.clone());
            }
            EventKind::SubdialogueProposed {
                turns,
                raw_text,
                instruction,
            } => {
                self.check_propose()?;
                if turns.is_empty() {
                    return Err(SessionError::EmptySubdialogue);
                }
                self.check_numbering(turns, self.history.len() + 1)?;
                if let Some(old) = &self.current {
                    self.stats.discarded_turns += old.turns.len();
                    self.stats.regenerations += 1;
                }
                self.stats.generated_turns += turns.len();
                self.current = Some(Proposal {
                    turns: turns.clone(),
                    edited: vec![false; turns.len()],
                    raw_text: raw_text.clone(),
                    instruction: instruction.clone(),
                    ending_rejected: false,
                });
                self.last_failure = None;
                self.phase = Phase::Reviewing;
                self.settle();
            }
            EventKind::Regenerated {
                keep,
                turns,
                raw_text,
                instruction,
            } => {
                let from = (*keep > 0).then(|| self.history.len() + 1 + keep);
                if self.check_regenerate(from)? != *keep {
                    return Err(SessionError::NotInProposal(self.history.len() + 1 + keep));
                }
                if turns.is_empty() {
                    return Err(SessionError::EmptySubdialogue);
                }
                self.check_numbering(turns, self.history.len() + 1 + keep)?;
                let p = self.current.as_mut().expect("checked");
                self.stats.discarded_turns += p.turns.len() - keep;
                self.stats.generated_turns += turns.len();
                self.stats.regenerations += 1;
                p.turns.truncate(*keep);
                p.edited.truncate(*keep);
                p.turns.extend(turns.iter().cloned());
                p.edited.extend(std::iter::repeat_n(false, turns.len()));
                p.raw_text = raw_text.clone();
                p.instruction = instruction.clone();
                p.ending_rejected = false;
                self.last_failure = None;
                self.settle();
            }
            EventKind::GenerationFailed { message, raw_text } => {
                if !matches!(self.phase, Phase::Generating | Phase::Reviewing | Phase::EndingProposed) {
                    return Err(self.phase_error("recording a generation failure"));
                }
                self.last_failure = Some(GenerationFailure {
                    message: message.clone(),
                    raw_text: raw_text.clone(),
                });
            }
            EventKind::TurnEdited { turn_index, text } => {
                let pos = self.check_turn_change(*turn_index)?;
                let text = text.trim();
                if text.is_empty() {
                    return Err(SessionError::EmptyText);
                }
                let p = self.current.as_mut().expect("checked");
                if p.turns[pos].text != text {
                    p.turns[pos].text = text.to_string();
                    p.edited[pos] = true;
                }
                self.settle();
            }
            EventKind::TurnDeleted { turn_index } => {
                let pos = self.check_turn_change(*turn_index)?;
                let first = self.history.len() + 1;
                let p = self.current.as_mut().expect("checked");
                p.turns.remove(pos);
                p.edited.remove(pos);
                for (i, t) in p.turns.iter_mut().enumerate() {
                    t.index = first + i;
                }
                self.stats.deleted_turns += 1;
                self.settle();
            }
            EventKind::SpanAnnotated { annotation } => {
                self.check_annotate()?;
                self.record_annotation(annotation.clone())?;
            }
            EventKind::ConflictRaised { annotation, existing } => {
                self.check_annotate()?;
                self.check_span(annotation)?;
                self.pending_conflict = Some(ConflictPrompt {
                    id: seq,
                    referent: annotation.triplet.referent.clone(),
                    domain: annotation.triplet.domain.clone(),
                    slot: annotation.triplet.slot.clone(),
                    existing: existing.clone(),
                    incoming: annotation.clone(),
                    allowed: vec![Resolution::Update, Resolution::Keep, Resolution::Concat],
                });
            }
            EventKind::ConflictResolved {
                conflict_id,
                resolution,
                prior,
            } => {
                let pending = self.take_conflict(*conflict_id)?;
                let mut a = pending.incoming;
                a.resolution = Some(*resolution);
                a.prior = prior.clone();
                self.record_annotation(a)?;
            }
            EventKind::ConflictCancelled { conflict_id } => {
                self.take_conflict(*conflict_id)?;
            }
            EventKind::AnnotationRemoved => {
                if self.phase == Phase::Completed {
                    return Err(self.phase_error("removing an annotation"));
                }
                self.no_pending_conflict()?;
                self.annotations.pop().ok_or(SessionError::NothingToUndo)?;
                self.refresh_cb()?;
                if self.phase == Phase::Annotating {
                    self.settle();
                }
            }
            EventKind::SubdialogueCommitted => {
                if !matches!(self.phase, Phase::Reviewing | Phase::Annotating) {
                    return Err(self.phase_error("committing"));
                }
                self.no_pending_conflict()?;
                let p = self.current.as_ref().ok_or(SessionError::NoProposal)?;
                if p.turns.is_empty() {
                    return Err(SessionError::EmptySubdialogue);
                }
                self.commit_current();
                self.phase = Phase::Generating;
            }
            EventKind::EndingRejected => {
                if self.phase != Phase::EndingProposed {
                    return Err(self.phase_error("rejecting the ending"));
                }
                self.current.as_mut().expect("an ending is proposed by a proposal").ending_rejected = true;
                self.settle();
            }
            EventKind::EndingAccepted => {
                if self.phase != Phase::EndingProposed {
                    return Err(self.phase_error("accepting the ending"));
                }
                self.no_pending_conflict()?;
                self.ending_accepted = true;
            }
            EventKind::Completed { forced } => {
                if matches!(self.phase, Phase::DraftingStory | Phase::Completed) {
                    return Err(self.phase_error("completing"));
                }
                self.no_pending_conflict()?;
                if !forced && !self.ending_accepted {
                    return Err(SessionError::EndingNotAccepted);
                }
                self.commit_current();
                self.close_boundary();
                let mut doc = DialogueDocument::assemble(
                    self.id.clone(),
                    self.scenario.clone(),
                    self.history.clone(),
                    self.boundaries.clone(),
                    self.annotations.clone(),
                    Some(self.stats.clone()),
                )?;
                doc.annotator = self.config.annotator.clone();
                self.running_cb = doc.final_cb.clone();
                self.document = Some(doc);
                self.phase = Phase::Completed;
            }
        }
        Ok(())
    }

    fn take_conflict(&mut self, id: u64) -> Result<ConflictPrompt, SessionError> {
        match self.pending_conflict.take() {
            None => Err(SessionError::NoConflict),
            Some(c) if c.id != id => {
                let pending = c.id;
                self.pending_conflict = Some(c);
                Err(SessionError::StaleConflict { given: id, pending })
            }
            Some(c) => Ok(c),
        }
    }
}
