//! Reviewer actions. Each action validates its input against the ontology,
//! calls the language model when it needs text, and turns the result into
//! events. Actions are atomic: on error the session is left untouched.

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use parley_core::dialogue::{parse_subdialogue, Turn};
use parley_core::document::{char_slice, DialogueDocument, SpanAnnotation};
use parley_core::ontology::{Ontology, Triplet};
use parley_core::prompt::{build_generation_prompt, build_story_prompt, ScenarioSpec, FORMAT_REMINDER};
use parley_core::state::Resolution;
use parley_core::text;
use parley_lm::{CompletionRequest, LmClient};

use crate::session::{ConflictPrompt, EventKind, GenerationFailure, Session, SessionConfig, SessionEvent};
use crate::SessionError;

/// Source of event timestamps, in milliseconds since the Unix epoch.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    })
}

/// A span to label. `value` defaults to the trimmed span text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotateRequest {
    pub turn_index: usize,
    pub char_start: usize,
    pub char_end: usize,
    pub referent: String,
    pub domain: String,
    pub slot: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    SetStory {
        story: String,
    },
    GenerateStory,
    Propose {
        #[serde(default)]
        instruction: Option<String>,
    },
    /// Regenerate the proposal from `from_turn` on, or entirely when absent.
    Regenerate {
        #[serde(default)]
        from_turn: Option<usize>,
        #[serde(default)]
        instruction: Option<String>,
    },
    EditTurn {
        turn_index: usize,
        text: String,
    },
    DeleteTurn {
        turn_index: usize,
    },
    Annotate(AnnotateRequest),
    ResolveConflict {
        conflict_id: u64,
        resolution: Resolution,
        #[serde(default)]
        prior: Option<String>,
    },
    CancelConflict {
        conflict_id: u64,
    },
    RemoveLastAnnotation,
    Commit,
    AcceptEnding,
    RejectEnding,
    /// Complete the session. Without `force` the ending must be proposed.
    Complete {
        #[serde(default)]
        force: bool,
    },
}

impl Action {
    /// Whether performing the action calls the language model.
    pub fn uses_lm(&self) -> bool {
        matches!(self, Action::GenerateStory | Action::Propose { .. } | Action::Regenerate { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Reply {
    Applied,
    Conflict(ConflictPrompt),
    GenerationFailed(GenerationFailure),
    Completed(Box<DialogueDocument>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub events: Vec<SessionEvent>,
    pub reply: Reply,
}

enum Generated {
    Turns { turns: Vec<Turn>, raw_text: String },
    Failed(GenerationFailure),
}

/// Runs reviewer actions against sessions.
#[derive(Clone)]
pub struct Orchestrator {
    ontology: Arc<Ontology>,
    lm: LmClient,
    clock: Clock,
}

impl std::fmt::Debug for Orchestrator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Orchestrator").field("lm", &self.lm).finish()
    }
}

struct Draft {
    session: Session,
    events: Vec<SessionEvent>,
}

impl Draft {
    fn emit(&mut self, clock: &Clock, kind: EventKind) -> Result<(), SessionError> {
        let event = SessionEvent {
            seq: self.session.next_seq,
            timestamp_ms: clock(),
            kind,
        };
        self.session.apply(&event)?;
        self.events.push(event);
        Ok(())
    }
}

impl Orchestrator {
    pub fn new(ontology: Arc<Ontology>, lm: LmClient) -> Self {
        Orchestrator {
            ontology,
            lm,
            clock: system_clock(),
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn ontology(&self) -> &Ontology {
        &self.ontology
    }

    /// Validate the scenario and open a session.
    pub fn create(
        &self,
        id: impl Into<String>,
        scenario: ScenarioSpec,
        config: SessionConfig,
    ) -> Result<(Session, SessionEvent), SessionError> {
        scenario.validate(&self.ontology)?;
        if scenario.story.as_deref().is_some_and(|s| s.trim().is_empty()) {
            return Err(SessionError::EmptyStory);
        }
        config.lm.validate()?;
        let event = SessionEvent {
            seq: 0,
            timestamp_ms: (self.clock)(),
            kind: EventKind::SessionCreated {
                id: id.into(),
                scenario,
                config,
            },
        };
        Ok((Session::from_created(&event)?, event))
    }

    /// Run one action. On success the session has absorbed the returned events.
    pub fn perform(&self, session: &mut Session, action: &Action) -> Result<Outcome, SessionError> {
        let mut draft = Draft {
            session: session.clone(),
            events: Vec::new(),
        };
        let reply = self.run(&mut draft, action)?;
        *session = draft.session;
        Ok(Outcome {
            events: draft.events,
            reply,
        })
    }

    fn run(&self, d: &mut Draft, action: &Action) -> Result<Reply, SessionError> {
        let clock = &self.clock;
        match action {
            Action::SetStory { story } => {
                d.emit(
                    clock,
                    EventKind::StorySet {
                        story: story.trim().to_string(),
                        generated: false,
                    },
                )?;
            }
            Action::GenerateStory => {
                d.session.check_story()?;
                let bundle = build_story_prompt(&d.session.scenario, &d.session.config.prompt)?;
                let request = CompletionRequest::new(bundle.render(), d.session.config.lm.clone());
                let result = self.lm.complete(&request)?;
                d.emit(
                    clock,
                    EventKind::StorySet {
                        story: result.text.trim().to_string(),
                        generated: true,
                    },
                )?;
            }
            Action::Propose { instruction } => {
                d.session.check_propose()?;
                let instruction = self.record_instruction(d, instruction.as_deref())?;
                let history = d.session.history.clone();
                match self.generate(&d.session, &history, instruction.as_deref())? {
                    Generated::Turns { turns, raw_text } => d.emit(
                        clock,
                        EventKind::SubdialogueProposed {
                            turns,
                            raw_text,
                            instruction,
                        },
                    )?,
                    Generated::Failed(f) => return self.failed(d, f),
                }
            }
            Action::Regenerate { from_turn, instruction } => {
                let keep = d.session.check_regenerate(*from_turn)?;
                let instruction = self.record_instruction(d, instruction.as_deref())?;
                let mut history = d.session.history.clone();
                if let Some(p) = &d.session.current {
                    history.extend(p.turns[..keep].iter().cloned());
                }
                match self.generate(&d.session, &history, instruction.as_deref())? {
                    Generated::Turns { turns, raw_text } => d.emit(
                        clock,
                        EventKind::Regenerated {
                            keep,
                            turns,
                            raw_text,
                            instruction,
                        },
                    )?,
                    Generated::Failed(f) => return self.failed(d, f),
                }
            }
            Action::EditTurn { turn_index, text } => d.emit(
                clock,
                EventKind::TurnEdited {
                    turn_index: *turn_index,
                    text: text.clone(),
                },
            )?,
            Action::DeleteTurn { turn_index } => d.emit(
                clock,
                EventKind::TurnDeleted {
                    turn_index: *turn_index,
                },
            )?,
            Action::Annotate(req) => return self.annotate(d, req),
            Action::ResolveConflict {
                conflict_id,
                resolution,
                prior,
            } => d.emit(
                clock,
                EventKind::ConflictResolved {
                    conflict_id: *conflict_id,
                    resolution: *resolution,
                    prior: prior.clone(),
                },
            )?,
            Action::CancelConflict { conflict_id } => d.emit(
                clock,
                EventKind::ConflictCancelled {
                    conflict_id: *conflict_id,
                },
            )?,
            Action::RemoveLastAnnotation => d.emit(clock, EventKind::AnnotationRemoved)?,
            Action::Commit => d.emit(clock, EventKind::SubdialogueCommitted)?,
            Action::RejectEnding => d.emit(clock, EventKind::EndingRejected)?,
            Action::AcceptEnding => return self.complete(d, false),
            Action::Complete { force } => return self.complete(d, *force),
        }
        Ok(Reply::Applied)
    }

    fn complete(&self, d: &mut Draft, force: bool) -> Result<Reply, SessionError> {
        let clock = &self.clock;
        if d.session.phase == crate::Phase::EndingProposed && !d.session.ending_accepted {
            d.emit(clock, EventKind::EndingAccepted)?;
            d.emit(clock, EventKind::Completed { forced: false })?;
        } else {
            d.emit(clock, EventKind::Completed { forced: force })?;
        }
        let doc = d.session.document.clone().expect("completed sessions carry a document");
        Ok(Reply::Completed(Box::new(doc)))
    }

    fn failed(&self, d: &mut Draft, failure: GenerationFailure) -> Result<Reply, SessionError> {
        tracing::warn!(session = %d.session.id, error = %failure.message, "subdialogue could not be parsed");
        d.emit(
            &self.clock,
            EventKind::GenerationFailed {
                message: failure.message.clone(),
                raw_text: failure.raw_text.clone(),
            },
        )?;
        Ok(Reply::GenerationFailed(failure))
    }

    fn record_instruction(&self, d: &mut Draft, instruction: Option<&str>) -> Result<Option<String>, SessionError> {
        match instruction.map(str::trim).filter(|s| !s.is_empty()) {
            Some(i) => {
                d.emit(
                    &self.clock,
                    EventKind::InstructionAdded {
                        instruction: i.to_string(),
                    },
                )?;
                Ok(Some(i.to_string()))
            }
            None => Ok(None),
        }
    }

    /// Ask for a continuation of `history`, retrying once with a format
    /// reminder when the reply does not parse.
    fn generate(&self, s: &Session, history: &[Turn], instruction: Option<&str>) -> Result<Generated, SessionError> {
        let first = history.len() + 1;
        let mut raw = Vec::new();
        let reminder = match instruction {
            Some(i) => format!("{i}\n{FORMAT_REMINDER}"),
            None => FORMAT_REMINDER.to_string(),
        };
        let mut last_error = String::new();
        for attempt_instruction in [instruction, Some(reminder.as_str())] {
            let bundle = build_generation_prompt(&s.scenario, history, attempt_instruction, &s.config.prompt)?;
            let request = CompletionRequest::new(bundle.render(), s.config.lm.clone());
            let result = self.lm.complete(&request)?;
            match parse_subdialogue(&result.text, &s.scenario.roles) {
                Ok(sub) => {
                    let turns = sub
                        .turns
                        .into_iter()
                        .map(|t| Turn::new(first + t.index - 1, t.speaker, t.text))
                        .collect();
                    return Ok(Generated::Turns {
                        turns,
                        raw_text: result.text,
                    });
                }
                Err(e) => {
                    tracing::debug!(session = %s.id, error = %e, "unparsable proposal");
                    last_error = e.to_string();
                    raw.push(result.text);
                }
            }
        }
        Ok(Generated::Failed(GenerationFailure {
            message: last_error,
            raw_text: raw,
        }))
    }

    fn annotate(&self, d: &mut Draft, req: &AnnotateRequest) -> Result<Reply, SessionError> {
        let s = &d.session;
        s.check_annotate()?;
        let turn = s.turn(req.turn_index).ok_or(SessionError::UnknownTurn(req.turn_index))?;
        let span = char_slice(&turn.text, req.char_start, req.char_end).ok_or(SessionError::BadOffsets {
            turn: req.turn_index,
            start: req.char_start,
            end: req.char_end,
            len: turn.char_len(),
        })?;
        if span.trim().is_empty() {
            return Err(SessionError::BlankSpan {
                turn: req.turn_index,
                start: req.char_start,
                end: req.char_end,
            });
        }
        let value = req.value.as_deref().unwrap_or(span);
        let mut triplet = Triplet::new(&req.referent, &req.domain, &req.slot, text::collapse_whitespace(value.trim()));
        self.ontology.validate_triplet(&triplet)?;
        if let Some(canonical) = self
            .ontology
            .slot(&req.domain, &req.slot)
            .filter(|def| !def.is_free_form())
            .and_then(|def| def.permissible(&triplet.value))
        {
            triplet.value = canonical.to_string();
        }
        let annotation = SpanAnnotation {
            turn_index: req.turn_index,
            char_start: req.char_start,
            char_end: req.char_end,
            triplet,
            resolution: req.resolution,
            prior: req.prior.clone(),
        };
        s.check_span(&annotation)?;
        if annotation.resolution.is_none() {
            let t = &annotation.triplet;
            let before = s.belief_before(annotation.turn_index)?;
            let existing = before.entries.get(&t.referent, &t.domain, &t.slot).unwrap_or(&[]);
            let differs = !existing.is_empty() && !existing.iter().any(|v| text::same_value(v, &t.value));
            if differs && !s.touched_in_exchange(annotation.turn_index, &t.referent, &t.domain, &t.slot) {
                let existing = existing.to_vec();
                d.emit(&self.clock, EventKind::ConflictRaised { annotation, existing })?;
                let prompt = d.session.pending_conflict.clone().expect("conflict just raised");
                return Ok(Reply::Conflict(prompt));
            }
        }
        d.emit(&self.clock, EventKind::SpanAnnotated { annotation })?;
        Ok(Reply::Applied)
    }
}
