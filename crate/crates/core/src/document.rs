//! Completed, labeled dialogues and the per-exchange belief derivation.
//!
//! Beliefs are tracked per exchange: an exchange is a run of agent turns
//! followed by one user turn, and is keyed by that user turn's index. Agent
//! turns after the last user turn form a final exchange keyed by `T`.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dialogue::{Speaker, Turn};
use crate::ontology::{Ontology, Triplet, TripletError};
use crate::prompt::ScenarioSpec;
use crate::state::{replay_cb_sequence, Resolution, StateError, StateSnapshot, TurnUpdate};

pub const DOCUMENT_VERSION: u32 = 1;

/// A labeled character span linked to a triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanAnnotation {
    pub turn_index: usize,
    /// Character (not byte) offsets into the turn text, half-open.
    pub char_start: usize,
    pub char_end: usize,
    pub triplet: Triplet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<Resolution>,
    /// The prior value targeted by `update` or `concat`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<String>,
}

impl SpanAnnotation {
    pub fn new(turn_index: usize, char_start: usize, char_end: usize, triplet: Triplet) -> Self {
        SpanAnnotation {
            turn_index,
            char_start,
            char_end,
            triplet,
            resolution: None,
            prior: None,
        }
    }

    /// The covered text, if the offsets are in range.
    pub fn span_text<'a>(&self, turn: &'a Turn) -> Option<&'a str> {
        char_slice(&turn.text, self.char_start, self.char_end)
    }
}

pub fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start >= end {
        return None;
    }
    let byte_at = |c: usize| {
        s.char_indices()
            .map(|(b, _)| b)
            .chain(std::iter::once(s.len()))
            .nth(c)
    };
    Some(&s[byte_at(start)?..byte_at(end)?])
}

/// Inclusive 1-based turn range of one committed subdialogue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundary {
    pub start: usize,
    pub end: usize,
}

impl Boundary {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn contains(&self, turn: usize) -> bool {
        (self.start..=self.end).contains(&turn)
    }
}

/// Reviewer-effort counters collected during a session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionStats {
    pub subdialogues: usize,
    /// Turns produced by the LM, across all proposals.
    pub generated_turns: usize,
    /// Distinct generated turns whose text a reviewer changed.
    pub edited_turns: usize,
    pub deleted_turns: usize,
    /// Turns dropped because their proposal was regenerated.
    pub discarded_turns: usize,
    /// Turns committed from LM proposals (the initial exchange is excluded).
    pub committed_turns: usize,
    pub regenerations: usize,
}

impl SessionStats {
    pub fn edited_fraction(&self) -> f64 {
        ratio(self.edited_turns, self.committed_turns)
    }

    pub fn deleted_fraction(&self) -> f64 {
        ratio(self.deleted_turns, self.generated_turns)
    }

    /// Every generated turn is accounted for exactly once, given the number of
    /// turns still in an uncommitted proposal.
    pub fn is_consistent(&self, pending_turns: usize) -> bool {
        self.generated_turns
            == self.committed_turns + self.deleted_turns + self.discarded_turns + pending_turns
            && self.edited_turns <= self.committed_turns + pending_turns
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueDocument {
    pub version: u32,
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
    pub scenario: ScenarioSpec,
    pub turns: Vec<Turn>,
    pub subdialogue_boundaries: Vec<Boundary>,
    pub annotations: Vec<SpanAnnotation>,
    pub final_cb: StateSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<SessionStats>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DocumentViolation {
    NoTurns,
    TurnIndex { position: usize, found: usize },
    EmptyTurn(usize),
    Boundaries(String),
    AnnotationTurn { annotation: usize, turn: usize },
    AnnotationOffsets { annotation: usize, start: usize, end: usize, len: usize },
    AnnotationOrder { annotation: usize },
    AnnotationTriplet { annotation: usize, error: TripletError },
    Derivation(StateError),
    FinalCbMismatch,
}

impl fmt::Display for DocumentViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DocumentViolation::NoTurns => write!(f, "document has no turns"),
            DocumentViolation::TurnIndex { position, found } => {
                write!(f, "turn at position {position} has index {found}, expected {}", position + 1)
            }
            DocumentViolation::EmptyTurn(i) => write!(f, "turn {i} is empty"),
            DocumentViolation::Boundaries(m) => write!(f, "subdialogue boundaries: {m}"),
            DocumentViolation::AnnotationTurn { annotation, turn } => {
                write!(f, "annotation {annotation} references missing turn {turn}")
            }
            DocumentViolation::AnnotationOffsets {
                annotation,
                start,
                end,
                len,
            } => write!(
                f,
                "annotation {annotation} span {start}..{end} is invalid for a turn of {len} characters"
            ),
            DocumentViolation::AnnotationOrder { annotation } => {
                write!(f, "annotation {annotation} precedes the turn of the annotation before it")
            }
            DocumentViolation::AnnotationTriplet { annotation, error } => {
                write!(f, "annotation {annotation}: {error}")
            }
            DocumentViolation::Derivation(e) => write!(f, "belief derivation failed: {e}"),
            DocumentViolation::FinalCbMismatch => {
                write!(f, "final_cb does not match the belief derived from the annotations")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid document {id}: {}", .violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
pub struct DocumentError {
    pub id: String,
    pub violations: Vec<DocumentViolation>,
}

impl DialogueDocument {
    /// Build a document, deriving `final_cb` from the annotations.
    pub fn assemble(
        id: impl Into<String>,
        scenario: ScenarioSpec,
        turns: Vec<Turn>,
        subdialogue_boundaries: Vec<Boundary>,
        annotations: Vec<SpanAnnotation>,
        stats: Option<SessionStats>,
    ) -> Result<Self, StateError> {
        let mut doc = DialogueDocument {
            version: DOCUMENT_VERSION,
            id: id.into(),
            annotator: None,
            scenario,
            turns,
            subdialogue_boundaries,
            annotations,
            final_cb: StateSnapshot::empty(),
            stats,
        };
        doc.final_cb = doc.derive_final_cb()?;
        Ok(doc)
    }

    pub fn turn(&self, index: usize) -> Option<&Turn> {
        index.checked_sub(1).and_then(|i| self.turns.get(i))
    }

    /// `T`, the number of turns.
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    /// The exchange a turn belongs to: the first user turn at or after it,
    /// or `T` for trailing agent turns.
    pub fn exchange_key(&self, turn: usize) -> usize {
        exchange_key(&self.turns, turn)
    }

    /// Exchange keys in order.
    pub fn exchange_keys(&self) -> Vec<usize> {
        exchange_keys(&self.turns)
    }

    /// One turn-level belief per exchange (possibly empty), in order.
    pub fn tlbs(&self) -> Vec<TurnUpdate> {
        exchange_tlbs(&self.turns, &self.annotations)
    }

    /// Cumulative belief after each exchange.
    pub fn cb_sequence(&self) -> Result<Vec<StateSnapshot>, StateError> {
        replay_cb_sequence(&self.tlbs())
    }

    /// Recompute the final cumulative belief from the annotations.
    pub fn derive_final_cb(&self) -> Result<StateSnapshot, StateError> {
        Ok(self
            .cb_sequence()?
            .pop()
            .unwrap_or_default())
    }

    pub fn check(&self, ontology: &Ontology) -> Result<(), DocumentError> {
        let violations = self.violations(ontology);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(DocumentError {
                id: self.id.clone(),
                violations,
            })
        }
    }

    /// Every invariant violation, in a stable order.
    pub fn violations(&self, ontology: &Ontology) -> Vec<DocumentViolation> {
        let mut out = Vec::new();
        if self.turns.is_empty() {
            out.push(DocumentViolation::NoTurns);
        }
        for (pos, t) in self.turns.iter().enumerate() {
            if t.index != pos + 1 {
                out.push(DocumentViolation::TurnIndex {
                    position: pos,
                    found: t.index,
                });
            }
            if t.text.trim().is_empty() {
                out.push(DocumentViolation::EmptyTurn(t.index));
            }
        }
        if let Err(m) = check_partition(&self.subdialogue_boundaries, self.turns.len()) {
            out.push(DocumentViolation::Boundaries(m));
        }
        let mut last_turn = 0;
        for (i, a) in self.annotations.iter().enumerate() {
            match self.turn(a.turn_index) {
                None => out.push(DocumentViolation::AnnotationTurn {
                    annotation: i,
                    turn: a.turn_index,
                }),
                Some(turn) => {
                    let len = turn.char_len();
                    if a.char_start >= a.char_end || a.char_end > len {
                        out.push(DocumentViolation::AnnotationOffsets {
                            annotation: i,
                            start: a.char_start,
                            end: a.char_end,
                            len,
                        });
                    }
                }
            }
            if a.turn_index < last_turn {
                out.push(DocumentViolation::AnnotationOrder { annotation: i });
            }
            last_turn = last_turn.max(a.turn_index);
            if let Err(error) = ontology.validate_triplet(&a.triplet) {
                out.push(DocumentViolation::AnnotationTriplet { annotation: i, error });
            }
        }
        match self.derive_final_cb() {
            Ok(cb) => {
                if cb.entries != self.final_cb.entries {
                    out.push(DocumentViolation::FinalCbMismatch);
                }
            }
            Err(e) => out.push(DocumentViolation::Derivation(e)),
        }
        out
    }
}

/// Group annotations into one turn-level belief per exchange of `turns`,
/// keeping annotation order within each exchange.
pub fn exchange_tlbs(turns: &[Turn], annotations: &[SpanAnnotation]) -> Vec<TurnUpdate> {
    let mut by_key: BTreeMap<usize, TurnUpdate> = exchange_keys(turns)
        .into_iter()
        .map(|k| (k, TurnUpdate::new(k)))
        .collect();
    for a in annotations {
        if let Some(tlb) = by_key.get_mut(&exchange_key(turns, a.turn_index)) {
            tlb.push_with_prior(&a.triplet, a.resolution, a.prior.clone());
        }
    }
    by_key.into_values().collect()
}

/// The exchange containing `turn`: the first user turn at or after it, or
/// the last turn index when only agent turns follow.
pub fn exchange_key(turns: &[Turn], turn: usize) -> usize {
    turns
        .iter()
        .skip(turn.saturating_sub(1))
        .find(|t| t.speaker == Speaker::User)
        .map(|t| t.index)
        .unwrap_or(turns.len())
}

pub fn exchange_keys(turns: &[Turn]) -> Vec<usize> {
    let mut keys: Vec<usize> = turns
        .iter()
        .filter(|t| t.speaker == Speaker::User)
        .map(|t| t.index)
        .collect();
    if turns.last().is_some_and(|t| t.speaker == Speaker::Agent) {
        keys.push(turns.len());
    }
    keys
}

/// `Ok` iff the boundaries are contiguous, non-empty, and cover `1..=n`.
pub fn check_partition(boundaries: &[Boundary], n: usize) -> Result<(), String> {
    let mut next = 1;
    for b in boundaries {
        if b.start != next {
            return Err(format!("range {}..={} should start at turn {next}", b.start, b.end));
        }
        if b.is_empty() {
            return Err(format!("range {}..={} is empty", b.start, b.end));
        }
        next = b.end + 1;
    }
    if next != n + 1 {
        return Err(format!("ranges cover turns 1..{next} but the dialogue has {n} turns"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_slices() {
        assert_eq!(char_slice("héllo", 1, 3), Some("él"));
        assert_eq!(char_slice("héllo", 3, 5), Some("lo"));
        assert_eq!(char_slice("héllo", 3, 6), None);
        assert_eq!(char_slice("abc", 2, 2), None);
    }

    #[test]
    fn exchange_keys_cover_trailing_agent_turns() {
        let turns = vec![
            Turn::new(1, Speaker::Agent, "a"),
            Turn::new(2, Speaker::User, "b"),
            Turn::new(3, Speaker::Agent, "c"),
            Turn::new(4, Speaker::Agent, "d"),
            Turn::new(5, Speaker::User, "e"),
            Turn::new(6, Speaker::Agent, "f"),
        ];
        assert_eq!(exchange_keys(&turns), vec![2, 5, 6]);
        assert_eq!(exchange_key(&turns, 1), 2);
        assert_eq!(exchange_key(&turns, 3), 5);
        assert_eq!(exchange_key(&turns, 5), 5);
        assert_eq!(exchange_key(&turns, 6), 6);
    }

    #[test]
    fn partition_rules() {
        let b = |s, e| Boundary { start: s, end: e };
        assert!(check_partition(&[b(1, 4), b(5, 6)], 6).is_ok());
        assert!(check_partition(&[b(1, 4), b(6, 6)], 6).is_err());
        assert!(check_partition(&[b(1, 4)], 6).is_err());
        assert!(check_partition(&[], 0).is_ok());
    }

    #[test]
    fn stats_consistency() {
        let s = SessionStats {
            subdialogues: 2,
            generated_turns: 10,
            edited_turns: 3,
            deleted_turns: 2,
            discarded_turns: 4,
            committed_turns: 4,
            regenerations: 1,
        };
        assert!(s.is_consistent(0));
        assert!(!s.is_consistent(1));
        assert!((s.deleted_fraction() - 0.2).abs() < 1e-12);
    }
}
