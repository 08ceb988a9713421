//! Training records for edit-operation state tracking.
//!
//! One record per user turn: the exchange text, the previous cumulative belief
//! restricted to recently introduced triplets, and the gold edit commands that
//! turn the previous belief into the current one.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dialogue::{Speaker, Turn};
use crate::document::DialogueDocument;
use crate::ontology::Triplet;
use crate::state::{diff, EditOp, StateChangeCommand, StateError, StateSnapshot};
use crate::text;

/// How the recency window is counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowUnit {
    Turns,
    Exchanges,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScConfig {
    pub k: usize,
    pub unit: WindowUnit,
    /// Emit `[same]` for unchanged triplets visible in the previous state.
    pub emit_same: bool,
}

impl Default for ScConfig {
    fn default() -> Self {
        ScConfig {
            k: 18,
            unit: WindowUnit::Turns,
            emit_same: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScRecord {
    pub dialogue_id: String,
    pub turn_index: usize,
    /// The agent turns of the exchange followed by its user turn.
    pub context_turns: Vec<Turn>,
    pub prev_state: Vec<Triplet>,
    pub commands: Vec<StateChangeCommand>,
}

type TripletKey = (String, String, String, String);

fn key(t: &Triplet) -> TripletKey {
    (
        t.referent.clone(),
        t.domain.clone(),
        t.slot.clone(),
        text::normalize(&t.value),
    )
}

pub fn build_state_change_examples(
    doc: &DialogueDocument,
    config: &ScConfig,
) -> Result<Vec<ScRecord>, StateError> {
    let cbs = doc.cb_sequence()?;
    let keys = doc.exchange_keys();
    let mut first_seen: BTreeMap<TripletKey, (usize, usize)> = BTreeMap::new();
    let mut prev = StateSnapshot::empty();
    let mut out = Vec::new();
    let mut exchange_start = 1;
    for (ordinal, (cb, &t)) in cbs.iter().zip(&keys).enumerate() {
        let is_user_turn = doc.turn(t).is_some_and(|x| x.speaker == Speaker::User);
        if is_user_turn {
            let visible: Vec<Triplet> = prev
                .entries
                .triplets()
                .into_iter()
                .filter(|tr| {
                    let (turn, exch) = first_seen[&key(tr)];
                    match config.unit {
                        WindowUnit::Turns => turn + config.k >= exchange_start,
                        WindowUnit::Exchanges => exch + config.k >= ordinal,
                    }
                })
                .collect();
            let visible_keys: std::collections::BTreeSet<TripletKey> = visible.iter().map(key).collect();
            let commands = diff(&prev, cb)
                .into_iter()
                .filter(|c| {
                    c.op != EditOp::Same || (config.emit_same && visible_keys.contains(&key(&c.triplet())))
                })
                .collect();
            out.push(ScRecord {
                dialogue_id: doc.id.clone(),
                turn_index: t,
                context_turns: doc.turns[exchange_start - 1..t].to_vec(),
                prev_state: visible,
                commands,
            });
        }
        for tr in cb.entries.triplets() {
            first_seen.entry(key(&tr)).or_insert((t, ordinal));
        }
        prev = cb.clone();
        exchange_start = t + 1;
    }
    Ok(out)
}

/// One JSON object per line.
pub fn to_jsonl(records: &[ScRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("records serialize"));
        out.push('\n');
    }
    out
}
