//! Entity-centric dialogue state.
//!
//! A belief state maps each referent to its active slot fills; a fill holds
//! one or more values. Turn-level beliefs ([`TurnUpdate`]) fold into the
//! cumulative belief ([`StateSnapshot`]) through [`apply_tlb`]. The same
//! transition can also be expressed as a list of [`StateChangeCommand`]s,
//! produced by [`diff`] and consumed by [`apply_state_change`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ontology::Triplet;
use crate::text;

/// `(domain, slot)`.
pub type SlotKey = (String, String);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotFill {
    pub domain: String,
    pub slot: String,
    pub values: Vec<String>,
}

/// Referent → slot fills. Values keep insertion order; equality ignores it.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, Vec<SlotFill>>", into = "BTreeMap<String, Vec<SlotFill>>")]
pub struct BeliefState {
    map: BTreeMap<String, BTreeMap<SlotKey, Vec<String>>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BeliefStateError {
    #[error("slot {domain}/{slot} appears twice for referent {referent:?}")]
    DuplicateSlot {
        referent: String,
        domain: String,
        slot: String,
    },
    #[error("slot {domain}/{slot} for referent {referent:?} has no values")]
    EmptyFill {
        referent: String,
        domain: String,
        slot: String,
    },
}

impl TryFrom<BTreeMap<String, Vec<SlotFill>>> for BeliefState {
    type Error = BeliefStateError;

    fn try_from(raw: BTreeMap<String, Vec<SlotFill>>) -> Result<Self, Self::Error> {
        let mut state = BeliefState::default();
        for (referent, fills) in raw {
            for fill in fills {
                let key = (fill.domain.clone(), fill.slot.clone());
                if state.get(&referent, &key.0, &key.1).is_some() {
                    return Err(BeliefStateError::DuplicateSlot {
                        referent,
                        domain: key.0,
                        slot: key.1,
                    });
                }
                let mut any = false;
                for v in &fill.values {
                    if !v.trim().is_empty() {
                        state.insert_value(&Triplet::new(&referent, &key.0, &key.1, v));
                        any = true;
                    }
                }
                if !any {
                    return Err(BeliefStateError::EmptyFill {
                        referent,
                        domain: key.0,
                        slot: key.1,
                    });
                }
            }
        }
        Ok(state)
    }
}

impl From<BeliefState> for BTreeMap<String, Vec<SlotFill>> {
    fn from(state: BeliefState) -> Self {
        state
            .map
            .into_iter()
            .map(|(referent, fills)| {
                let fills = fills
                    .into_iter()
                    .map(|((domain, slot), values)| SlotFill {
                        domain,
                        slot,
                        values,
                    })
                    .collect();
                (referent, fills)
            })
            .collect()
    }
}

impl PartialEq for BeliefState {
    fn eq(&self, other: &Self) -> bool {
        self.canonical() == other.canonical()
    }
}

impl Eq for BeliefState {}

impl BeliefState {
    pub fn new() -> Self {
        BeliefState::default()
    }

    pub fn from_triplets<'a>(triplets: impl IntoIterator<Item = &'a Triplet>) -> Self {
        let mut state = BeliefState::new();
        for t in triplets {
            state.insert_value(t);
        }
        state
    }

    /// Sorted, normalized view used for equality.
    fn canonical(&self) -> BTreeMap<&str, BTreeMap<&SlotKey, BTreeSet<String>>> {
        self.map
            .iter()
            .map(|(r, fills)| {
                let fills = fills
                    .iter()
                    .map(|(k, vs)| (k, vs.iter().map(|v| text::normalize(v)).collect()))
                    .collect();
                (r.as_str(), fills)
            })
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn referents(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    pub fn has_referent(&self, referent: &str) -> bool {
        self.map.contains_key(referent)
    }

    pub fn get(&self, referent: &str, domain: &str, slot: &str) -> Option<&[String]> {
        self.map
            .get(referent)?
            .get(&(domain.to_string(), slot.to_string()))
            .map(Vec::as_slice)
    }

    pub fn contains(&self, t: &Triplet) -> bool {
        self.get(&t.referent, &t.domain, &t.slot)
            .is_some_and(|vs| vs.iter().any(|v| text::same_value(v, &t.value)))
    }

    /// Slot fills of one referent, ordered by `(domain, slot)`.
    pub fn fills<'a>(&'a self, referent: &str) -> impl Iterator<Item = (&'a SlotKey, &'a [String])> + 'a {
        self.map
            .get(referent)
            .into_iter()
            .flat_map(|fills| fills.iter().map(|(k, vs)| (k, vs.as_slice())))
    }

    /// Every `(referent, slot key, values)` in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &SlotKey, &[String])> {
        self.map.iter().flat_map(|(r, fills)| {
            fills
                .iter()
                .map(move |(k, vs)| (r.as_str(), k, vs.as_slice()))
        })
    }

    /// All values as triplets, ordered by referent, domain, slot, then value.
    pub fn triplets(&self) -> Vec<Triplet> {
        let mut out: Vec<Triplet> = self
            .iter()
            .flat_map(|(r, (d, s), vs)| vs.iter().map(move |v| Triplet::new(r, d, s, v)))
            .collect();
        out.sort_by_cached_key(|t| {
            (
                t.referent.clone(),
                t.domain.clone(),
                t.slot.clone(),
                text::normalize(&t.value),
            )
        });
        out
    }

    /// Number of active `(referent, domain, slot)` fills.
    pub fn slot_count(&self) -> usize {
        self.map.values().map(BTreeMap::len).sum()
    }

    pub fn value_count(&self) -> usize {
        self.map
            .values()
            .flat_map(BTreeMap::values)
            .map(Vec::len)
            .sum()
    }

    pub fn has_multi_value(&self) -> bool {
        self.map
            .values()
            .flat_map(BTreeMap::values)
            .any(|vs| vs.len() >= 2)
    }

    fn values_mut(&mut self, referent: &str, domain: &str, slot: &str) -> Option<&mut Vec<String>> {
        self.map
            .get_mut(referent)?
            .get_mut(&(domain.to_string(), slot.to_string()))
    }

    /// Append a value; returns `false` when it was already present.
    pub fn insert_value(&mut self, t: &Triplet) -> bool {
        let values = self
            .map
            .entry(t.referent.clone())
            .or_default()
            .entry((t.domain.clone(), t.slot.clone()))
            .or_default();
        if values.iter().any(|v| text::same_value(v, &t.value)) {
            return false;
        }
        values.push(t.value.trim().to_string());
        true
    }

    /// Remove a value, dropping the fill and referent when they empty.
    pub fn remove_value(&mut self, t: &Triplet) -> bool {
        let Some(fills) = self.map.get_mut(&t.referent) else {
            return false;
        };
        let key = (t.domain.clone(), t.slot.clone());
        let Some(values) = fills.get_mut(&key) else {
            return false;
        };
        let before = values.len();
        values.retain(|v| !text::same_value(v, &t.value));
        let removed = values.len() != before;
        if values.is_empty() {
            fills.remove(&key);
        }
        if fills.is_empty() {
            self.map.remove(&t.referent);
        }
        removed
    }

    fn set_values(&mut self, referent: &str, key: &SlotKey, values: Vec<String>) {
        let fills = self.map.entry(referent.to_string()).or_default();
        if values.is_empty() {
            fills.remove(key);
            if fills.is_empty() {
                self.map.remove(referent);
            }
        } else {
            fills.insert(key.clone(), values);
        }
    }

    /// Restrict to the given referent.
    pub fn restrict_to(&self, referent: &str) -> BeliefState {
        let mut out = BeliefState::new();
        if let Some(f) = self.map.get(referent) {
            out.map.insert(referent.to_string(), f.clone());
        }
        out
    }
}

/// Cumulative belief after a turn.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub as_of_turn: usize,
    pub entries: BeliefState,
}

impl StateSnapshot {
    pub fn empty() -> Self {
        StateSnapshot::default()
    }
}

/// How an annotator reconciled a value with an existing fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Correction: the new value replaces the old one.
    Update,
    /// Additional value: the slot becomes multi-valued.
    Keep,
    /// Refinement: the new value extends the old one.
    Concat,
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resolution::Update => "update",
            Resolution::Keep => "keep",
            Resolution::Concat => "concat",
        })
    }
}

/// A resolution attached to one value of a turn update.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValueOp {
    pub referent: String,
    pub domain: String,
    pub slot: String,
    pub value: String,
    pub resolution: Resolution,
    /// The prior value being updated or extended. When absent, `update`
    /// replaces the whole value set and `concat` extends the latest value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<String>,
}

/// Turn-level belief.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnUpdate {
    pub turn_index: usize,
    pub entries: BeliefState,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ops: Vec<ValueOp>,
}

impl TurnUpdate {
    pub fn new(turn_index: usize) -> Self {
        TurnUpdate {
            turn_index,
            ..TurnUpdate::default()
        }
    }

    /// Add a value with an optional resolution.
    pub fn push(&mut self, t: &Triplet, resolution: Option<Resolution>) {
        self.push_with_prior(t, resolution, None);
    }

    pub fn push_with_prior(&mut self, t: &Triplet, resolution: Option<Resolution>, prior: Option<String>) {
        self.entries.insert_value(t);
        if let Some(resolution) = resolution {
            self.ops.retain(|op| !Self::op_matches(op, t));
            self.ops.push(ValueOp {
                referent: t.referent.clone(),
                domain: t.domain.clone(),
                slot: t.slot.clone(),
                value: t.value.clone(),
                resolution,
                prior,
            });
        }
    }

    pub fn with(mut self, t: Triplet, resolution: Option<Resolution>) -> Self {
        self.push(&t, resolution);
        self
    }

    fn op_matches(op: &ValueOp, t: &Triplet) -> bool {
        op.referent == t.referent
            && op.domain == t.domain
            && op.slot == t.slot
            && text::same_value(&op.value, &t.value)
    }

    pub fn op_for(&self, t: &Triplet) -> Option<&ValueOp> {
        self.ops.iter().find(|op| Self::op_matches(op, t))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StateError {
    #[error("turn {turn} does not follow the snapshot at turn {as_of}")]
    TurnOrder { turn: usize, as_of: usize },
    #[error("{resolution} given for {triplet} but no prior fill exists")]
    NoPriorFill {
        triplet: Triplet,
        resolution: Resolution,
    },
    #[error("prior value {prior:?} not found for {triplet}")]
    PriorNotFound { triplet: Triplet, prior: String },
    #[error("[{op}] on {triplet}, which is not in the state")]
    Absent { op: EditOp, triplet: Triplet },
    #[error("[new] on {0}, which is already in the state")]
    AlreadyPresent(Triplet),
    #[error("[concat] on {0} without a value to extend")]
    MissingConcatWith(Triplet),
}

/// Fold one turn-level belief into the cumulative belief.
///
/// Values are processed in order within each slot. A value without a
/// resolution creates a missing fill, is a no-op when already present, and
/// otherwise replaces the fill's prior values (values introduced earlier in the
/// same update are kept alongside it).
pub fn apply_tlb(prev: &StateSnapshot, tlb: &TurnUpdate) -> Result<StateSnapshot, StateError> {
    if tlb.turn_index <= prev.as_of_turn {
        return Err(StateError::TurnOrder {
            turn: tlb.turn_index,
            as_of: prev.as_of_turn,
        });
    }
    let mut state = prev.entries.clone();
    for (referent, key, values) in tlb.entries.iter() {
        let mut touched = false;
        for value in values {
            let t = Triplet::new(referent, &key.0, &key.1, value);
            let current = state.get(referent, &key.0, &key.1).map(<[String]>::to_vec);
            match (tlb.op_for(&t), current) {
                (Some(op), None) => {
                    return Err(StateError::NoPriorFill {
                        triplet: t,
                        resolution: op.resolution,
                    })
                }
                (None, None) => {
                    state.insert_value(&t);
                    touched = true;
                }
                (None, Some(vs)) => {
                    if vs.iter().any(|v| text::same_value(v, value)) {
                        continue;
                    }
                    if touched {
                        state.insert_value(&t);
                    } else {
                        state.set_values(referent, key, vec![value.trim().to_string()]);
                        touched = true;
                    }
                }
                (Some(op), Some(mut vs)) => {
                    match op.resolution {
                        Resolution::Keep => {
                            state.insert_value(&t);
                        }
                        Resolution::Update => {
                            match &op.prior {
                                Some(prior) => {
                                    let idx = vs
                                        .iter()
                                        .position(|v| text::same_value(v, prior))
                                        .ok_or_else(|| StateError::PriorNotFound {
                                            triplet: t.clone(),
                                            prior: prior.clone(),
                                        })?;
                                    vs[idx] = value.trim().to_string();
                                    dedupe(&mut vs);
                                }
                                None => vs = vec![value.trim().to_string()],
                            }
                            state.set_values(referent, key, vs);
                        }
                        Resolution::Concat => {
                            let idx = match &op.prior {
                                Some(prior) => vs
                                    .iter()
                                    .position(|v| text::same_value(v, prior))
                                    .ok_or_else(|| StateError::PriorNotFound {
                                        triplet: t.clone(),
                                        prior: prior.clone(),
                                    })?,
                                None => vs.len() - 1,
                            };
                            vs[idx] = join_values(&vs[idx], value);
                            dedupe(&mut vs);
                            state.set_values(referent, key, vs);
                        }
                    }
                    touched = true;
                }
            }
        }
    }
    Ok(StateSnapshot {
        as_of_turn: tlb.turn_index,
        entries: state,
    })
}

fn join_values(base: &str, extra: &str) -> String {
    format!("{} {}", base.trim(), extra.trim())
}

fn dedupe(values: &mut Vec<String>) {
    let mut seen = BTreeSet::new();
    values.retain(|v| seen.insert(text::normalize(v)));
}

/// Cumulative beliefs after each update, starting from the empty state.
pub fn replay_cb_sequence(tlbs: &[TurnUpdate]) -> Result<Vec<StateSnapshot>, StateError> {
    let mut out = Vec::with_capacity(tlbs.len());
    let mut current = StateSnapshot::empty();
    for tlb in tlbs {
        current = apply_tlb(&current, tlb)?;
        out.push(current.clone());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditOp {
    New,
    Same,
    Delete,
    Concat,
}

impl fmt::Display for EditOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditOp::New => "new",
            EditOp::Same => "same",
            EditOp::Delete => "delete",
            EditOp::Concat => "concat",
        })
    }
}

/// One edit operation on a referent-slot-value triplet.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateChangeCommand {
    pub op: EditOp,
    pub referent: String,
    pub domain: String,
    pub slot: String,
    pub value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concat_with: Option<String>,
}

impl StateChangeCommand {
    pub fn new(op: EditOp, t: &Triplet) -> Self {
        StateChangeCommand {
            op,
            referent: t.referent.clone(),
            domain: t.domain.clone(),
            slot: t.slot.clone(),
            value: t.value.clone(),
            concat_with: None,
        }
    }

    /// `[concat]`: replace `with` by `"{with} {suffix}"`.
    pub fn concat(t: &Triplet, with: impl Into<String>) -> Self {
        StateChangeCommand {
            concat_with: Some(with.into()),
            ..StateChangeCommand::new(EditOp::Concat, t)
        }
    }

    pub fn triplet(&self) -> Triplet {
        Triplet::new(&self.referent, &self.domain, &self.slot, &self.value)
    }

    fn sort_key(&self) -> (String, String, String, String, EditOp) {
        (
            self.referent.clone(),
            self.domain.clone(),
            self.slot.clone(),
            text::normalize(&self.value),
            self.op,
        )
    }
}

impl fmt::Display for StateChangeCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} | {} | {} | {} [{}]",
            self.referent, self.domain, self.slot, self.value, self.op
        )?;
        if let Some(with) = &self.concat_with {
            write!(f, " {with}")?;
        }
        Ok(())
    }
}

/// Apply edit commands in order. `as_of_turn` is carried over from `prev`.
pub fn apply_state_change(
    prev: &StateSnapshot,
    cmds: &[StateChangeCommand],
) -> Result<StateSnapshot, StateError> {
    let mut state = prev.entries.clone();
    for cmd in cmds {
        let t = cmd.triplet();
        match cmd.op {
            EditOp::New => {
                if !state.insert_value(&t) {
                    return Err(StateError::AlreadyPresent(t));
                }
            }
            EditOp::Same => {
                if !state.contains(&t) {
                    return Err(StateError::Absent { op: cmd.op, triplet: t });
                }
            }
            EditOp::Delete => {
                if !state.remove_value(&t) {
                    return Err(StateError::Absent { op: cmd.op, triplet: t });
                }
            }
            EditOp::Concat => {
                let with = cmd
                    .concat_with
                    .as_deref()
                    .ok_or_else(|| StateError::MissingConcatWith(t.clone()))?;
                let key = (cmd.domain.clone(), cmd.slot.clone());
                let target = Triplet::new(&cmd.referent, &cmd.domain, &cmd.slot, with);
                let joined = join_values(with, &cmd.value);
                let vs = state
                    .values_mut(&cmd.referent, &cmd.domain, &cmd.slot)
                    .ok_or_else(|| StateError::Absent {
                        op: cmd.op,
                        triplet: target.clone(),
                    })?;
                if vs.iter().any(|v| text::same_value(v, &joined)) {
                    return Err(StateError::AlreadyPresent(Triplet::new(
                        &cmd.referent,
                        &cmd.domain,
                        &cmd.slot,
                        joined,
                    )));
                }
                let idx = vs
                    .iter()
                    .position(|v| text::same_value(v, with))
                    .ok_or(StateError::Absent {
                        op: cmd.op,
                        triplet: target,
                    })?;
                let mut updated = vs.clone();
                updated[idx] = joined;
                state.set_values(&cmd.referent, &key, updated);
            }
        }
    }
    Ok(StateSnapshot {
        as_of_turn: prev.as_of_turn,
        entries: state,
    })
}

/// Minimal command list taking `prev` to `next`.
///
/// Values present in both states emit `[same]`. A value of `next` that extends
/// a dropped value of `prev` by whole words emits `[concat]`; the pairing is a
/// maximum matching, so the number of non-`[same]` commands is minimal.
/// Remaining values become `[new]` / `[delete]`. Output is sorted by
/// referent, domain, slot, then normalized value.
pub fn diff(prev: &StateSnapshot, next: &StateSnapshot) -> Vec<StateChangeCommand> {
    let mut keys: BTreeSet<(&str, &SlotKey)> = BTreeSet::new();
    for (r, k, _) in prev.entries.iter().chain(next.entries.iter()) {
        keys.insert((r, k));
    }
    let mut out = Vec::new();
    for (referent, key) in keys {
        let p = prev.entries.get(referent, &key.0, &key.1).unwrap_or_default();
        let n = next.entries.get(referent, &key.0, &key.1).unwrap_or_default();
        let in_other = |v: &String, other: &[String]| other.iter().any(|o| text::same_value(o, v));
        let t = |v: &str| Triplet::new(referent, &key.0, &key.1, v);

        for v in n.iter().filter(|v| in_other(v, p)) {
            out.push(StateChangeCommand::new(EditOp::Same, &t(v)));
        }
        let mut dropped: Vec<&String> = p.iter().filter(|v| !in_other(v, n)).collect();
        let mut added: Vec<&String> = n.iter().filter(|v| !in_other(v, p)).collect();
        dropped.sort_by_cached_key(|v| text::normalize(v));
        added.sort_by_cached_key(|v| text::normalize(v));

        let suffixes: Vec<Vec<Option<String>>> = added
            .iter()
            .map(|a| dropped.iter().map(|d| text::word_suffix(d, a)).collect())
            .collect();
        let adjacency: Vec<Vec<usize>> = suffixes
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter_map(|(j, s)| s.as_ref().map(|_| j))
                    .collect()
            })
            .collect();
        let matched = max_bipartite_matching(&adjacency, dropped.len());

        let mut dropped_used = vec![false; dropped.len()];
        for (i, a) in added.iter().enumerate() {
            match matched[i] {
                Some(j) => {
                    dropped_used[j] = true;
                    let suffix = suffixes[i][j].clone().expect("matched pairs have a suffix");
                    out.push(StateChangeCommand::concat(&t(&suffix), dropped[j].clone()));
                }
                None => out.push(StateChangeCommand::new(EditOp::New, &t(a))),
            }
        }
        for (j, d) in dropped.iter().enumerate() {
            if !dropped_used[j] {
                out.push(StateChangeCommand::new(EditOp::Delete, &t(d)));
            }
        }
    }
    out.sort_by_cached_key(StateChangeCommand::sort_key);
    out
}

/// Kuhn's augmenting-path matching. Returns, for each left vertex, its right partner.
fn max_bipartite_matching(adjacency: &[Vec<usize>], right: usize) -> Vec<Option<usize>> {
    fn augment(
        u: usize,
        adjacency: &[Vec<usize>],
        seen: &mut [bool],
        right_match: &mut [Option<usize>],
    ) -> bool {
        for &v in &adjacency[u] {
            if seen[v] {
                continue;
            }
            seen[v] = true;
            if right_match[v].is_none_or(|w| augment(w, adjacency, seen, right_match)) {
                right_match[v] = Some(u);
                return true;
            }
        }
        false
    }
    let mut right_match = vec![None; right];
    for u in 0..adjacency.len() {
        let mut seen = vec![false; right];
        augment(u, adjacency, &mut seen, &mut right_match);
    }
    let mut left = vec![None; adjacency.len()];
    for (v, u) in right_match.iter().enumerate() {
        if let Some(u) = u {
            left[*u] = Some(v);
        }
    }
    left
}

/// Drop `[same]` commands.
pub fn without_same(cmds: Vec<StateChangeCommand>) -> Vec<StateChangeCommand> {
    cmds.into_iter().filter(|c| c.op != EditOp::Same).collect()
}
