//! Dialogue-level and corpus-level scores.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{align_and_score, f1, instances, slot_value_instances, PRPair, TupleInstance};
use crate::dialogue::{Speaker, Turn};
use crate::document::{exchange_key, DialogueDocument};
use crate::ontology::{Ontology, SlotKind};
use crate::state::{replay_cb_sequence, BeliefState, StateError, StateSnapshot, TurnUpdate};

pub const PREDICTIONS_VERSION: u32 = 1;

/// Model output for a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictions {
    pub version: u32,
    pub predictions: Vec<DialoguePrediction>,
}

/// Per-dialogue predictions. With only `tlbs`, cumulative beliefs are derived
/// by folding them; with only `cbs`, turn-level scores are unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialoguePrediction {
    pub dialogue_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tlbs: Option<Vec<TurnUpdate>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cbs: Option<Vec<StateSnapshot>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("prediction for unknown dialogue {0:?}")]
    UnknownDialogue(String),
    #[error("no prediction for dialogue {0:?}")]
    MissingPrediction(String),
    #[error("more than one prediction for dialogue {0:?}")]
    DuplicatePrediction(String),
    #[error("gold corpus has dialogue {0:?} more than once")]
    DuplicateGold(String),
    #[error("dialogue {0:?} has no turns")]
    EmptyDialogue(String),
    #[error("prediction for {0:?} has neither tlbs nor cbs")]
    EmptyPrediction(String),
    #[error("predicted snapshots for {0:?} are not in increasing turn order")]
    UnorderedSnapshots(String),
    #[error("predicted beliefs for {id:?} cannot be folded: {source}")]
    Prediction { id: String, source: StateError },
    #[error("gold beliefs for {id:?} cannot be derived: {source}")]
    Gold { id: String, source: StateError },
    #[error("turn {turn} is outside 1..={max}")]
    TurnOutOfRange { turn: usize, max: usize },
    #[error("unsupported predictions version {0}")]
    UnsupportedVersion(u32),
}

/// Averaged precision and recall with F1 taken from the averages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of units (turns or dialogues) in the average.
    pub count: usize,
}

impl Score {
    fn mean(items: impl IntoIterator<Item = (f64, f64)>) -> Option<Score> {
        let mut p = 0.0;
        let mut r = 0.0;
        let mut count = 0;
        for (pi, ri) in items {
            p += pi;
            r += ri;
            count += 1;
        }
        (count > 0).then(|| {
            let (p, r) = (p / count as f64, r / count as f64);
            Score {
                precision: p,
                recall: r,
                f1: f1(p, r),
                count,
            }
        })
    }

    fn corpus(items: impl IntoIterator<Item = Option<Score>>) -> Score {
        Score::mean(items.into_iter().flatten().map(|s| (s.precision, s.recall))).unwrap_or(Score {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
            count: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlbScores {
    pub tlb: Option<Score>,
    pub referent: Option<Score>,
    pub referent_slot: Option<Score>,
    pub slot_value: Option<Score>,
    /// Predicted instances on turns with nothing to extract.
    pub unscored_false_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueScores {
    pub dialogue_id: String,
    pub turns: usize,
    pub quartile_turns: [usize; 4],
    pub cb_avg: Option<Score>,
    pub cb_q: BTreeMap<String, Option<Score>>,
    pub cb_final: Option<Score>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub turn_level: Option<TlbScores>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub dialogues: usize,
    pub cb_avg: Score,
    pub cb_q: BTreeMap<String, Score>,
    pub cb_final: Score,
    pub tlb: Option<Score>,
    pub referent: Option<Score>,
    pub referent_slot: Option<Score>,
    pub slot_value: Option<Score>,
    /// Predicted CB instances at scored turns whose gold CB was empty.
    pub unscored_cb_false_positives: usize,
    /// Predicted TLB instances on exchanges whose gold TLB was empty.
    pub unscored_tlb_false_positives: usize,
    pub per_dialogue: Vec<DialogueScores>,
}

/// Cumulative belief as of turn `t`: the last snapshot at or before it.
fn cb_as_of(seq: &[StateSnapshot], t: usize) -> &BeliefState {
    static EMPTY: std::sync::OnceLock<BeliefState> = std::sync::OnceLock::new();
    seq.iter()
        .take_while(|s| s.as_of_turn <= t)
        .last()
        .map(|s| &s.entries)
        .unwrap_or_else(|| EMPTY.get_or_init(BeliefState::new))
}

/// Per-referent alignment averaged over the referents active in `gold`.
/// `None` when `gold` is empty.
fn referent_averaged(
    pred: &BeliefState,
    gold: &BeliefState,
    flatten: impl Fn(&BeliefState, &str) -> Vec<TupleInstance>,
) -> Option<PRPair> {
    let referents: Vec<&str> = gold.referents().collect();
    if referents.is_empty() {
        return None;
    }
    let (mut p, mut r, mut np, mut ng) = (0.0, 0.0, 0, 0);
    for referent in &referents {
        let al = align_and_score(&flatten(pred, referent), &flatten(gold, referent));
        p += al.pr.precision;
        r += al.pr.recall;
        np += al.pr.num_pred;
        ng += al.pr.num_gold;
    }
    let n = referents.len() as f64;
    Some(PRPair {
        precision: p / n,
        recall: r / n,
        num_pred: np,
        num_gold: ng,
    })
}

fn cb_pair(pred: &BeliefState, gold: &BeliefState, ontology: &Ontology) -> Option<PRPair> {
    referent_averaged(pred, gold, |s, r| instances(s, Some(r), ontology))
}

/// CB score of one dialogue at turn `t` (`1..=T+1`; `T+1` means the final
/// state). `None` when the gold CB at `t` is empty.
pub fn cb_score_at(
    gold: &DialogueDocument,
    pred_cbs: &[StateSnapshot],
    t: usize,
    ontology: &Ontology,
) -> Result<Option<PRPair>, EvalError> {
    let max = gold.len() + 1;
    if t == 0 || t > max {
        return Err(EvalError::TurnOutOfRange { turn: t, max });
    }
    let gold_seq = gold.cb_sequence().map_err(|source| EvalError::Gold {
        id: gold.id.clone(),
        source,
    })?;
    Ok(cb_pair(cb_as_of(pred_cbs, t), cb_as_of(&gold_seq, t), ontology))
}

/// Evaluation turns for Q = 1..4: `ceil(Q*T/4)`, moved to the next user turn
/// when it lands on an agent turn (`T+1`, the final state, if there is none).
pub fn cb_quartile_turns(turns: &[Turn]) -> [usize; 4] {
    let t_total = turns.len();
    let mut out = [0; 4];
    for (q, slot) in out.iter_mut().enumerate() {
        let t = ((q + 1) * t_total).div_ceil(4).max(1);
        *slot = match turns.get(t - 1) {
            Some(turn) if turn.speaker == Speaker::User => t,
            _ => turns
                .iter()
                .skip(t)
                .find(|x| x.speaker == Speaker::User)
                .map(|x| x.index)
                .unwrap_or(t_total + 1),
        };
    }
    out
}

/// CB scores at the four quartile turns.
pub fn cb_quartiles(
    gold: &DialogueDocument,
    pred_cbs: &[StateSnapshot],
    ontology: &Ontology,
) -> Result<BTreeMap<String, Option<PRPair>>, EvalError> {
    if gold.is_empty() {
        return Err(EvalError::EmptyDialogue(gold.id.clone()));
    }
    cb_quartile_turns(&gold.turns)
        .iter()
        .enumerate()
        .map(|(q, &t)| Ok((format!("Q{}", q + 1), cb_score_at(gold, pred_cbs, t, ontology)?)))
        .collect()
}

/// Merge predicted TLBs onto the gold exchange keys.
fn predicted_by_exchange(turns: &[Turn], tlbs: &[TurnUpdate]) -> BTreeMap<usize, BeliefState> {
    let mut out: BTreeMap<usize, BeliefState> = BTreeMap::new();
    for tlb in tlbs {
        let key = exchange_key(turns, tlb.turn_index.max(1));
        let entry = out.entry(key).or_default();
        for t in tlb.entries.triplets() {
            entry.insert_value(&t);
        }
    }
    out
}

fn label(referent: &str, text: &str) -> TupleInstance {
    TupleInstance::new(referent, "", "", text, SlotKind::Categorical)
}

fn slot_labels(state: &BeliefState, referent: &str) -> Vec<TupleInstance> {
    state
        .fills(referent)
        .map(|((d, s), _)| label(referent, &format!("{d}/{s}")))
        .collect()
}

/// Turn-level scores of one dialogue: per-type averages over the exchanges
/// with a non-empty gold TLB.
pub fn tlb_scores(
    gold: &DialogueDocument,
    pred_tlbs: &[TurnUpdate],
    ontology: &Ontology,
) -> TlbScores {
    let predicted = predicted_by_exchange(&gold.turns, pred_tlbs);
    let empty = BeliefState::new();
    let mut tlb = Vec::new();
    let mut referent = Vec::new();
    let mut referent_slot = Vec::new();
    let mut slot_value = Vec::new();
    let mut unscored = 0;
    for g in gold.tlbs() {
        let pred = predicted.get(&g.turn_index).unwrap_or(&empty);
        let gold_state = &g.entries;
        if gold_state.is_empty() {
            unscored += pred.value_count();
            continue;
        }
        let pair = |p: PRPair| (p.precision, p.recall);
        if let Some(p) = cb_pair(pred, gold_state, ontology) {
            tlb.push(pair(p));
        }
        let refs = |s: &BeliefState| s.referents().map(|r| label(r, r)).collect::<Vec<_>>();
        referent.push(pair(align_and_score(&refs(pred), &refs(gold_state)).pr));
        if let Some(p) = referent_averaged(pred, gold_state, slot_labels) {
            referent_slot.push(pair(p));
        }
        slot_value.push(pair(
            align_and_score(
                &slot_value_instances(pred, ontology),
                &slot_value_instances(gold_state, ontology),
            )
            .pr,
        ));
    }
    TlbScores {
        tlb: Score::mean(tlb),
        referent: Score::mean(referent),
        referent_slot: Score::mean(referent_slot),
        slot_value: Score::mean(slot_value),
        unscored_false_positives: unscored,
    }
}

fn check_ordered(id: &str, seq: &[StateSnapshot]) -> Result<(), EvalError> {
    if seq.windows(2).all(|w| w[0].as_of_turn < w[1].as_of_turn) {
        Ok(())
    } else {
        Err(EvalError::UnorderedSnapshots(id.to_string()))
    }
}

fn score_dialogue(
    gold: &DialogueDocument,
    pred: &DialoguePrediction,
    ontology: &Ontology,
) -> Result<(DialogueScores, usize), EvalError> {
    let id = &gold.id;
    if gold.is_empty() {
        return Err(EvalError::EmptyDialogue(id.clone()));
    }
    let gold_seq = gold.cb_sequence().map_err(|source| EvalError::Gold {
        id: id.clone(),
        source,
    })?;
    let pred_seq = match (&pred.cbs, &pred.tlbs) {
        (Some(cbs), _) => cbs.clone(),
        (None, Some(tlbs)) => {
            let mut sorted = tlbs.clone();
            sorted.sort_by_key(|t| t.turn_index);
            replay_cb_sequence(&sorted).map_err(|source| EvalError::Prediction {
                id: id.clone(),
                source,
            })?
        }
        (None, None) => return Err(EvalError::EmptyPrediction(id.clone())),
    };
    check_ordered(id, &pred_seq)?;

    let at = |t: usize| cb_pair(cb_as_of(&pred_seq, t), cb_as_of(&gold_seq, t), ontology);
    let mut unscored = 0;
    let mut avg = Vec::new();
    for key in gold.exchange_keys() {
        match at(key) {
            Some(p) => avg.push((p.precision, p.recall)),
            None => unscored += cb_as_of(&pred_seq, key).value_count(),
        }
    }
    let quartile_turns = cb_quartile_turns(&gold.turns);
    let single = |p: Option<PRPair>| p.and_then(|p| Score::mean([(p.precision, p.recall)]));
    let cb_q = quartile_turns
        .iter()
        .enumerate()
        .map(|(q, &t)| (format!("Q{}", q + 1), single(at(t))))
        .collect();
    let turn_level = pred.tlbs.as_ref().map(|tlbs| tlb_scores(gold, tlbs, ontology));
    Ok((
        DialogueScores {
            dialogue_id: id.clone(),
            turns: gold.len(),
            quartile_turns,
            cb_avg: Score::mean(avg),
            cb_q,
            cb_final: single(at(gold.len() + 1)),
            turn_level,
        },
        unscored,
    ))
}

/// Score a corpus. Dialogue-level values are macro-averaged over the
/// dialogues where they are defined, in dialogue-id order.
pub fn evaluate_corpus(
    gold: &[DialogueDocument],
    predictions: &Predictions,
    ontology: &Ontology,
) -> Result<ScoreReport, EvalError> {
    if predictions.version != PREDICTIONS_VERSION {
        return Err(EvalError::UnsupportedVersion(predictions.version));
    }
    let mut gold_by_id: BTreeMap<&str, &DialogueDocument> = BTreeMap::new();
    for doc in gold {
        if gold_by_id.insert(&doc.id, doc).is_some() {
            return Err(EvalError::DuplicateGold(doc.id.clone()));
        }
    }
    let mut pred_by_id: BTreeMap<&str, &DialoguePrediction> = BTreeMap::new();
    for p in &predictions.predictions {
        if !gold_by_id.contains_key(p.dialogue_id.as_str()) {
            return Err(EvalError::UnknownDialogue(p.dialogue_id.clone()));
        }
        if pred_by_id.insert(&p.dialogue_id, p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.dialogue_id.clone()));
        }
    }
    let mut per_dialogue = Vec::new();
    let mut unscored_cb = 0;
    for (id, doc) in &gold_by_id {
        let pred = pred_by_id
            .get(id)
            .ok_or_else(|| EvalError::MissingPrediction(id.to_string()))?;
        let (scores, unscored) = score_dialogue(doc, pred, ontology)?;
        unscored_cb += unscored;
        per_dialogue.push(scores);
    }

    let quartiles: BTreeSet<&String> = per_dialogue.iter().flat_map(|d| d.cb_q.keys()).collect();
    let cb_q = quartiles
        .into_iter()
        .map(|q| {
            let s = Score::corpus(per_dialogue.iter().map(|d| d.cb_q.get(q).copied().flatten()));
            (q.clone(), s)
        })
        .collect();
    let has_tlb = per_dialogue.iter().any(|d| d.turn_level.is_some());
    let tlb_metric = |f: fn(&TlbScores) -> Option<Score>| {
        has_tlb.then(|| Score::corpus(per_dialogue.iter().map(|d| d.turn_level.as_ref().and_then(f))))
    };
    Ok(ScoreReport {
        dialogues: per_dialogue.len(),
        cb_avg: Score::corpus(per_dialogue.iter().map(|d| d.cb_avg)),
        cb_q,
        cb_final: Score::corpus(per_dialogue.iter().map(|d| d.cb_final)),
        tlb: tlb_metric(|t| t.tlb),
        referent: tlb_metric(|t| t.referent),
        referent_slot: tlb_metric(|t| t.referent_slot),
        slot_value: tlb_metric(|t| t.slot_value),
        unscored_cb_false_positives: unscored_cb,
        unscored_tlb_false_positives: per_dialogue
            .iter()
            .filter_map(|d| d.turn_level.map(|t| t.unscored_false_positives))
            .sum(),
        per_dialogue,
    })
}

/// Fixed-width console table with three decimals.
pub fn render_table(report: &ScoreReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<16}{:>9}{:>9}{:>9}{:>7}", "metric", "P", "R", "F1", "n");
    let mut row = |name: &str, s: &Score| {
        let _ = writeln!(
            out,
            "{:<16}{:>9.3}{:>9.3}{:>9.3}{:>7}",
            name, s.precision, s.recall, s.f1, s.count
        );
    };
    row("cb_avg", &report.cb_avg);
    for (q, s) in &report.cb_q {
        row(&format!("cb_{}", q.to_lowercase()), s);
    }
    row("cb_final", &report.cb_final);
    for (name, s) in [
        ("tlb", &report.tlb),
        ("referent", &report.referent),
        ("referent_slot", &report.referent_slot),
        ("slot_value", &report.slot_value),
    ] {
        if let Some(s) = s {
            row(name, s);
        }
    }
    let _ = writeln!(
        out,
        "dialogues: {}  unscored false positives: cb {}, tlb {}",
        report.dialogues, report.unscored_cb_false_positives, report.unscored_tlb_false_positives
    );
    out
}
