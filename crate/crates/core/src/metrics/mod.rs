//! Precision/recall scoring for referent-linked, multi-value states.

mod assignment;
mod iaa;
mod lcs;
mod score;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use assignment::max_weight_assignment;
pub use iaa::{iaa, IaaError, IaaReport};
pub use lcs::{longest_common_substring, value_score, value_score_ratio};
pub use score::{
    cb_quartile_turns, cb_quartiles, cb_score_at, evaluate_corpus, render_table, tlb_scores,
    DialoguePrediction, DialogueScores, EvalError, Predictions, Score, ScoreReport, TlbScores,
    PREDICTIONS_VERSION,
};

use crate::ontology::{Ontology, SlotKind};
use crate::state::BeliefState;
use crate::text;

/// One value of one slot fill; multi-value fills flatten to several instances.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TupleInstance {
    pub referent: String,
    pub domain: String,
    pub slot: String,
    pub value: String,
    pub kind: SlotKind,
}

impl TupleInstance {
    pub fn new(referent: &str, domain: &str, slot: &str, value: &str, kind: SlotKind) -> Self {
        TupleInstance {
            referent: referent.to_string(),
            domain: domain.to_string(),
            slot: slot.to_string(),
            value: value.to_string(),
            kind,
        }
    }

    fn key(&self) -> (&str, &str, &str) {
        (&self.referent, &self.domain, &self.slot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRPair {
    pub precision: f64,
    pub recall: f64,
    pub num_pred: usize,
    pub num_gold: usize,
}

impl PRPair {
    pub fn f1(&self) -> f64 {
        f1(self.precision, self.recall)
    }
}

/// Harmonic mean, 0 when both inputs are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub pred: usize,
    pub gold: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Pairs with positive score, ordered by predicted index.
    pub pairs: Vec<AlignedPair>,
    pub total: f64,
    pub pr: PRPair,
}

/// Largest scale keeping exact integer weights comfortably inside `i64`.
const EXACT_SCALE_LIMIT: u64 = 1 << 40;
/// Fixed-point scale used when exact scaling would overflow.
const QUANTIZED_SCALE: f64 = (1u64 << 40) as f64;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Integer weights whose order matches the exact fractions: scaled to a common
/// denominator when it is small enough, otherwise fixed-point.
fn integer_weights(ratios: &[Vec<(u64, u64)>]) -> Vec<Vec<i64>> {
    let mut lcm: Option<u64> = Some(1);
    for &(_, d) in ratios.iter().flatten() {
        lcm = lcm.and_then(|l| {
            let next = (l / gcd(l, d)).checked_mul(d)?;
            (next <= EXACT_SCALE_LIMIT).then_some(next)
        });
    }
    ratios
        .iter()
        .map(|row| {
            row.iter()
                .map(|&(n, d)| match lcm {
                    Some(l) => (n * (l / d)) as i64,
                    None => (n as f64 / d as f64 * QUANTIZED_SCALE).round() as i64,
                })
                .collect()
        })
        .collect()
}

/// Optimal one-to-one alignment of predicted and gold instances.
///
/// Only instances with the same referent, domain, and slot can pair. The
/// matching maximizes the summed value score; `P = total/|pred|` and
/// `R = total/|gold|`, with `P = 0` for an empty prediction against
/// non-empty gold.
pub fn align_and_score(pred: &[TupleInstance], gold: &[TupleInstance]) -> Alignment {
    let mut groups: BTreeMap<(&str, &str, &str), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, p) in pred.iter().enumerate() {
        groups.entry(p.key()).or_default().0.push(i);
    }
    for (j, g) in gold.iter().enumerate() {
        groups.entry(g.key()).or_default().1.push(j);
    }
    let mut pairs = Vec::new();
    for (ps, gs) in groups.values() {
        if ps.is_empty() || gs.is_empty() {
            continue;
        }
        let ratios: Vec<Vec<(u64, u64)>> = ps
            .iter()
            .map(|&i| {
                gs.iter()
                    .map(|&j| value_score_ratio(&pred[i].value, &gold[j].value, gold[j].kind))
                    .collect()
            })
            .collect();
        let weights = integer_weights(&ratios);
        for (r, c) in max_weight_assignment(&weights) {
            if weights[r][c] > 0 {
                let (n, d) = ratios[r][c];
                pairs.push(AlignedPair {
                    pred: ps[r],
                    gold: gs[c],
                    score: n as f64 / d as f64,
                });
            }
        }
    }
    pairs.sort_by_key(|p| p.pred);
    let total: f64 = pairs.iter().map(|p| p.score).sum();
    Alignment {
        pr: pr_from_total(total, pred.len(), gold.len()),
        pairs,
        total,
    }
}

fn pr_from_total(total: f64, num_pred: usize, num_gold: usize) -> PRPair {
    let precision = match (num_pred, num_gold) {
        (0, 0) => 1.0,
        (0, _) => 0.0,
        (n, _) => total / n as f64,
    };
    // Vacuous when there is no gold; such turns are never scored.
    let recall = if num_gold == 0 { 1.0 } else { total / num_gold as f64 };
    PRPair {
        precision,
        recall,
        num_pred,
        num_gold,
    }
}

/// Slot kind lookup; unknown slots score by exact match.
pub(crate) fn kind_of(ontology: &Ontology, domain: &str, slot: &str) -> SlotKind {
    ontology.slot_kind(domain, slot).unwrap_or(SlotKind::Categorical)
}

/// Flatten the fills of one referent (or all referents) into instances.
pub fn instances(state: &BeliefState, referent: Option<&str>, ontology: &Ontology) -> Vec<TupleInstance> {
    state
        .iter()
        .filter(|(r, _, _)| referent.is_none_or(|want| want == *r))
        .flat_map(|(r, (d, s), vs)| {
            let kind = kind_of(ontology, d, s);
            vs.iter().map(move |v| TupleInstance::new(r, d, s, v, kind))
        })
        .collect()
}

/// Referent-stripped instances, deduplicated by slot and normalized value.
pub(crate) fn slot_value_instances(state: &BeliefState, ontology: &Ontology) -> Vec<TupleInstance> {
    let mut seen = std::collections::BTreeSet::new();
    instances(state, None, ontology)
        .into_iter()
        .filter(|t| seen.insert((t.domain.clone(), t.slot.clone(), text::normalize(&t.value))))
        .map(|t| TupleInstance {
            referent: String::new(),
            ..t
        })
        .collect()
}
