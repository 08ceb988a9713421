//! Inter-annotator agreement.
//!
//! For each dialogue one annotator is drawn as the reference. Every other
//! annotator's tuples are scored turn by turn: each tuple takes its best match
//! among the reference tuples of that turn (referent and slot must agree
//! exactly; the value scores by partial credit). Scores average over tuples,
//! then turns, then dialogues, then annotators.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{instances, value_score, TupleInstance};
use crate::document::DialogueDocument;
use crate::ontology::Ontology;
use crate::text;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IaaError {
    #[error("dialogue {0:?} has a single annotator")]
    SingleAnnotator(String),
    #[error("dialogue {0:?} has a document without an annotator")]
    MissingAnnotator(String),
    #[error("dialogue {id:?} has two documents from annotator {annotator:?}")]
    DuplicateAnnotation { id: String, annotator: String },
    #[error("annotations of dialogue {0:?} disagree on the turn sequence")]
    TurnMismatch(String),
    #[error("no dialogues to compare")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IaaReport {
    /// Agreement as a percentage.
    pub score: f64,
    pub dialogues: usize,
    /// Per non-reference annotator, as a percentage.
    pub per_annotator: BTreeMap<String, f64>,
    /// The reference annotator chosen for each dialogue.
    pub references: BTreeMap<String, String>,
}

fn tuple_f1(pred: &TupleInstance, gold: &TupleInstance) -> f64 {
    if pred.referent == gold.referent && pred.domain == gold.domain && pred.slot == gold.slot {
        value_score(&pred.value, &gold.value, gold.kind)
    } else {
        0.0
    }
}

fn turn_score(pred: &[TupleInstance], reference: &[TupleInstance]) -> Option<f64> {
    if pred.is_empty() && reference.is_empty() {
        return None;
    }
    if pred.is_empty() {
        return Some(0.0);
    }
    let sum: f64 = pred
        .iter()
        .map(|p| reference.iter().map(|g| tuple_f1(p, g)).fold(0.0, f64::max))
        .sum();
    Some(sum / pred.len() as f64)
}

fn per_turn_tuples(doc: &DialogueDocument, ontology: &Ontology) -> BTreeMap<usize, Vec<TupleInstance>> {
    doc.tlbs()
        .into_iter()
        .map(|t| (t.turn_index, instances(&t.entries, None, ontology)))
        .collect()
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn iaa(docs: &[DialogueDocument], seed: u64, ontology: &Ontology) -> Result<IaaReport, IaaError> {
    let mut grouped: BTreeMap<&str, BTreeMap<&str, &DialogueDocument>> = BTreeMap::new();
    for doc in docs {
        let annotator = doc
            .annotator
            .as_deref()
            .ok_or_else(|| IaaError::MissingAnnotator(doc.id.clone()))?;
        if grouped.entry(&doc.id).or_default().insert(annotator, doc).is_some() {
            return Err(IaaError::DuplicateAnnotation {
                id: doc.id.clone(),
                annotator: annotator.to_string(),
            });
        }
    }
    if grouped.is_empty() {
        return Err(IaaError::Empty);
    }
    let mut by_annotator: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut references = BTreeMap::new();
    for (id, annotators) in &grouped {
        if annotators.len() < 2 {
            return Err(IaaError::SingleAnnotator(id.to_string()));
        }
        let names: Vec<&str> = annotators.keys().copied().collect();
        let pick = text::derive_seed(seed, id) % names.len() as u64;
        let reference_name = names[pick as usize];
        let reference = annotators[reference_name];
        references.insert(id.to_string(), reference_name.to_string());
        let ref_turns = per_turn_tuples(reference, ontology);
        for (name, doc) in annotators {
            if *name == reference_name {
                continue;
            }
            let same_turns = doc.turns.len() == reference.turns.len()
                && doc.turns.iter().zip(&reference.turns).all(|(a, b)| a.speaker == b.speaker);
            if !same_turns {
                return Err(IaaError::TurnMismatch(id.to_string()));
            }
            let pred_turns = per_turn_tuples(doc, ontology);
            let turn_scores: Vec<f64> = pred_turns
                .iter()
                .filter_map(|(k, pred)| turn_score(pred, ref_turns.get(k).map_or(&[], Vec::as_slice)))
                .collect();
            if let Some(s) = mean(&turn_scores) {
                by_annotator.entry(name.to_string()).or_default().push(s);
            }
        }
    }
    let per_annotator: BTreeMap<String, f64> = by_annotator
        .into_iter()
        .filter_map(|(name, xs)| mean(&xs).map(|m| (name, 100.0 * m)))
        .collect();
    let overall: Vec<f64> = per_annotator.values().copied().collect();
    Ok(IaaReport {
        score: mean(&overall).unwrap_or(0.0),
        dialogues: grouped.len(),
        per_annotator,
        references,
    })
}
