//! Descriptive corpus statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Corpus;

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    fn of(xs: &[f64]) -> MeanStd {
        if xs.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub dialogues: usize,
    pub turns: MeanStd,
    /// Active `(referent, domain, slot)` fills in the final belief.
    pub active_slots: MeanStd,
    pub annotations: MeanStd,
    /// Dialogues whose final belief has a fill with two or more values.
    pub multi_value_fraction: f64,
    /// `"Domain/Slot"` → number of dialogues where it is active for any referent.
    pub slot_frequency: BTreeMap<String, usize>,
}

pub fn compute_stats(corpus: &Corpus) -> CorpusStats {
    let docs = &corpus.documents;
    let counts = |f: &dyn Fn(&crate::document::DialogueDocument) -> usize| -> Vec<f64> {
        docs.iter().map(|d| f(d) as f64).collect()
    };
    let mut slot_frequency: BTreeMap<String, usize> = BTreeMap::new();
    for d in docs {
        let mut seen = std::collections::BTreeSet::new();
        for (_, (domain, slot), _) in d.final_cb.entries.iter() {
            seen.insert(format!("{domain}/{slot}"));
        }
        for s in seen {
            *slot_frequency.entry(s).or_default() += 1;
        }
    }
    let multi = docs.iter().filter(|d| d.final_cb.entries.has_multi_value()).count();
    CorpusStats {
        dialogues: docs.len(),
        turns: MeanStd::of(&counts(&|d| d.turns.len())),
        active_slots: MeanStd::of(&counts(&|d| d.final_cb.entries.slot_count())),
        annotations: MeanStd::of(&counts(&|d| d.annotations.len())),
        multi_value_fraction: if docs.is_empty() {
            0.0
        } else {
            multi as f64 / docs.len() as f64
        },
        slot_frequency,
    }
}

pub fn render_stats_table(stats: &CorpusStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24}{:>10}", "dialogues", stats.dialogues);
    for (name, m) in [
        ("turns", stats.turns),
        ("active slots", stats.active_slots),
        ("annotations", stats.annotations),
    ] {
        let _ = writeln!(out, "{:<24}{:>10.2} ± {:.2}", name, m.mean, m.std);
    }
    let _ = writeln!(out, "{:<24}{:>10.3}", "multi-value fraction", stats.multi_value_fraction);
    if !stats.slot_frequency.is_empty() {
        let _ = writeln!(out, "slot frequency (dialogues):");
        let width = stats.slot_frequency.keys().map(|k| k.chars().count()).max().unwrap_or(0) + 2;
        for (slot, n) in &stats.slot_frequency {
            let _ = writeln!(out, "  {slot:<width$}{n:>4}");
        }
    }
    out
}
