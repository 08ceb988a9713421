//! Consistent per-dialogue name substitution.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dialogue::{RoleMap, RoleMapError};
use crate::document::DialogueDocument;
use crate::ontology::Triplet;
use crate::state::{BeliefState, StateSnapshot};
use crate::text;

const DEFAULT_POOL: &[&str] = &[
    "Omar", "Priya", "Mateo", "Ingrid", "Kwame", "Lucia", "Tomas", "Yuki", "Farah", "Dmitri", "Amara",
    "Henrik", "Noor", "Emeka", "Sofia", "Ravi", "Elena", "Jonas", "Leila", "Marco", "Hana", "Tariq",
    "Greta", "Nikhil",
];

/// Replacement names and extra names to detect besides the role names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NamePool {
    pub replacements: Vec<String>,
    #[serde(default)]
    pub supplementary: Vec<String>,
}

impl Default for NamePool {
    fn default() -> Self {
        NamePool {
            replacements: DEFAULT_POOL.iter().map(|s| s.to_string()).collect(),
            supplementary: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnonymizeError {
    #[error("name pool is empty")]
    EmptyPool,
    #[error("no replacement for {name:?} avoids the names already in dialogue {id:?}")]
    Exhausted { id: String, name: String },
    #[error("replaced role names are invalid: {0}")]
    Roles(#[from] RoleMapError),
}

struct Substitution {
    /// `(original, replacement)`, original as declared.
    mapping: Vec<(Vec<char>, String)>,
}

/// One replaced occurrence, in character offsets.
struct Edit {
    orig_start: usize,
    orig_end: usize,
    new_start: usize,
    new_end: usize,
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric()
}

fn eq_ci(a: char, b: char) -> bool {
    a == b || a.to_lowercase().eq(b.to_lowercase())
}

fn cased_like(original: &[char], replacement: &str) -> String {
    let letters: Vec<char> = original.iter().copied().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return replacement.to_uppercase();
    }
    match original.first() {
        Some(c) if c.is_lowercase() => replacement.to_lowercase(),
        Some(c) if c.is_uppercase() => {
            let mut chars = replacement.chars();
            match chars.next() {
                Some(first) => first.to_uppercase().chain(chars).collect(),
                None => String::new(),
            }
        }
        _ => replacement.to_string(),
    }
}

impl Substitution {
    fn apply(&self, s: &str) -> (String, Vec<Edit>) {
        let chars: Vec<char> = s.chars().collect();
        let mut out = String::with_capacity(s.len());
        let mut edits = Vec::new();
        let mut out_len = 0;
        let mut i = 0;
        'scan: while i < chars.len() {
            let at_boundary = i == 0 || !is_word(chars[i - 1]);
            if at_boundary {
                for (name, replacement) in &self.mapping {
                    let end = i + name.len();
                    let matches = end <= chars.len()
                        && chars[i..end].iter().zip(name).all(|(a, b)| eq_ci(*a, *b))
                        && (end == chars.len() || !is_word(chars[end]));
                    if matches {
                        let r = cased_like(&chars[i..end], replacement);
                        let r_len = r.chars().count();
                        edits.push(Edit {
                            orig_start: i,
                            orig_end: end,
                            new_start: out_len,
                            new_end: out_len + r_len,
                        });
                        out.push_str(&r);
                        out_len += r_len;
                        i = end;
                        continue 'scan;
                    }
                }
            }
            out.push(chars[i]);
            out_len += 1;
            i += 1;
        }
        (out, edits)
    }

    fn text(&self, s: &str) -> String {
        self.apply(s).0
    }

    fn state(&self, state: &BeliefState) -> BeliefState {
        let mut out = BeliefState::new();
        for (r, (d, sl), vs) in state.iter() {
            for v in vs {
                out.insert_value(&Triplet::new(r, d, sl, self.text(v)));
            }
        }
        out
    }

    fn triplet(&self, t: &Triplet) -> Triplet {
        Triplet {
            value: self.text(&t.value),
            ..t.clone()
        }
    }
}

fn shift(edits: &[Edit], p: usize, is_end: bool) -> usize {
    let mut delta: isize = 0;
    for e in edits {
        if e.orig_end <= p {
            delta = e.new_end as isize - e.orig_end as isize;
        } else if e.orig_start < p {
            return if is_end { e.new_end } else { e.new_start };
        } else {
            break;
        }
    }
    (p as isize + delta) as usize
}

fn has_word(haystack: &str, name: &str) -> bool {
    let probe = Substitution {
        mapping: vec![(name.chars().collect(), String::new())],
    };
    !probe.apply(haystack).1.is_empty()
}

/// Replace every declared name (role names plus the pool's supplementary
/// list) with a replacement drawn per dialogue from `seed` and the document id.
pub fn anonymize(doc: &DialogueDocument, pool: &NamePool, seed: u64) -> Result<DialogueDocument, AnonymizeError> {
    if pool.replacements.is_empty() {
        return Err(AnonymizeError::EmptyPool);
    }
    let roles = &doc.scenario.roles;
    let mut declared: Vec<String> = Vec::new();
    for name in [roles.agent(), roles.user()]
        .into_iter()
        .chain(pool.supplementary.iter().map(String::as_str))
    {
        let name = name.trim();
        if !name.is_empty() && !declared.iter().any(|d| text::same_value(d, name)) {
            declared.push(name.to_string());
        }
    }
    // Longer names first so "Mary Ann" wins over "Mary".
    declared.sort_by_key(|d| std::cmp::Reverse(d.chars().count()));

    let mut haystack: Vec<&str> = doc.turns.iter().map(|t| t.text.as_str()).collect();
    haystack.extend(doc.annotations.iter().map(|a| a.triplet.value.as_str()));
    let scenario = &doc.scenario;
    haystack.push(&scenario.task_description);
    haystack.push(&scenario.caller_personality);
    haystack.extend(scenario.story.as_deref());
    let haystack = haystack.join("\n");

    let mut candidates: Vec<&String> = pool.replacements.iter().collect();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(text::derive_seed(seed, &doc.id)));
    let mut used: Vec<String> = Vec::new();
    let mut mapping = Vec::new();
    for name in &declared {
        let pick = candidates.iter().find(|c| {
            let c = c.trim();
            !c.is_empty()
                && !declared.iter().any(|d| text::same_value(d, c))
                && !used.iter().any(|u| text::same_value(u, c))
                && !has_word(&haystack, c)
        });
        let pick = pick.ok_or_else(|| AnonymizeError::Exhausted {
            id: doc.id.clone(),
            name: name.clone(),
        })?;
        used.push(pick.trim().to_string());
        mapping.push((name.chars().collect::<Vec<char>>(), pick.trim().to_string()));
    }
    let sub = Substitution { mapping };

    let mut out = doc.clone();
    let mut all_edits = Vec::with_capacity(doc.turns.len());
    for turn in &mut out.turns {
        let (text, edits) = sub.apply(&turn.text);
        turn.text = text;
        all_edits.push(edits);
    }
    for a in &mut out.annotations {
        if let Some(edits) = a.turn_index.checked_sub(1).and_then(|i| all_edits.get(i)) {
            a.char_start = shift(edits, a.char_start, false);
            a.char_end = shift(edits, a.char_end, true);
        }
        a.triplet = sub.triplet(&a.triplet);
        a.prior = a.prior.as_deref().map(|p| sub.text(p));
    }
    out.final_cb = StateSnapshot {
        as_of_turn: doc.final_cb.as_of_turn,
        entries: sub.state(&doc.final_cb.entries),
    };
    let s = &mut out.scenario;
    s.roles = RoleMap::new(sub.text(roles.agent()), sub.text(roles.user()))?;
    s.task_description = sub.text(&s.task_description);
    s.caller_personality = sub.text(&s.caller_personality);
    s.agent_personality = sub.text(&s.agent_personality);
    s.story = s.story.as_deref().map(|t| sub.text(t));
    s.triplets = s.triplets.iter().map(|t| sub.triplet(t)).collect();
    for t in &mut s.initial_exchange {
        t.text = sub.text(&t.text);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sub(pairs: &[(&str, &str)]) -> Substitution {
        Substitution {
            mapping: pairs.iter().map(|(a, b)| (a.chars().collect(), b.to_string())).collect(),
        }
    }

    #[test]
    fn whole_word_case_preserving() {
        let s = sub(&[("Bob", "Omar")]);
        assert_eq!(s.text("Bob said bob, BOB! Bobby stays."), "Omar said omar, OMAR! Bobby stays.");
    }

    #[test]
    fn offsets_follow_replacements() {
        let s = sub(&[("Bob", "Priyanka")]);
        let (out, edits) = s.apply("Hi Bob, I am Bob.");
        assert_eq!(out, "Hi Priyanka, I am Priyanka.");
        // "Bob" at 3..6 and 13..16; "I am" at 8..12.
        assert_eq!((shift(&edits, 3, false), shift(&edits, 6, true)), (3, 11));
        assert_eq!((shift(&edits, 8, false), shift(&edits, 12, true)), (13, 17));
        assert_eq!((shift(&edits, 13, false), shift(&edits, 16, true)), (18, 26));
        assert_eq!(shift(&edits, 4, false), 3);
        assert_eq!(shift(&edits, 5, true), 11);
    }
}
