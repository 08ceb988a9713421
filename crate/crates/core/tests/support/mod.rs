//! Independent oracles and fixture builders shared by integration tests.
#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use num_rational::Rational64;
use parley_core::dialogue::{Speaker, Turn};
use parley_core::document::{Boundary, DialogueDocument, SpanAnnotation};
use parley_core::metrics::TupleInstance;
use parley_core::ontology::{Ontology, SamplingConfig, SlotKind, Triplet};
use parley_core::prompt::{sample_scenario, ScenarioConfig, ScenarioSpec};
use parley_core::state::{BeliefState, StateSnapshot, TurnUpdate, Resolution};
use parley_core::text;
use rand::Rng;

/// Longest common substring by checking every substring of `a` against `b`.
pub fn brute_lcs(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: String = b.to_string();
    let mut best = 0;
    for i in 0..a.len() {
        for j in i + 1..=a.len() {
            let sub: String = a[i..j].iter().collect();
            if j - i > best && b.contains(&sub) {
                best = j - i;
            }
        }
    }
    best
}

/// Value score as an exact fraction, computed from the brute-force LCS.
pub fn oracle_value_score(pred: &str, gold: &str, kind: SlotKind) -> Rational64 {
    let p = text::normalize(pred);
    let g = text::normalize(gold);
    if p.is_empty() || g.is_empty() {
        return Rational64::from_integer(0);
    }
    if p == g {
        return Rational64::from_integer(1);
    }
    match kind {
        SlotKind::Categorical => Rational64::from_integer(0),
        SlotKind::FreeForm => {
            let len = p.chars().count().max(g.chars().count());
            Rational64::new(brute_lcs(&p, &g) as i64, len as i64)
        }
    }
}

fn admissible(p: &TupleInstance, g: &TupleInstance) -> bool {
    p.referent == g.referent && p.domain == g.domain && p.slot == g.slot
}

/// Best total over every one-to-one partial alignment, exactly.
pub fn exhaustive_alignment_total(pred: &[TupleInstance], gold: &[TupleInstance]) -> Rational64 {
    fn go(i: usize, pred: &[TupleInstance], gold: &[TupleInstance], used: &mut Vec<bool>) -> Rational64 {
        if i == pred.len() {
            return Rational64::from_integer(0);
        }
        let mut best = go(i + 1, pred, gold, used);
        for j in 0..gold.len() {
            if used[j] || !admissible(&pred[i], &gold[j]) {
                continue;
            }
            used[j] = true;
            let s = oracle_value_score(&pred[i].value, &gold[j].value, gold[j].kind) + go(i + 1, pred, gold, used);
            used[j] = false;
            if s > best {
                best = s;
            }
        }
        best
    }
    go(0, pred, gold, &mut vec![false; gold.len()])
}

const FREE_ALPHABET: &[char] = &['a', 'b', 'c', ' ', '7', 'm'];
const CATEGORIES: &[&str] = &["heavy", "medium", "light"];

pub fn random_instance(rng: &mut impl Rng) -> TupleInstance {
    let referent = ["Caller", "Witness"][rng.random_range(0..2)];
    let slot = ["Desc", "Time", "Traffic"][rng.random_range(0..3)];
    if slot == "Traffic" {
        let v = CATEGORIES[rng.random_range(0..CATEGORIES.len())];
        return TupleInstance::new(referent, "D", slot, v, SlotKind::Categorical);
    }
    let len = rng.random_range(1..=7);
    let mut v: String = (0..len)
        .map(|_| FREE_ALPHABET[rng.random_range(0..FREE_ALPHABET.len())])
        .collect();
    if v.trim().is_empty() {
        v.push('a');
    }
    TupleInstance::new(referent, "D", slot, &v, SlotKind::FreeForm)
}

pub fn random_instances(rng: &mut impl Rng, max: usize) -> Vec<TupleInstance> {
    let n = rng.random_range(0..=max);
    (0..n).map(|_| random_instance(rng)).collect()
}

const WORDS: &[&str] = &["7", "AM", "pm", "left", "front", "red", "car", "sharp"];

fn random_value(rng: &mut impl Rng) -> String {
    let n = rng.random_range(1..=2);
    (0..n)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// A random state with at most `max_fills` referent-slot fills.
pub fn random_state(rng: &mut impl Rng, max_fills: usize, max_values: usize) -> BeliefState {
    let mut s = BeliefState::new();
    let fills = rng.random_range(0..=max_fills);
    for _ in 0..fills {
        let r = ["Global", "Caller", "Other Driver"][rng.random_range(0..3)];
        let slot = ["Time", "Part", "Color", "Desc"][rng.random_range(0..4)];
        for _ in 0..rng.random_range(1..=max_values) {
            s.insert_value(&Triplet::new(r, "D", slot, random_value(rng)));
        }
    }
    s
}

/// A successor of `prev` that keeps, extends, drops, and adds values.
pub fn random_successor(rng: &mut impl Rng, prev: &BeliefState, max_fills: usize) -> BeliefState {
    let mut next = BeliefState::new();
    for t in prev.triplets() {
        match rng.random_range(0..4) {
            0 => {}
            1 => {
                let extended = format!("{} {}", t.value, WORDS[rng.random_range(0..WORDS.len())]);
                next.insert_value(&Triplet { value: extended, ..t });
            }
            _ => {
                next.insert_value(&t);
            }
        }
    }
    let extra = random_state(rng, 2, 2);
    for t in extra.triplets() {
        if next.slot_count() >= max_fills && next.get(&t.referent, &t.domain, &t.slot).is_none() {
            continue;
        }
        next.insert_value(&t);
    }
    next
}

pub fn snapshot(entries: BeliefState, turn: usize) -> StateSnapshot {
    StateSnapshot {
        as_of_turn: turn,
        entries,
    }
}

type Key = (String, String, String, String);

fn keyset(s: &BeliefState) -> BTreeSet<Key> {
    s.triplets()
        .into_iter()
        .map(|t| (t.referent, t.domain, t.slot, text::normalize(&t.value)))
        .collect()
}

/// Fewest state-changing edit operations from `prev` to `next`, by breadth-first
/// search over delete / insert / word-extension moves.
pub fn bfs_edit_distance(prev: &BeliefState, next: &BeliefState) -> usize {
    let start = keyset(prev);
    let goal = keyset(next);
    let mut seen = BTreeSet::from([start.clone()]);
    let mut queue = VecDeque::from([(start, 0usize)]);
    while let Some((state, depth)) = queue.pop_front() {
        if state == goal {
            return depth;
        }
        let mut moves: Vec<BTreeSet<Key>> = Vec::new();
        for k in &state {
            let mut s = state.clone();
            s.remove(k);
            moves.push(s);
            for g in &goal {
                let same_slot = g.0 == k.0 && g.1 == k.1 && g.2 == k.2;
                if same_slot && !state.contains(g) && text::word_suffix(&k.3, &g.3).is_some() {
                    let mut s = state.clone();
                    s.remove(k);
                    s.insert(g.clone());
                    moves.push(s);
                }
            }
        }
        for g in &goal {
            if !state.contains(g) {
                let mut s = state.clone();
                s.insert(g.clone());
                moves.push(s);
            }
        }
        for m in moves {
            if seen.insert(m.clone()) {
                queue.push_back((m, depth + 1));
            }
        }
    }
    unreachable!("the goal is always reachable by deletes and inserts")
}

pub fn default_scenario() -> ScenarioSpec {
    let mut s = sample_scenario(
        &Ontology::sample(),
        &ScenarioConfig::default(),
        &SamplingConfig::default(),
        1,
        3,
    )
    .expect("sample scenario");
    s.story = Some("A short story.".into());
    s
}

/// An annotation spec: turn, span text inside the turn, triplet, resolution, prior.
pub struct Ann<'a> {
    pub turn: usize,
    pub span: &'a str,
    pub triplet: Triplet,
    pub resolution: Option<Resolution>,
    pub prior: Option<&'a str>,
}

pub fn ann<'a>(turn: usize, span: &'a str, t: (&str, &str, &str, &str)) -> Ann<'a> {
    Ann {
        turn,
        span,
        triplet: Triplet::new(t.0, t.1, t.2, t.3),
        resolution: None,
        prior: None,
    }
}

impl<'a> Ann<'a> {
    pub fn resolved(mut self, r: Resolution) -> Self {
        self.resolution = Some(r);
        self
    }

    pub fn prior(mut self, p: &'a str) -> Self {
        self.prior = Some(p);
        self
    }
}

/// Build a document; span offsets come from the first occurrence of the span text.
pub fn build_doc(id: &str, turns: &[(Speaker, &str)], anns: Vec<Ann<'_>>) -> DialogueDocument {
    let turns: Vec<Turn> = turns
        .iter()
        .enumerate()
        .map(|(i, (sp, t))| Turn::new(i + 1, *sp, *t))
        .collect();
    let annotations = anns
        .into_iter()
        .map(|a| {
            let text = &turns[a.turn - 1].text;
            let byte = text.find(a.span).unwrap_or_else(|| panic!("span {:?} not in turn {}", a.span, a.turn));
            let start = text[..byte].chars().count();
            let mut s = SpanAnnotation::new(a.turn, start, start + a.span.chars().count(), a.triplet);
            s.resolution = a.resolution;
            s.prior = a.prior.map(str::to_string);
            s
        })
        .collect();
    let n = turns.len();
    DialogueDocument::assemble(
        id,
        default_scenario(),
        turns,
        vec![Boundary { start: 1, end: n }],
        annotations,
        None,
    )
    .expect("fixture derives")
}

pub fn alternating(n: usize, text: &str) -> Vec<(Speaker, String)> {
    (1..=n)
        .map(|i| {
            let sp = if i % 2 == 1 { Speaker::Agent } else { Speaker::User };
            (sp, format!("{text} {i}"))
        })
        .collect()
}

/// A categorical single-slot ontology used by the averaging fixtures.
pub fn item_ontology() -> Ontology {
    let values: Vec<String> = (1..=20).map(|i| format!("\"i{i:02}\"")).collect();
    Ontology::from_json(&format!(
        r#"{{"version":"items","referents":["Caller"],"domains":[{{"name":"Claim","slots":[{{"name":"Item","kind":"categorical","values":[{}]}}]}}]}}"#,
        values.join(",")
    ))
    .expect("valid ontology")
}

/// Two dialogues whose final-state scores are `(1/6, 2/3)` and `(5/6, 5/6)`.
/// F1 of the averaged P and R is 0.60; the mean per-dialogue F1 is 0.55.
pub fn f1_of_averages_fixture() -> (Vec<DialogueDocument>, parley_core::metrics::Predictions) {
    use parley_core::metrics::{DialoguePrediction, Predictions};
    let make = |id: &str, gold: &[u32], pred: &[u32]| {
        let names: Vec<String> = gold.iter().map(|i| format!("i{i:02}")).collect();
        let text = names.join(" ");
        let anns = names.iter().map(|n| ann(2, n, ("Caller", "Claim", "Item", n)).resolved_if_needed()).collect();
        let doc = build_doc(id, &[(Speaker::Agent, "What happened?"), (Speaker::User, &text)], anns);
        let mut entries = BeliefState::new();
        for i in pred {
            entries.insert_value(&Triplet::new("Caller", "Claim", "Item", format!("i{i:02}")));
        }
        let p = DialoguePrediction {
            dialogue_id: id.to_string(),
            tlbs: None,
            cbs: Some(vec![snapshot(entries, 2)]),
        };
        (doc, p)
    };
    let (d1, p1) = make("d1", &[1, 2, 3], &[1, 2, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19]);
    let (d2, p2) = make("d2", &[1, 2, 3, 4, 5, 6], &[1, 2, 3, 4, 5, 20]);
    (
        vec![d1, d2],
        Predictions {
            version: 1,
            predictions: vec![p1, p2],
        },
    )
}

impl<'a> Ann<'a> {
    /// Values after the first in one slot are additional values.
    fn resolved_if_needed(self) -> Self {
        if self.triplet.value == "i01" {
            self
        } else {
            self.resolved(Resolution::Keep)
        }
    }
}

pub fn tlb(turn: usize, items: &[(&str, &str, &str, &str, Option<Resolution>)]) -> TurnUpdate {
    let mut u = TurnUpdate::new(turn);
    for (r, d, s, v, res) in items {
        u.push(&Triplet::new(*r, *d, *s, *v), *res);
    }
    u
}

const FREE_SLOTS: &[(&str, &str)] = &[
    ("ContactInfo", "FirstName"),
    ("ContactInfo", "LastName"),
    ("ContactInfo", "PhoneNumber"),
    ("AccidentDetails", "Date"),
    ("AccidentDetails", "Time"),
    ("AccidentLocation", "City"),
    ("AccidentLocation", "Street"),
    ("CarInfo", "Make"),
];
const FILL_REFERENTS: &[&str] = &["Caller", "Other Driver", "Witness"];

/// A dialogue whose final state has exactly `slots` active fills.
pub fn doc_with_slots(id: &str, slots: usize) -> DialogueDocument {
    assert!(slots <= FREE_SLOTS.len() * FILL_REFERENTS.len());
    let mut turns: Vec<(Speaker, String)> = Vec::new();
    let mut specs = Vec::new();
    for i in 0..slots.max(1) {
        turns.push((Speaker::Agent, format!("Question {i}?")));
        turns.push((Speaker::User, format!("Answer v{i} here.")));
        if i < slots {
            let (d, s) = FREE_SLOTS[i % FREE_SLOTS.len()];
            let r = FILL_REFERENTS[i / FREE_SLOTS.len()];
            specs.push((2 * i + 2, format!("v{i}"), Triplet::new(r, d, s, format!("v{i}"))));
        }
    }
    let refs: Vec<(Speaker, &str)> = turns.iter().map(|(s, t)| (*s, t.as_str())).collect();
    let anns = specs
        .iter()
        .map(|(turn, span, t)| Ann {
            turn: *turn,
            span,
            triplet: t.clone(),
            resolution: None,
            prior: None,
        })
        .collect();
    build_doc(id, &refs, anns)
}
