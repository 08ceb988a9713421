//! Scripted end-to-end sessions against the mock backend.
//!
//! Each demo dialogue is planned from a sampled scenario: every triplet gets
//! one or two exchanges, some with a correction, an added value, or a value
//! given in two pieces. The plan is rendered into mock replies, and a session
//! is then driven through the same actions a reviewer would take, so the
//! resulting documents carry realistic edit statistics and resolutions.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use parley_core::dialogue::{RoleMap, Speaker, Turn};
use parley_core::document::DialogueDocument;
use parley_core::metrics::{DialoguePrediction, Predictions, PREDICTIONS_VERSION};
use parley_core::ontology::{Ontology, SamplingConfig, SlotKind, Triplet};
use parley_core::prompt::{sample_scenario, ScenarioConfig, ScenarioSpec};
use parley_core::state::{BeliefState, Resolution, TurnUpdate};
use parley_lm::{LmClient, MockBackend, MockScript, RetryPolicy};

use crate::orchestrator::{Action, AnnotateRequest, Orchestrator, Reply};
use crate::session::{Session, SessionConfig, SessionEvent};
use crate::SessionError;

/// A labeled value inside a planned user turn.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedSpan {
    pub char_start: usize,
    pub char_end: usize,
    pub triplet: Triplet,
    /// How to answer a conflict prompt for this span.
    pub resolution: Resolution,
    pub prior: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedExchange {
    pub agent: String,
    pub user: String,
    pub spans: Vec<PlannedSpan>,
}

/// One subdialogue and the reviewer's handling of it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedSubdialogue {
    pub exchanges: Vec<PlannedExchange>,
    /// The first reply does not parse and the format retry is needed.
    pub malformed_first: bool,
    /// A weaker draft is proposed first and fully regenerated.
    pub draft_first: bool,
    /// A trailing agent turn is proposed and deleted by the reviewer.
    pub filler: bool,
    /// The reviewer rewrites the first agent turn.
    pub edit_first_agent: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialoguePlan {
    pub id: String,
    pub scenario: ScenarioSpec,
    pub story: String,
    pub subdialogues: Vec<PlannedSubdialogue>,
}

pub const REGENERATE_INSTRUCTION: &str = "Have the caller give the details one at a time.";
const FILLER: &str = "Let me make a note of that.";
pub const EDIT_SUFFIX: &str = " Take your time.";

fn slot_words(slot: &str) -> String {
    let mut out = String::new();
    for (i, c) in slot.chars().enumerate() {
        if c.is_uppercase() && i > 0 {
            out.push(' ');
        }
        out.extend(c.to_lowercase());
    }
    out
}

fn who(referent: &str) -> String {
    match referent {
        "Global" => "the accident".to_string(),
        "Caller" => "yourself".to_string(),
        r => format!("the {}", r.to_lowercase()),
    }
}

fn question(t: &Triplet) -> String {
    format!("Could you tell me the {} for {}?", slot_words(&t.slot), who(&t.referent))
}

/// `prefix + value + suffix` with the span of `value` in characters.
fn utterance(prefix: &str, value: &str, suffix: &str) -> (String, usize, usize) {
    let start = prefix.chars().count();
    let end = start + value.chars().count();
    (format!("{prefix}{value}{suffix}"), start, end)
}

fn span(start: usize, end: usize, t: &Triplet, resolution: Resolution, prior: Option<String>) -> PlannedSpan {
    PlannedSpan {
        char_start: start,
        char_end: end,
        triplet: t.clone(),
        resolution,
        prior,
    }
}

fn other_value(rng: &mut ChaCha8Rng, t: &Triplet, ontology: &Ontology, sampling: &SamplingConfig) -> Option<String> {
    let def = ontology.slot(&t.domain, &t.slot)?;
    let pool: Vec<&String> = match def.kind {
        SlotKind::Categorical => def.permissible_values.iter().collect(),
        SlotKind::FreeForm => sampling.pool(&t.domain, &t.slot).iter().collect(),
    };
    let others: Vec<&String> = pool
        .into_iter()
        .filter(|v| !parley_core::text::same_value(v, &t.value))
        .collect();
    others.choose(rng).map(|v| v.to_string())
}

const PLAIN_TEMPLATES: &[(&str, &str)] = &[
    ("It was ", "."),
    ("That would be ", "."),
    ("I would say ", "."),
    ("Let me think. ", ", I believe."),
];

fn plan_triplet(
    rng: &mut ChaCha8Rng,
    t: &Triplet,
    ontology: &Ontology,
    sampling: &SamplingConfig,
) -> Vec<PlannedExchange> {
    let categorical = ontology.slot_kind(&t.domain, &t.slot) == Some(SlotKind::Categorical);
    let roll: f64 = rng.random();
    let ask = question(t);
    if roll < 0.2 {
        if let Some(wrong) = other_value(rng, t, ontology, sampling) {
            let wrong_t = Triplet {
                value: wrong.clone(),
                ..t.clone()
            };
            let (u1, s1, e1) = utterance("I think it was ", &wrong, ".");
            let (u2, s2, e2) = utterance("Sorry, I misspoke. It was actually ", &t.value, ".");
            return vec![
                PlannedExchange {
                    agent: ask,
                    user: u1,
                    spans: vec![span(s1, e1, &wrong_t, Resolution::Update, None)],
                },
                PlannedExchange {
                    agent: format!("Just to confirm, that was {wrong}?"),
                    user: u2,
                    spans: vec![span(s2, e2, t, Resolution::Update, Some(wrong))],
                },
            ];
        }
    }
    if roll < 0.35 && !categorical {
        if let Some((head, tail)) = t.value.rsplit_once(' ') {
            let head_t = Triplet {
                value: head.to_string(),
                ..t.clone()
            };
            let tail_t = Triplet {
                value: tail.to_string(),
                ..t.clone()
            };
            let (u1, s1, e1) = utterance("It was ", head, ".");
            let (u2, s2, e2) = utterance("", tail, ", to be exact.");
            return vec![
                PlannedExchange {
                    agent: ask,
                    user: u1,
                    spans: vec![span(s1, e1, &head_t, Resolution::Keep, None)],
                },
                PlannedExchange {
                    agent: format!("{head}, and could you be more precise?"),
                    user: u2,
                    spans: vec![span(s2, e2, &tail_t, Resolution::Concat, Some(head.to_string()))],
                },
            ];
        }
    }
    if roll < 0.5 && categorical {
        if let Some(extra) = other_value(rng, t, ontology, sampling) {
            let extra_t = Triplet {
                value: extra.clone(),
                ..t.clone()
            };
            let (u1, s1, e1) = utterance("", &t.value, ".");
            let (u2, s2, e2) = utterance("Yes, ", &extra, " as well.");
            return vec![
                PlannedExchange {
                    agent: ask,
                    user: u1,
                    spans: vec![span(s1, e1, t, Resolution::Keep, None)],
                },
                PlannedExchange {
                    agent: "Anything else for that?".to_string(),
                    user: u2,
                    spans: vec![span(s2, e2, &extra_t, Resolution::Keep, None)],
                },
            ];
        }
    }
    let (prefix, suffix) = PLAIN_TEMPLATES.choose(rng).expect("non-empty");
    let (u, s, e) = utterance(prefix, &t.value, suffix);
    vec![PlannedExchange {
        agent: ask,
        user: u,
        spans: vec![span(s, e, t, Resolution::Keep, None)],
    }]
}

/// Plan one demo dialogue from `seed`.
pub fn plan_dialogue(id: &str, ontology: &Ontology, seed: u64) -> Result<DialoguePlan, SessionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampling = SamplingConfig::default();
    let count = rng.random_range(3..=6);
    let scenario = sample_scenario(ontology, &ScenarioConfig::default(), &sampling, seed, count)?;
    let user = scenario.roles.user().to_string();
    let story = format!(
        "{user} was driving home when the accident happened. Afterwards {user} called {} to report it, \
and shared these details: {}.",
        scenario.company,
        scenario
            .triplets
            .iter()
            .map(|t| format!("{} {} is {}", who(&t.referent), slot_words(&t.slot), t.value))
            .collect::<Vec<_>>()
            .join("; ")
    );
    let exchanges: Vec<PlannedExchange> = scenario
        .triplets
        .iter()
        .flat_map(|t| plan_triplet(&mut rng, t, ontology, &sampling))
        .collect();
    let mut subdialogues = Vec::new();
    let mut rest = exchanges.as_slice();
    while !rest.is_empty() {
        let take = rng.random_range(2..=3).min(rest.len());
        let (chunk, tail) = rest.split_at(take);
        rest = tail;
        subdialogues.push(PlannedSubdialogue {
            exchanges: chunk.to_vec(),
            malformed_first: rng.random_bool(0.15),
            draft_first: rng.random_bool(0.25),
            filler: rng.random_bool(0.3),
            edit_first_agent: rng.random_bool(0.3),
        });
    }
    let last = subdialogues.last_mut().expect("scenarios have triplets");
    last.filler = false;
    last.exchanges.push(PlannedExchange {
        agent: format!("Thank you, {user}. I have everything I need. Have a good day."),
        user: "Thanks, goodbye.".to_string(),
        spans: Vec::new(),
    });
    Ok(DialoguePlan {
        id: id.to_string(),
        scenario,
        story,
        subdialogues,
    })
}

fn wire(turns: &[(Speaker, String)], roles: &RoleMap) -> String {
    let turns: Vec<Turn> = turns
        .iter()
        .enumerate()
        .map(|(i, (s, t))| Turn::new(i + 1, *s, t.clone()))
        .collect();
    parley_core::dialogue::render_turns(&turns, roles)
}

fn final_turns(sub: &PlannedSubdialogue) -> Vec<(Speaker, String)> {
    let mut turns = Vec::new();
    for x in &sub.exchanges {
        turns.push((Speaker::Agent, x.agent.clone()));
        turns.push((Speaker::User, x.user.clone()));
    }
    if sub.filler {
        turns.push((Speaker::Agent, FILLER.to_string()));
    }
    turns
}

/// Mock replies in the order the session will request them.
pub fn plan_script(plan: &DialoguePlan) -> Vec<String> {
    let roles = &plan.scenario.roles;
    let mut replies = vec![plan.story.clone()];
    for sub in &plan.subdialogues {
        let turns = final_turns(sub);
        if sub.malformed_first {
            let plain: Vec<String> = turns
                .iter()
                .map(|(s, t)| format!("{}: {t}", roles.name(*s)))
                .collect();
            replies.push(format!("Here is the next part of the call:\n{}", plain.join("\n")));
        }
        if sub.draft_first {
            let draft: Vec<(Speaker, String)> = sub
                .exchanges
                .iter()
                .take(1)
                .flat_map(|x| {
                    [
                        (Speaker::Agent, x.agent.clone()),
                        (Speaker::User, "Hmm, give me a second to find my notes.".to_string()),
                    ]
                })
                .collect();
            replies.push(wire(&draft, roles));
        }
        replies.push(wire(&turns, roles));
    }
    replies
}

/// Everything a demo run produced.
#[derive(Debug, Clone)]
pub struct DemoRun {
    pub session: Session,
    pub events: Vec<SessionEvent>,
    pub document: DialogueDocument,
}

fn fixed_clock() -> crate::orchestrator::Clock {
    Arc::new(|| 0)
}

/// Drive a session through `plan` against a mock backend.
pub fn run_plan(plan: &DialoguePlan, ontology: Arc<Ontology>) -> Result<DemoRun, SessionError> {
    let backend = MockBackend::new(MockScript::positional(plan_script(plan)))?;
    let lm = LmClient::new(Arc::new(backend)).with_retry(RetryPolicy::immediate(1));
    let orch = Orchestrator::new(ontology, lm).with_clock(fixed_clock());
    let (mut session, created) = orch.create(&plan.id, plan.scenario.clone(), SessionConfig::default())?;
    let mut events = vec![created];
    let mut act = |session: &mut Session, action: Action| -> Result<Reply, SessionError> {
        let outcome = orch.perform(session, &action)?;
        events.extend(outcome.events);
        Ok(outcome.reply)
    };
    act(&mut session, Action::GenerateStory)?;
    let mut document = None;
    for (k, sub) in plan.subdialogues.iter().enumerate() {
        let first = session.history.len() + 1;
        match act(&mut session, Action::Propose { instruction: None })? {
            Reply::Applied => {}
            other => panic!("demo proposal failed: {other:?}"),
        }
        if sub.draft_first {
            act(
                &mut session,
                Action::Regenerate {
                    from_turn: None,
                    instruction: Some(REGENERATE_INSTRUCTION.to_string()),
                },
            )?;
        }
        if sub.filler {
            let last = first + final_turns(sub).len() - 1;
            act(&mut session, Action::DeleteTurn { turn_index: last })?;
        }
        if sub.edit_first_agent {
            let text = format!("{}{EDIT_SUFFIX}", sub.exchanges[0].agent);
            act(&mut session, Action::EditTurn { turn_index: first, text })?;
        }
        for (j, x) in sub.exchanges.iter().enumerate() {
            let user_turn = first + 2 * j + 1;
            for s in &x.spans {
                let req = AnnotateRequest {
                    turn_index: user_turn,
                    char_start: s.char_start,
                    char_end: s.char_end,
                    referent: s.triplet.referent.clone(),
                    domain: s.triplet.domain.clone(),
                    slot: s.triplet.slot.clone(),
                    value: None,
                    resolution: None,
                    prior: None,
                };
                if let Reply::Conflict(prompt) = act(&mut session, Action::Annotate(req))? {
                    let prior = s.prior.clone().filter(|p| prompt.existing.contains(p));
                    act(
                        &mut session,
                        Action::ResolveConflict {
                            conflict_id: prompt.id,
                            resolution: s.resolution,
                            prior,
                        },
                    )?;
                }
            }
        }
        if k + 1 < plan.subdialogues.len() {
            act(&mut session, Action::Commit)?;
        } else if let Reply::Completed(doc) = act(&mut session, Action::AcceptEnding)? {
            document = Some(*doc);
        }
    }
    let document = document.expect("the final subdialogue proposes the ending");
    Ok(DemoRun {
        session,
        events,
        document,
    })
}

/// Build `count` labeled dialogues with ids `demo-001`, `demo-002`, ...
pub fn build_demo_corpus(ontology: Arc<Ontology>, count: usize, seed: u64) -> Result<Vec<DialogueDocument>, SessionError> {
    (0..count)
        .map(|i| {
            let plan = plan_dialogue(&format!("demo-{:03}", i + 1), &ontology, seed.wrapping_add(i as u64))?;
            run_plan(&plan, Arc::clone(&ontology)).map(|r| r.document)
        })
        .collect()
}

fn perturb(rng: &mut ChaCha8Rng, t: &Triplet, ontology: &Ontology) -> Option<Triplet> {
    let roll: f64 = rng.random();
    if roll < 0.12 {
        return None;
    }
    let mut t = t.clone();
    if roll < 0.24 {
        match ontology.slot(&t.domain, &t.slot) {
            Some(def) if def.kind == SlotKind::Categorical => {
                if let Some(v) = def.permissible_values.choose(rng) {
                    t.value = v.clone();
                }
            }
            _ => match t.value.rsplit_once(' ') {
                Some((head, _)) => t.value = head.to_string(),
                None => t.value.push_str(" or so"),
            },
        }
    } else if roll < 0.3 {
        if let Some(r) = ontology.referents.choose(rng) {
            t.referent = r.clone();
        }
    }
    Some(t)
}

fn spurious(rng: &mut ChaCha8Rng, ontology: &Ontology) -> Option<Triplet> {
    let categorical: Vec<_> = ontology
        .slots()
        .filter(|(_, s)| s.kind == SlotKind::Categorical)
        .collect();
    let (d, s) = categorical.choose(rng)?;
    let v = s.permissible_values.choose(rng)?;
    let r = ontology.referents.choose(rng)?;
    Some(Triplet::new(r, &d.name, &s.name, v))
}

/// Turn-level predictions from a simulated tracker: gold beliefs with
/// dropped values, wrong values, wrong referents, and spurious additions.
/// Resolutions are not predicted.
pub fn noisy_predictions(docs: &[DialogueDocument], ontology: &Ontology, seed: u64) -> Predictions {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let predictions = docs
        .iter()
        .map(|doc| {
            let tlbs = doc
                .tlbs()
                .into_iter()
                .map(|gold| {
                    let mut entries = BeliefState::new();
                    for t in gold.entries.triplets() {
                        if let Some(p) = perturb(&mut rng, &t, ontology) {
                            entries.insert_value(&p);
                        }
                    }
                    if rng.random_bool(0.08) {
                        if let Some(p) = spurious(&mut rng, ontology) {
                            entries.insert_value(&p);
                        }
                    }
                    TurnUpdate {
                        turn_index: gold.turn_index,
                        entries,
                        ops: Vec::new(),
                    }
                })
                .collect();
            DialoguePrediction {
                dialogue_id: doc.id.clone(),
                tlbs: Some(tlbs),
                cbs: None,
            }
        })
        .collect();
    Predictions {
        version: PREDICTIONS_VERSION,
        predictions,
    }
}

/// A session driven by random reviewer actions.
#[derive(Debug, Clone)]
pub struct Episode {
    pub session: Session,
    pub events: Vec<SessionEvent>,
    pub attempted: usize,
    pub rejected: usize,
    /// Every rejected action left the session unchanged.
    pub rejections_atomic: bool,
}

const RANDOM_LINES: &[(&str, &str)] = &[
    ("How many passengers were with you?", "Just one passenger."),
    ("Sorry, how many again?", "Two of us, I mean."),
    ("What time did it happen?", "Around 7."),
    ("Morning or evening?", "AM, in the morning."),
    ("Which part was damaged?", "The left side and the front."),
    ("Anything else damaged?", "The rear as well."),
    ("Was anyone else in the car?", "No, one only."),
];

const RANDOM_SLOTS: &[(&str, &str, &str)] = &[
    ("Caller", "AccidentDetails", "NumPassengers"),
    ("Global", "AccidentDetails", "Time"),
    ("Caller", "DamageDetails", "DamagePart"),
    ("Other Driver", "DamageDetails", "DamagePart"),
];

fn random_reply(rng: &mut ChaCha8Rng, roles: &RoleMap) -> String {
    let roll: f64 = rng.random();
    if roll < 0.1 {
        return "I could not write that part.".to_string();
    }
    let mut turns = Vec::new();
    for _ in 0..rng.random_range(1..=3) {
        let (a, u) = RANDOM_LINES.choose(rng).expect("non-empty");
        turns.push((Speaker::Agent, a.to_string()));
        turns.push((Speaker::User, u.to_string()));
    }
    if roll > 0.85 {
        turns.push((Speaker::Agent, "That is all. Have a good day.".to_string()));
    }
    wire(&turns, roles)
}

fn random_action(rng: &mut ChaCha8Rng, s: &Session) -> Action {
    let n = s.history.len() + s.pending_turns();
    let turn = rng.random_range(1..=n + 1);
    let choice = rng.random_range(0..100);
    if let Some(c) = s.pending_conflict.as_ref().filter(|_| choice < 70) {
        let resolution = *[Resolution::Update, Resolution::Keep, Resolution::Concat]
            .choose(rng)
            .expect("non-empty");
        let prior = c.existing.choose(rng).filter(|_| rng.random_bool(0.5)).cloned();
        return if rng.random_bool(0.9) {
            Action::ResolveConflict {
                conflict_id: c.id,
                resolution,
                prior,
            }
        } else {
            Action::CancelConflict { conflict_id: c.id }
        };
    }
    match choice {
        0..=4 => Action::SetStory {
            story: "Bob was hit at a light.".to_string(),
        },
        5..=19 => Action::Propose {
            instruction: rng.random_bool(0.3).then(|| REGENERATE_INSTRUCTION.to_string()),
        },
        20..=27 => Action::Regenerate {
            from_turn: rng.random_bool(0.5).then_some(turn),
            instruction: None,
        },
        28..=33 => Action::EditTurn {
            turn_index: turn,
            text: if rng.random_bool(0.9) {
                "Could you repeat that, please?".to_string()
            } else {
                " ".to_string()
            },
        },
        34..=38 => Action::DeleteTurn { turn_index: turn },
        39..=69 => {
            let (referent, domain, slot) = *RANDOM_SLOTS.choose(rng).expect("non-empty");
            let words: Vec<(usize, usize)> = s
                .turn(turn.min(n))
                .map(|t| {
                    let mut spans = Vec::new();
                    let mut start = None;
                    for (i, c) in t.text.chars().chain(std::iter::once(' ')).enumerate() {
                        let word = c.is_alphanumeric();
                        match (word, start) {
                            (true, None) => start = Some(i),
                            (false, Some(st)) => {
                                spans.push((st, i));
                                start = None;
                            }
                            _ => {}
                        }
                    }
                    spans
                })
                .unwrap_or_default();
            let (char_start, char_end) = words.choose(rng).copied().unwrap_or((0, 1));
            Action::Annotate(AnnotateRequest {
                turn_index: turn.min(n),
                char_start,
                char_end,
                referent: referent.to_string(),
                domain: domain.to_string(),
                slot: slot.to_string(),
                value: None,
                resolution: None,
                prior: None,
            })
        }
        70..=74 => Action::RemoveLastAnnotation,
        75..=86 => Action::Commit,
        87..=91 => Action::RejectEnding,
        92..=96 => Action::AcceptEnding,
        _ => Action::Complete {
            force: rng.random_bool(0.5),
        },
    }
}

/// Run `steps` random actions against a mock-backed session.
pub fn random_episode(ontology: Arc<Ontology>, seed: u64, steps: usize) -> Result<Episode, SessionError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenario = sample_scenario(&ontology, &ScenarioConfig::default(), &SamplingConfig::default(), seed, 3)?;
    if rng.random_bool(0.7) {
        scenario.story = Some("Bob was rear-ended at a stop light.".to_string());
    }
    let replies: Vec<String> = (0..2 * steps + 2)
        .map(|_| random_reply(&mut rng, &scenario.roles))
        .collect();
    let backend = MockBackend::new(MockScript::positional(replies))?;
    let lm = LmClient::new(Arc::new(backend)).with_retry(RetryPolicy::immediate(1));
    let orch = Orchestrator::new(ontology, lm).with_clock(fixed_clock());
    let (mut session, created) = orch.create(format!("random-{seed}"), scenario, SessionConfig::default())?;
    let mut events = vec![created];
    let (mut rejected, mut atomic) = (0, true);
    for _ in 0..steps {
        if session.document.is_some() {
            break;
        }
        let action = random_action(&mut rng, &session);
        let before = session.clone();
        match orch.perform(&mut session, &action) {
            Ok(out) => events.extend(out.events),
            Err(_) => {
                rejected += 1;
                atomic &= session == before;
            }
        }
    }
    Ok(Episode {
        attempted: steps,
        session,
        events,
        rejected,
        rejections_atomic: atomic,
    })
}
