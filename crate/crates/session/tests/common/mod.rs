#![allow(dead_code)]

use std::sync::Arc;

use parley_core::dialogue::{render_turns, RoleMap, Speaker, Turn};
use parley_core::ontology::{Ontology, SamplingConfig, Triplet};
use parley_core::prompt::{sample_scenario, ScenarioConfig, ScenarioSpec};
use parley_lm::{LmClient, MockBackend, MockScript, RetryPolicy};
use parley_session::{Action, AnnotateRequest, Orchestrator, Outcome, Session, SessionConfig, SessionEvent};

pub fn ontology() -> Arc<Ontology> {
    Arc::new(Ontology::sample())
}

pub fn scenario(story: Option<&str>) -> ScenarioSpec {
    let mut s = sample_scenario(&Ontology::sample(), &ScenarioConfig::default(), &SamplingConfig::default(), 3, 2)
        .unwrap();
    s.triplets = vec![
        Triplet::new("Caller", "AccidentDetails", "NumPassengers", "two"),
        Triplet::new("Global", "AccidentDetails", "Time", "7 AM"),
    ];
    s.story = story.map(str::to_string);
    s
}

pub fn roles() -> RoleMap {
    RoleMap::new("Alice", "Bob").unwrap()
}

/// Wire text for alternating agent/user turns starting with the agent.
pub fn wire(texts: &[&str]) -> String {
    let turns: Vec<Turn> = texts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let speaker = if i % 2 == 0 { Speaker::Agent } else { Speaker::User };
            Turn::new(i + 1, speaker, *t)
        })
        .collect();
    render_turns(&turns, &roles())
}

pub fn orchestrator(replies: Vec<String>) -> (Orchestrator, Arc<MockBackend>) {
    let script = if replies.is_empty() {
        MockScript {
            mode: parley_lm::MockMode::Positional,
            replies: vec![parley_lm::MockReply::error("backend offline")],
        }
    } else {
        MockScript::positional(replies)
    };
    let mock = Arc::new(MockBackend::new(script).unwrap());
    let lm = LmClient::new(mock.clone()).with_retry(RetryPolicy::immediate(1));
    let clock = Arc::new(std::sync::atomic::AtomicU64::new(1_000));
    let orch = Orchestrator::new(ontology(), lm)
        .with_clock(Arc::new(move || clock.fetch_add(1, std::sync::atomic::Ordering::Relaxed)));
    (orch, mock)
}

/// A live session plus its full event log.
pub struct Live {
    pub orch: Orchestrator,
    pub session: Session,
    pub log: Vec<SessionEvent>,
}

impl Live {
    pub fn new(replies: Vec<String>, story: Option<&str>) -> Live {
        Live::with_config(replies, story, SessionConfig::default())
    }

    pub fn with_config(replies: Vec<String>, story: Option<&str>, config: SessionConfig) -> Live {
        let (orch, _) = orchestrator(replies);
        let (session, created) = orch.create("s1", scenario(story), config).unwrap();
        Live {
            orch,
            session,
            log: vec![created],
        }
    }

    pub fn act(&mut self, action: Action) -> Result<Outcome, parley_session::SessionError> {
        let out = self.orch.perform(&mut self.session, &action)?;
        self.log.extend(out.events.iter().cloned());
        Ok(out)
    }

    pub fn ok(&mut self, action: Action) -> Outcome {
        self.act(action).unwrap()
    }

    /// Annotate the first occurrence of `needle` in `turn`.
    pub fn label(&mut self, turn: usize, needle: &str, (r, d, s): (&str, &str, &str)) -> Result<Outcome, parley_session::SessionError> {
        let text = self.session.turn(turn).unwrap().text.clone();
        let byte = text.find(needle).unwrap_or_else(|| panic!("{needle:?} not in {text:?}"));
        let start = text[..byte].chars().count();
        self.act(Action::Annotate(AnnotateRequest {
            turn_index: turn,
            char_start: start,
            char_end: start + needle.chars().count(),
            referent: r.into(),
            domain: d.into(),
            slot: s.into(),
            value: None,
            resolution: None,
            prior: None,
        }))
    }

    pub fn replayed(&self) -> Session {
        Session::replay(&self.log).unwrap()
    }
}

pub const PASSENGERS: (&str, &str, &str) = ("Caller", "AccidentDetails", "NumPassengers");
pub const TIME: (&str, &str, &str) = ("Global", "AccidentDetails", "Time");
