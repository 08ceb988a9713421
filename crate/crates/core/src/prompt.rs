//! Scenario sampling and prompt assembly.

use serde::{Deserialize, Serialize};

use crate::dialogue::{render_turns, RoleMap, Speaker, Turn};
use crate::ontology::{Ontology, SampleError, SamplingConfig, Triplet, TripletError};
use crate::text;

/// The agent personality used for every dialogue unless configured otherwise.
pub const DEFAULT_AGENT_PERSONALITY: &str =
    "conversational, personable, patient, empathetic, sympathetic and professional";

/// Appended to the instruction when a proposal has to be re-requested because
/// it did not parse.
pub const FORMAT_REMINDER: &str = "Your previous reply could not be read. Reply with exactly one <div> element \
containing one <p>Name: utterance</p> element per turn and nothing else.";

const DEFAULT_PERSONALITIES: &[&str] = &[
    "feeling distressed or frustrated about the accident and everything that followed",
    "calm and matter-of-fact, and wants the claim handled quickly",
    "confused about the claims process and asks many clarifying questions",
    "impatient, talks fast, and tends to skip over details",
    "polite but hesitant, and often corrects things said earlier",
    "chatty, friendly, and drifts into side stories",
];

const DEFAULT_TASK_TEMPLATE: &str = "Write a phone conversation between {agent}, a claims agent at {company}, and \
{caller}, a customer calling to file an auto insurance claim. {agent} collects the details of the accident. \
{caller} provides the information listed under Triplets, guided by the story, and may reveal it gradually, \
restate it, or correct it.";

const STORY_TASK_TEMPLATE: &str = "Write a short third-person story about a car accident that {caller}, a \
customer of {company}, was involved in. The story must mention every item listed under Triplets.";

const FORMAT_INSTRUCTION: &str = "Continue the conversation with the next few turns. Format the reply as one \
<div> element containing one <p>Name: utterance</p> element per turn.";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("personality list is empty")]
    NoPersonalities,
    #[error(transparent)]
    Sample(#[from] SampleError),
    #[error("triplet {triplet}: {source}")]
    InvalidTriplet {
        triplet: Triplet,
        #[source]
        source: TripletError,
    },
    #[error("scenario has no triplets")]
    NoTriplets,
    #[error("initial exchange must be one agent turn followed by one user turn")]
    BadInitialExchange,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("scenario has no triplets")]
    NoTriplets,
    #[error("scenario already has a story")]
    StoryPresent,
    #[error("dialogue history must begin with the initial exchange")]
    HistoryMismatch,
    #[error("prompt needs about {estimate} tokens but the context limit is {limit}")]
    ContextOverflow { estimate: usize, limit: usize },
}

/// Everything the LM needs to know about one dialogue to be generated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub triplets: Vec<Triplet>,
    pub caller_personality: String,
    pub agent_personality: String,
    pub task_description: String,
    pub company: String,
    pub roles: RoleMap,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub story: Option<String>,
    pub initial_exchange: Vec<Turn>,
}

impl ScenarioSpec {
    pub fn validate(&self, ontology: &Ontology) -> Result<(), ScenarioError> {
        if self.triplets.is_empty() {
            return Err(ScenarioError::NoTriplets);
        }
        for t in &self.triplets {
            ontology
                .validate_triplet(t)
                .map_err(|source| ScenarioError::InvalidTriplet {
                    triplet: t.clone(),
                    source,
                })?;
        }
        let ok = matches!(
            self.initial_exchange.as_slice(),
            [a, u] if a.speaker == Speaker::Agent && u.speaker == Speaker::User
                && a.index == 1 && u.index == 2
                && !a.text.trim().is_empty() && !u.text.trim().is_empty()
        );
        if !ok {
            return Err(ScenarioError::BadInitialExchange);
        }
        Ok(())
    }
}

/// Editable inputs to scenario sampling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub personalities: Vec<String>,
    pub agent_personality: String,
    /// Placeholders: `{agent}`, `{caller}`, `{company}`.
    pub task_template: String,
    pub company: String,
    pub roles: RoleMap,
    /// Opening agent and user utterances; templated like the task.
    pub opening: (String, String),
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            personalities: DEFAULT_PERSONALITIES.iter().map(|s| s.to_string()).collect(),
            agent_personality: DEFAULT_AGENT_PERSONALITY.to_string(),
            task_template: DEFAULT_TASK_TEMPLATE.to_string(),
            company: "Acme Insurance".to_string(),
            roles: RoleMap::new("Alice", "Bob").expect("valid default roles"),
            opening: (
                "Hello, you have reached {company}. My name is {agent}. What can I do for you?".to_string(),
                "Hi, I need to report a car accident.".to_string(),
            ),
        }
    }
}

fn fill_template(template: &str, roles: &RoleMap, company: &str) -> String {
    template
        .replace("{agent}", roles.agent())
        .replace("{caller}", roles.user())
        .replace("{company}", company)
}

/// Sample triplets and a caller personality. Pure in `(ontology, config, seed, count)`.
pub fn sample_scenario(
    ontology: &Ontology,
    config: &ScenarioConfig,
    sampling: &SamplingConfig,
    seed: u64,
    triplet_count: usize,
) -> Result<ScenarioSpec, ScenarioError> {
    if config.personalities.is_empty() {
        return Err(ScenarioError::NoPersonalities);
    }
    let triplets = ontology.sample_triplets(seed, triplet_count, sampling)?;
    let pick = text::derive_seed(seed, "personality") % config.personalities.len() as u64;
    let fill = |s: &str| fill_template(s, &config.roles, &config.company);
    Ok(ScenarioSpec {
        triplets,
        caller_personality: config.personalities[pick as usize].clone(),
        agent_personality: config.agent_personality.clone(),
        task_description: fill(&config.task_template),
        company: config.company.clone(),
        roles: config.roles.clone(),
        story: None,
        initial_exchange: vec![
            Turn::new(1, Speaker::Agent, fill(&config.opening.0)),
            Turn::new(2, Speaker::User, fill(&config.opening.1)),
        ],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectionKind {
    TaskDescription,
    Triplets,
    Story,
    Personalities,
    DialogueHistory,
    Instruction,
}

impl SectionKind {
    pub fn label(self) -> &'static str {
        match self {
            SectionKind::TaskDescription => "Task",
            SectionKind::Triplets => "Triplets",
            SectionKind::Story => "Story",
            SectionKind::Personalities => "Personalities",
            SectionKind::DialogueHistory => "Dialogue history",
            SectionKind::Instruction => "Instruction",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub kind: SectionKind,
    pub label: String,
    pub text: String,
}

/// An assembled prompt. Sections always appear in [`SectionKind`] order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub sections: Vec<Section>,
    pub token_estimate: usize,
}

impl PromptBundle {
    fn assemble(mut parts: Vec<(SectionKind, String)>, config: &PromptConfig) -> PromptBundle {
        parts.sort_by_key(|(k, _)| *k);
        let sections = parts
            .into_iter()
            .map(|(kind, text)| Section {
                kind,
                label: kind.label().to_string(),
                text,
            })
            .collect();
        let mut bundle = PromptBundle {
            sections,
            token_estimate: 0,
        };
        bundle.token_estimate = config.estimate_tokens(&bundle.render());
        bundle
    }

    /// Plain-text form sent to the LM.
    pub fn render(&self) -> String {
        self.sections
            .iter()
            .map(|s| format!("{}:\n{}", s.label, s.text))
            .collect::<Vec<_>>()
            .join("\n\n")
    }

    pub fn section(&self, kind: SectionKind) -> Option<&Section> {
        self.sections.iter().find(|s| s.kind == kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub chars_per_token: usize,
    pub context_limit: usize,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            chars_per_token: 4,
            context_limit: 4096,
        }
    }
}

impl PromptConfig {
    pub fn estimate_tokens(&self, s: &str) -> usize {
        s.chars().count().div_ceil(self.chars_per_token.max(1))
    }
}

fn triplet_lines(spec: &ScenarioSpec) -> String {
    spec.triplets
        .iter()
        .map(|t| format!("- {t}"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn personality_text(spec: &ScenarioSpec) -> String {
    format!(
        "{} is {}.\n{} is {}.",
        spec.roles.user(),
        spec.caller_personality,
        spec.roles.agent(),
        spec.agent_personality
    )
}

/// Prompt asking the LM for an accident story covering every triplet.
pub fn build_story_prompt(spec: &ScenarioSpec, config: &PromptConfig) -> Result<PromptBundle, PromptError> {
    if spec.triplets.is_empty() {
        return Err(PromptError::NoTriplets);
    }
    if spec.story.is_some() {
        return Err(PromptError::StoryPresent);
    }
    let task = fill_template(STORY_TASK_TEMPLATE, &spec.roles, &spec.company);
    Ok(PromptBundle::assemble(
        vec![
            (SectionKind::TaskDescription, task),
            (SectionKind::Triplets, triplet_lines(spec)),
            (SectionKind::Personalities, personality_text(spec)),
        ],
        config,
    ))
}

/// Prompt asking the LM to continue the dialogue from `history`.
pub fn build_generation_prompt(
    spec: &ScenarioSpec,
    history: &[Turn],
    instruction: Option<&str>,
    config: &PromptConfig,
) -> Result<PromptBundle, PromptError> {
    if spec.triplets.is_empty() {
        return Err(PromptError::NoTriplets);
    }
    let opening_matches = history.len() >= spec.initial_exchange.len()
        && spec
            .initial_exchange
            .iter()
            .zip(history)
            .all(|(a, b)| a.speaker == b.speaker && a.text == b.text);
    if !opening_matches {
        return Err(PromptError::HistoryMismatch);
    }
    let mut parts = vec![
        (
            SectionKind::TaskDescription,
            format!("{}\n{}", spec.task_description, FORMAT_INSTRUCTION),
        ),
        (SectionKind::Triplets, triplet_lines(spec)),
        (
            SectionKind::Story,
            spec.story.clone().unwrap_or_else(|| "(no story)".to_string()),
        ),
        (SectionKind::Personalities, personality_text(spec)),
        (SectionKind::DialogueHistory, render_turns(history, &spec.roles)),
    ];
    if let Some(instruction) = instruction.map(str::trim).filter(|s| !s.is_empty()) {
        parts.push((SectionKind::Instruction, instruction.to_string()));
    }
    let bundle = PromptBundle::assemble(parts, config);
    if bundle.token_estimate > config.context_limit {
        return Err(PromptError::ContextOverflow {
            estimate: bundle.token_estimate,
            limit: config.context_limit,
        });
    }
    Ok(bundle)
}
