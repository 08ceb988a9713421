//! Turns, subdialogues and the `<div>`/`<p>` wire format exchanged with the LM.
//!
//! The canonical wire form puts one `<p>` per line inside a single bare
//! `<div>`:
//!
//! ```text
//! <div>
//! <p>Alice: How may I help you today?</p>
//! <p>Bob: I am calling regarding a car accident.</p>
//! </div>
//! ```
//!
//! The parser tolerates any whitespace between tags and ignores chatter
//! outside the `<div>`, but rejects attributes, nested tags and unknown tags
//! inside the element.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Agent,
    User,
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Speaker::Agent => "agent",
            Speaker::User => "user",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    /// 1-based position in the enclosing dialogue (or subdialogue).
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn new(index: usize, speaker: Speaker, text: impl Into<String>) -> Self {
        Turn {
            index,
            speaker,
            text: text.into(),
        }
    }

    /// Length of the turn text in characters, the unit of span offsets.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    LmProposed,
    HumanEdited,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subdialogue {
    pub turns: Vec<Turn>,
    pub provenance: Provenance,
}

impl Subdialogue {
    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }
}

/// Display names for the two roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRoleMap")]
pub struct RoleMap {
    agent: String,
    user: String,
}

#[derive(Deserialize)]
struct RawRoleMap {
    agent: String,
    user: String,
}

impl TryFrom<RawRoleMap> for RoleMap {
    type Error = RoleMapError;
    fn try_from(raw: RawRoleMap) -> Result<Self, Self::Error> {
        RoleMap::new(raw.agent, raw.user)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RoleMapError {
    #[error("no display name for the {0} role")]
    MissingName(Speaker),
    #[error("display name {0:?} cannot contain ':' or markup")]
    InvalidName(String),
    #[error("agent and user share the display name {0:?}")]
    SameName(String),
}

impl RoleMap {
    pub fn new(agent: impl Into<String>, user: impl Into<String>) -> Result<Self, RoleMapError> {
        let agent = agent.into().trim().to_string();
        let user = user.into().trim().to_string();
        for (name, role) in [(&agent, Speaker::Agent), (&user, Speaker::User)] {
            if name.is_empty() {
                return Err(RoleMapError::MissingName(role));
            }
            if name.contains(':') || name.contains('<') || name.contains('>') || name.contains('&') {
                return Err(RoleMapError::InvalidName(name.clone()));
            }
        }
        if agent.eq_ignore_ascii_case(&user) {
            return Err(RoleMapError::SameName(agent));
        }
        Ok(RoleMap { agent, user })
    }

    pub fn name(&self, speaker: Speaker) -> &str {
        match speaker {
            Speaker::Agent => &self.agent,
            Speaker::User => &self.user,
        }
    }

    pub fn speaker_for(&self, name: &str) -> Option<Speaker> {
        let name = name.trim();
        if name.eq_ignore_ascii_case(&self.agent) {
            Some(Speaker::Agent)
        } else if name.eq_ignore_ascii_case(&self.user) {
            Some(Speaker::User)
        } else {
            None
        }
    }

    pub fn agent(&self) -> &str {
        &self.agent
    }

    pub fn user(&self) -> &str {
        &self.user
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WireError {
    #[error("missing <div> element")]
    MissingDiv,
    #[error("unclosed <div> element")]
    UnclosedDiv,
    #[error("empty subdialogue")]
    EmptySubdialogue,
    #[error("unclosed <p> element: {fragment:?}")]
    UnclosedTurn { fragment: String },
    #[error("nested or unknown tag inside <p>: {fragment:?}")]
    NestedTag { fragment: String },
    #[error("unexpected tag inside <div>: {fragment:?}")]
    UnexpectedTag { fragment: String },
    #[error("text outside <p> inside <div>: {fragment:?}")]
    StrayText { fragment: String },
    #[error("turn without a speaker prefix: {fragment:?}")]
    MissingSpeaker { fragment: String },
    #[error("unknown speaker {name:?} in {fragment:?}")]
    UnknownSpeaker { name: String, fragment: String },
    #[error("turn with empty text: {fragment:?}")]
    EmptyTurn { fragment: String },
}

fn starts_with_tag(s: &str, tag: &str) -> bool {
    s.len() >= tag.len() && s.as_bytes()[..tag.len()].eq_ignore_ascii_case(tag.as_bytes())
}

fn find_tag(s: &str, tag: &str) -> Option<usize> {
    let lower = s.to_ascii_lowercase();
    lower.find(tag)
}

fn fragment(s: &str) -> String {
    let mut out: String = s.chars().take(80).collect();
    if s.chars().count() > 80 {
        out.push('…');
    }
    out
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    s.replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&amp;", "&")
}

fn encode_entities(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Parse LM output into a subdialogue. Turns are numbered from 1.
pub fn parse_subdialogue(wire: &str, roles: &RoleMap) -> Result<Subdialogue, WireError> {
    let start = find_tag(wire, "<div>").ok_or(WireError::MissingDiv)?;
    let mut rest = &wire[start + "<div>".len()..];
    let mut turns = Vec::new();
    loop {
        rest = rest.trim_start();
        if rest.is_empty() {
            return Err(WireError::UnclosedDiv);
        }
        if starts_with_tag(rest, "</div>") {
            break;
        }
        if starts_with_tag(rest, "<p>") {
            let body_start = &rest["<p>".len()..];
            let lt = body_start.find('<').ok_or_else(|| WireError::UnclosedTurn {
                fragment: fragment(rest),
            })?;
            if !starts_with_tag(&body_start[lt..], "</p>") {
                return Err(WireError::NestedTag {
                    fragment: fragment(rest),
                });
            }
            let body = &body_start[..lt];
            turns.push(parse_turn(body, turns.len() + 1, roles)?);
            rest = &body_start[lt + "</p>".len()..];
            continue;
        }
        if rest.starts_with('<') {
            let end = rest.find('>').map_or(rest.len(), |i| i + 1);
            return Err(WireError::UnexpectedTag {
                fragment: fragment(&rest[..end]),
            });
        }
        let end = rest.find('<').unwrap_or(rest.len());
        return Err(WireError::StrayText {
            fragment: fragment(&rest[..end]),
        });
    }
    if turns.is_empty() {
        return Err(WireError::EmptySubdialogue);
    }
    Ok(Subdialogue {
        turns,
        provenance: Provenance::LmProposed,
    })
}

fn parse_turn(body: &str, index: usize, roles: &RoleMap) -> Result<Turn, WireError> {
    let decoded = decode_entities(body);
    let (name, text) = decoded
        .split_once(": ")
        .ok_or_else(|| WireError::MissingSpeaker {
            fragment: fragment(body),
        })?;
    let speaker = roles
        .speaker_for(name)
        .ok_or_else(|| WireError::UnknownSpeaker {
            name: name.trim().to_string(),
            fragment: fragment(body),
        })?;
    let text = text.trim();
    if text.is_empty() {
        return Err(WireError::EmptyTurn {
            fragment: fragment(body),
        });
    }
    Ok(Turn::new(index, speaker, text))
}

/// Render turns in the canonical wire form.
pub fn render_turns<'a>(turns: impl IntoIterator<Item = &'a Turn>, roles: &RoleMap) -> String {
    let mut out = String::from("<div>\n");
    for t in turns {
        out.push_str("<p>");
        out.push_str(roles.name(t.speaker));
        out.push_str(": ");
        out.push_str(&encode_entities(&t.text));
        out.push_str("</p>\n");
    }
    out.push_str("</div>");
    out
}

pub fn render_subdialogue(s: &Subdialogue, roles: &RoleMap) -> String {
    render_turns(&s.turns, roles)
}

/// Phrases that mark an LM attempt to end the dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TerminationSignals {
    pub phrases: Vec<String>,
    /// Only inspect agent turns.
    #[serde(default)]
    pub agent_only: bool,
}

impl Default for TerminationSignals {
    fn default() -> Self {
        TerminationSignals {
            phrases: vec![
                "have a good day".to_string(),
                "good bye".to_string(),
                "goodbye".to_string(),
            ],
            agent_only: false,
        }
    }
}

impl TerminationSignals {
    pub fn detect(&self, turns: &[Turn]) -> bool {
        let phrases: Vec<String> = self
            .phrases
            .iter()
            .map(|p| crate::text::normalize(p))
            .filter(|p| !p.is_empty())
            .collect();
        turns
            .iter()
            .filter(|t| !self.agent_only || t.speaker == Speaker::Agent)
            .any(|t| {
                let text = crate::text::normalize(&t.text);
                phrases.iter().any(|p| text.contains(p.as_str()))
            })
    }
}

/// `true` iff some turn contains one of the signal phrases, ignoring case.
pub fn detect_termination(s: &Subdialogue, signals: &TerminationSignals) -> bool {
    signals.detect(&s.turns)
}
