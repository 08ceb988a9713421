//! Referents, domains, slots and permissible values.
//!
//! An [`Ontology`] is loaded from a versioned JSON document, validated once,
//! and is immutable afterwards. It bounds what can be sampled into a scenario,
//! what an annotator can label, and how a value is scored (categorical values
//! are matched exactly, free-form values get partial credit).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::text;

const SAMPLE_ONTOLOGY: &str = include_str!("../data/sample_ontology.json");
const SAMPLE_PLACEHOLDERS: &str = include_str!("../data/placeholders.json");

/// Default upper bound on a single `sample_triplets` call.
pub const DEFAULT_MAX_SAMPLE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlotKind {
    Categorical,
    FreeForm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SlotDef {
    pub name: String,
    pub kind: SlotKind,
    #[serde(rename = "values")]
    pub permissible_values: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl SlotDef {
    pub fn is_free_form(&self) -> bool {
        self.kind == SlotKind::FreeForm
    }

    /// The permissible value matching `value` under value identity, if any.
    pub fn permissible(&self, value: &str) -> Option<&str> {
        self.permissible_values
            .iter()
            .find(|v| text::same_value(v, value))
            .map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Domain {
    pub name: String,
    pub slots: Vec<SlotDef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawOntology")]
pub struct Ontology {
    pub version: String,
    pub referents: Vec<String>,
    pub domains: Vec<Domain>,
}

/// A referent-linked slot fill carrying exactly one value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triplet {
    pub referent: String,
    pub domain: String,
    pub slot: String,
    pub value: String,
}

impl Triplet {
    pub fn new(
        referent: impl Into<String>,
        domain: impl Into<String>,
        slot: impl Into<String>,
        value: impl Into<String>,
    ) -> Self {
        Triplet {
            referent: referent.into(),
            domain: domain.into(),
            slot: slot.into(),
            value: value.into(),
        }
    }
}

impl fmt::Display for Triplet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {})",
            self.referent, self.domain, self.slot, self.value
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyOntology,
    EmptyVersion,
    NoReferents,
    EmptyReferent,
    DuplicateReferent(String),
    EmptyDomainName,
    DuplicateDomain(String),
    EmptyDomain(String),
    EmptySlotName { domain: String },
    DuplicateSlot { domain: String, slot: String },
    UnknownKind { domain: String, slot: String, kind: String },
    EmptyValueSet { domain: String, slot: String },
    FreeFormWithValues { domain: String, slot: String },
    DuplicateValue { domain: String, slot: String, value: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyOntology => write!(f, "empty ontology"),
            Violation::EmptyVersion => write!(f, "missing version tag"),
            Violation::NoReferents => write!(f, "no referents declared"),
            Violation::EmptyReferent => write!(f, "empty referent label"),
            Violation::DuplicateReferent(r) => write!(f, "duplicate referent {r:?}"),
            Violation::EmptyDomainName => write!(f, "empty domain name"),
            Violation::DuplicateDomain(d) => write!(f, "duplicate domain {d:?}"),
            Violation::EmptyDomain(d) => write!(f, "domain {d:?} has no slots"),
            Violation::EmptySlotName { domain } => write!(f, "empty slot name in domain {domain:?}"),
            Violation::DuplicateSlot { domain, slot } => {
                write!(f, "duplicate slot {slot:?} in domain {domain:?}")
            }
            Violation::UnknownKind { domain, slot, kind } => {
                write!(f, "unknown kind {kind:?} for slot {domain}/{slot}")
            }
            Violation::EmptyValueSet { domain, slot } => {
                write!(f, "categorical slot {domain}/{slot} has an empty value set")
            }
            Violation::FreeFormWithValues { domain, slot } => {
                write!(f, "free-form slot {domain}/{slot} lists permissible values")
            }
            Violation::DuplicateValue {
                domain,
                slot,
                value,
            } => write!(f, "duplicate value {value:?} for slot {domain}/{slot}"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum OntologyError {
    #[error("ontology parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid ontology: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("cannot read ontology {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TripletError {
    #[error("unknown referent {0:?}")]
    UnknownReferent(String),
    #[error("unknown slot {domain}/{slot}")]
    UnknownSlot { domain: String, slot: String },
    #[error("value {value:?} is not permissible for {domain}/{slot}")]
    ValueNotPermitted {
        domain: String,
        slot: String,
        value: String,
    },
    #[error("empty value")]
    EmptyValue,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SampleError {
    #[error("sample count must be at least 1")]
    ZeroCount,
    #[error("sample count {requested} exceeds the configured maximum {max}")]
    TooMany { requested: usize, max: usize },
    #[error("no placeholder values available for free-form slot {domain}/{slot}")]
    NoPlaceholders { domain: String, slot: String },
}

#[derive(Deserialize)]
struct RawOntology {
    #[serde(default)]
    version: String,
    #[serde(default)]
    referents: Vec<String>,
    #[serde(default)]
    domains: Vec<RawDomain>,
}

#[derive(Deserialize)]
struct RawDomain {
    #[serde(default)]
    name: String,
    #[serde(default)]
    slots: Vec<RawSlot>,
}

#[derive(Deserialize)]
struct RawSlot {
    #[serde(default)]
    name: String,
    #[serde(default)]
    kind: String,
    #[serde(default)]
    values: Vec<String>,
    #[serde(default)]
    description: Option<String>,
}

impl TryFrom<RawOntology> for Ontology {
    type Error = OntologyError;

    fn try_from(raw: RawOntology) -> Result<Self, Self::Error> {
        let mut violations = Vec::new();
        if raw.version.trim().is_empty() {
            violations.push(Violation::EmptyVersion);
        }
        if raw.referents.is_empty() {
            violations.push(Violation::NoReferents);
        }
        let mut seen = BTreeSet::new();
        for r in &raw.referents {
            if r.trim().is_empty() {
                violations.push(Violation::EmptyReferent);
            } else if !seen.insert(r.as_str()) {
                violations.push(Violation::DuplicateReferent(r.clone()));
            }
        }
        if raw.domains.is_empty() {
            violations.push(Violation::EmptyOntology);
        }

        let mut domain_names = BTreeSet::new();
        let mut domains = Vec::with_capacity(raw.domains.len());
        for d in raw.domains {
            if d.name.trim().is_empty() {
                violations.push(Violation::EmptyDomainName);
            } else if !domain_names.insert(d.name.clone()) {
                violations.push(Violation::DuplicateDomain(d.name.clone()));
            }
            if d.slots.is_empty() {
                violations.push(Violation::EmptyDomain(d.name.clone()));
            }
            let mut slot_names = BTreeSet::new();
            let mut slots = Vec::with_capacity(d.slots.len());
            for s in d.slots {
                if s.name.trim().is_empty() {
                    violations.push(Violation::EmptySlotName {
                        domain: d.name.clone(),
                    });
                } else if !slot_names.insert(s.name.clone()) {
                    violations.push(Violation::DuplicateSlot {
                        domain: d.name.clone(),
                        slot: s.name.clone(),
                    });
                }
                let kind = match s.kind.as_str() {
                    "categorical" => SlotKind::Categorical,
                    "free_form" => SlotKind::FreeForm,
                    other => {
                        violations.push(Violation::UnknownKind {
                            domain: d.name.clone(),
                            slot: s.name.clone(),
                            kind: other.to_string(),
                        });
                        continue;
                    }
                };
                match kind {
                    SlotKind::Categorical if s.values.is_empty() => {
                        violations.push(Violation::EmptyValueSet {
                            domain: d.name.clone(),
                            slot: s.name.clone(),
                        })
                    }
                    SlotKind::FreeForm if !s.values.is_empty() => {
                        violations.push(Violation::FreeFormWithValues {
                            domain: d.name.clone(),
                            slot: s.name.clone(),
                        })
                    }
                    _ => {}
                }
                let mut values_seen = BTreeSet::new();
                for v in &s.values {
                    if !values_seen.insert(text::normalize(v)) {
                        violations.push(Violation::DuplicateValue {
                            domain: d.name.clone(),
                            slot: s.name.clone(),
                            value: v.clone(),
                        });
                    }
                }
                slots.push(SlotDef {
                    name: s.name,
                    kind,
                    permissible_values: s.values,
                    description: s.description,
                });
            }
            domains.push(Domain {
                name: d.name,
                slots,
            });
        }

        if !violations.is_empty() {
            return Err(OntologyError::Invalid(violations));
        }
        Ok(Ontology {
            version: raw.version,
            referents: raw.referents,
            domains,
        })
    }
}

impl Ontology {
    /// Parse and validate an ontology document.
    pub fn from_json(source: &str) -> Result<Self, OntologyError> {
        let raw: RawOntology = serde_json::from_str(source).map_err(|e| OntologyError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Ontology::try_from(raw)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, OntologyError> {
        let path = path.as_ref();
        let source = std::fs::read_to_string(path).map_err(|source| OntologyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ontology::from_json(&source)
    }

    /// Canonical document form; `from_json(render())` reproduces `self`.
    pub fn render(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("ontology serializes");
        out.push('\n');
        out
    }

    /// The bundled sample ontology (illustrative: 6 referents, 10 domains, 60 slots).
    pub fn sample() -> Self {
        Ontology::from_json(SAMPLE_ONTOLOGY).expect("bundled ontology is valid")
    }

    pub fn has_referent(&self, referent: &str) -> bool {
        self.referents.iter().any(|r| r == referent)
    }

    pub fn domain(&self, name: &str) -> Option<&Domain> {
        self.domains.iter().find(|d| d.name == name)
    }

    pub fn slot(&self, domain: &str, slot: &str) -> Option<&SlotDef> {
        self.domain(domain)?.slots.iter().find(|s| s.name == slot)
    }

    pub fn slot_kind(&self, domain: &str, slot: &str) -> Option<SlotKind> {
        self.slot(domain, slot).map(|s| s.kind)
    }

    pub fn slot_count(&self) -> usize {
        self.domains.iter().map(|d| d.slots.len()).sum()
    }

    /// All `(domain, slot)` pairs in document order.
    pub fn slots(&self) -> impl Iterator<Item = (&Domain, &SlotDef)> {
        self.domains
            .iter()
            .flat_map(|d| d.slots.iter().map(move |s| (d, s)))
    }

    pub fn validate_triplet(&self, t: &Triplet) -> Result<(), TripletError> {
        if !self.has_referent(&t.referent) {
            return Err(TripletError::UnknownReferent(t.referent.clone()));
        }
        let slot = self
            .slot(&t.domain, &t.slot)
            .ok_or_else(|| TripletError::UnknownSlot {
                domain: t.domain.clone(),
                slot: t.slot.clone(),
            })?;
        if t.value.trim().is_empty() {
            return Err(TripletError::EmptyValue);
        }
        if slot.kind == SlotKind::Categorical && slot.permissible(&t.value).is_none() {
            return Err(TripletError::ValueNotPermitted {
                domain: t.domain.clone(),
                slot: t.slot.clone(),
                value: t.value.clone(),
            });
        }
        Ok(())
    }

    /// Draw `count` triplets. Referents and slots are uniform; categorical
    /// values are uniform over the permissible set; free-form values come from
    /// the placeholder pool in `config`.
    pub fn sample_triplets(
        &self,
        seed: u64,
        count: usize,
        config: &SamplingConfig,
    ) -> Result<Vec<Triplet>, SampleError> {
        if count == 0 {
            return Err(SampleError::ZeroCount);
        }
        if count > config.max_count {
            return Err(SampleError::TooMany {
                requested: count,
                max: config.max_count,
            });
        }
        let all_slots: Vec<(&Domain, &SlotDef)> = self.slots().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut used = BTreeSet::new();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            // Prefer fresh (referent, slot) keys; tiny ontologies fall back to repeats.
            let mut pick = None;
            for _ in 0..32 {
                let referent = &self.referents[rng.random_range(0..self.referents.len())];
                let (domain, slot) = all_slots[rng.random_range(0..all_slots.len())];
                let key = (referent.clone(), domain.name.clone(), slot.name.clone());
                let fresh = !used.contains(&key);
                pick = Some((key, domain, slot));
                if fresh {
                    break;
                }
            }
            let ((referent, _, _), domain, slot) = pick.expect("at least one attempt");
            let value = match slot.kind {
                SlotKind::Categorical => slot
                    .permissible_values
                    .choose(&mut rng)
                    .expect("validated non-empty")
                    .clone(),
                SlotKind::FreeForm => config
                    .pool(&domain.name, &slot.name)
                    .choose(&mut rng)
                    .ok_or_else(|| SampleError::NoPlaceholders {
                        domain: domain.name.clone(),
                        slot: slot.name.clone(),
                    })?
                    .clone(),
            };
            used.insert((referent.clone(), domain.name.clone(), slot.name.clone()));
            out.push(Triplet::new(referent, &domain.name, &slot.name, value));
        }
        Ok(out)
    }
}

/// Free-form placeholder pools and sampling limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    #[serde(default = "default_max")]
    pub max_count: usize,
    /// Keyed by `"Domain/Slot"`.
    #[serde(default)]
    pub placeholders: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    pub fallback: Vec<String>,
}

fn default_max() -> usize {
    DEFAULT_MAX_SAMPLE
}

impl SamplingConfig {
    pub fn pool(&self, domain: &str, slot: &str) -> &[String] {
        match self.placeholders.get(&format!("{domain}/{slot}")) {
            Some(pool) if !pool.is_empty() => pool,
            _ => &self.fallback,
        }
    }

    pub fn from_json(source: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(source)
    }
}

impl Default for SamplingConfig {
    /// The placeholder pools shipped with the sample ontology.
    fn default() -> Self {
        SamplingConfig::from_json(SAMPLE_PLACEHOLDERS).expect("bundled placeholders are valid")
    }
}
