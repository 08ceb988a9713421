//! Corpora on disk, splitting, statistics, and name substitution.
//!
//! A corpus directory holds `manifest.json` and one JSON document per
//! dialogue. Documents are keyed by `(id, annotator)` so that several
//! annotations of one dialogue can live side by side.

mod anonymize;
mod split;
mod stats;

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::document::{DialogueDocument, DocumentError};
use crate::ontology::{Ontology, OntologyError};

pub use anonymize::{anonymize, AnonymizeError, NamePool};
pub use split::{split_corpus, split_sizes, SplitError, SplitStrategy};
pub use stats::{compute_stats, render_stats_table, CorpusStats, MeanStd};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub provenance: String,
    /// Ontology file, relative to the corpus directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ontology: Option<String>,
    /// Document files, relative to the corpus directory.
    pub documents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub provenance: String,
    pub ontology: Option<String>,
    pub documents: Vec<DialogueDocument>,
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported manifest version {0}")]
    Version(u32),
    #[error("document {id:?} (annotator {annotator:?}) appears more than once")]
    DuplicateDocument { id: String, annotator: Option<String> },
    #[error(transparent)]
    Invalid(#[from] DocumentError),
    #[error(transparent)]
    Ontology(#[from] OntologyError),
}

impl CorpusError {
    /// `true` for failures reading or writing files.
    pub fn is_io(&self) -> bool {
        match self {
            CorpusError::Io { .. } => true,
            CorpusError::Ontology(OntologyError::Io { .. }) => true,
            _ => false,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Parse JSON from a file, reporting the position of syntax or schema errors.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CorpusError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&raw).map_err(|e| CorpusError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("values serialize");
    s.push('\n');
    s
}

fn file_name(doc: &DialogueDocument) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect()
    };
    match &doc.annotator {
        Some(a) => format!("{}.{}.json", clean(&doc.id), clean(a)),
        None => format!("{}.json", clean(&doc.id)),
    }
}

impl Corpus {
    pub fn new(provenance: impl Into<String>, documents: Vec<DialogueDocument>) -> Self {
        Corpus {
            provenance: provenance.into(),
            ontology: None,
            documents,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    fn check_unique(&self) -> Result<(), CorpusError> {
        let mut seen = BTreeSet::new();
        for d in &self.documents {
            if !seen.insert((d.id.as_str(), d.annotator.as_deref())) {
                return Err(CorpusError::DuplicateDocument {
                    id: d.id.clone(),
                    annotator: d.annotator.clone(),
                });
            }
        }
        Ok(())
    }

    /// Read a corpus directory (or a manifest path).
    pub fn load(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
        let path = path.as_ref();
        let (dir, manifest_path) = if path.is_dir() {
            (path.to_path_buf(), path.join(MANIFEST_FILE))
        } else {
            (
                path.parent().map(Path::to_path_buf).unwrap_or_default(),
                path.to_path_buf(),
            )
        };
        let manifest: Manifest = read_json(&manifest_path)?;
        if manifest.version != MANIFEST_VERSION {
            return Err(CorpusError::Version(manifest.version));
        }
        let documents = manifest
            .documents
            .iter()
            .map(|f| read_json::<DialogueDocument>(&dir.join(f)))
            .collect::<Result<Vec<_>, _>>()?;
        let corpus = Corpus {
            provenance: manifest.provenance,
            ontology: manifest.ontology.map(|o| dir.join(o).to_string_lossy().into_owned()),
            documents,
        };
        corpus.check_unique()?;
        Ok(corpus)
    }

    /// The ontology named by the manifest, if any.
    pub fn load_ontology(&self) -> Result<Option<Ontology>, CorpusError> {
        self.ontology
            .as_deref()
            .map(|p| Ontology::load(p).map_err(CorpusError::from))
            .transpose()
    }

    /// Check every document against `ontology`.
    pub fn validate(&self, ontology: &Ontology) -> Result<(), CorpusError> {
        self.check_unique()?;
        for d in &self.documents {
            d.check(ontology)?;
        }
        Ok(())
    }

    /// Write the manifest and documents into `dir`. When `ontology` is given
    /// it is written alongside as `ontology.json`.
    pub fn save(&self, dir: impl AsRef<Path>, ontology: Option<&Ontology>) -> Result<(), CorpusError> {
        let dir = dir.as_ref();
        self.check_unique()?;
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut files = Vec::with_capacity(self.documents.len());
        for doc in &self.documents {
            let name = file_name(doc);
            let path = dir.join(&name);
            fs::write(&path, to_pretty_json(doc)).map_err(io_err(&path))?;
            files.push(name);
        }
        let ontology_file = match ontology {
            Some(o) => {
                let path = dir.join("ontology.json");
                fs::write(&path, o.render()).map_err(io_err(&path))?;
                Some("ontology.json".to_string())
            }
            None => None,
        };
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            provenance: self.provenance.clone(),
            ontology: ontology_file,
            documents: files,
        };
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, to_pretty_json(&manifest)).map_err(io_err(&path))
    }
}
