use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::{CompletionRequest, FinishReason, LanguageModel, LmError, RawCompletion};

/// Exponential backoff between attempts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            initial_backoff_ms: 250,
            multiplier: 2.0,
            max_backoff_ms: 5_000,
        }
    }
}

impl RetryPolicy {
    /// No waiting between attempts.
    pub fn immediate(max_attempts: u32) -> Self {
        RetryPolicy {
            max_attempts,
            initial_backoff_ms: 0,
            ..RetryPolicy::default()
        }
    }

    /// Delay before attempt `attempt + 1`, for `attempt >= 1`.
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = self.multiplier.powi(attempt.saturating_sub(1) as i32);
        let ms = (self.initial_backoff_ms as f64 * factor).min(self.max_backoff_ms as f64);
        Duration::from_millis(ms as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum AuditOutcome {
    Ok { text: String, finish_reason: FinishReason },
    Error { message: String },
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub backend: String,
    pub model: String,
    pub prompt_hash: String,
    pub request: CompletionRequest,
    pub attempts: u32,
    pub latency_ms: u64,
    pub outcome: AuditOutcome,
}

/// Append-only JSONL record of every completion call.
#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    file: File,
    next_seq: u64,
}

impl AuditLog {
    /// Open for appending; sequence numbers continue after existing lines.
    pub fn open(path: impl AsRef<Path>) -> Result<AuditLog, LmError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| LmError::Io {
            path: path.clone(),
            source,
        };
        let existing = match File::open(&path) {
            Ok(f) => BufReader::new(f).lines().count() as u64,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => 0,
            Err(e) => return Err(io(e)),
        };
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        Ok(AuditLog {
            path,
            file,
            next_seq: existing,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&mut self, mut record: AuditRecord) -> Result<(), LmError> {
        record.seq = self.next_seq;
        let mut line = serde_json::to_string(&record).expect("audit records serialize");
        line.push('\n');
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|source| LmError::Io {
                path: self.path.clone(),
                source,
            })?;
        self.next_seq += 1;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Vec<AuditRecord>, LmError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| LmError::InvalidScript(format!("{}:{}: {e}", path.display(), i + 1)))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub request_id: String,
    pub text: String,
    pub finish_reason: FinishReason,
    pub backend: String,
    pub prompt_hash: String,
    pub attempts: u32,
    pub latency_ms: u64,
}

/// A backend plus retry policy and optional audit log. Cheap to clone.
#[derive(Clone)]
pub struct LmClient {
    backend: Arc<dyn LanguageModel>,
    retry: RetryPolicy,
    audit: Option<Arc<Mutex<AuditLog>>>,
    next_id: Arc<AtomicU64>,
}

impl std::fmt::Debug for LmClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LmClient")
            .field("backend", &self.backend.name())
            .field("retry", &self.retry)
            .finish()
    }
}

impl LmClient {
    pub fn new(backend: Arc<dyn LanguageModel>) -> Self {
        LmClient {
            backend,
            retry: RetryPolicy::default(),
            audit: None,
            next_id: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_audit(mut self, log: AuditLog) -> Self {
        self.audit = Some(Arc::new(Mutex::new(log)));
        self
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    /// Validate, call the backend with retries, and append an audit record.
    pub fn complete(&self, request: &CompletionRequest) -> Result<CompletionResult, LmError> {
        request.params.validate()?;
        let mut request = request.clone();
        if request.request_id.is_empty() {
            let n = self.next_id.fetch_add(1, Ordering::Relaxed);
            request.request_id = format!("{}-{n}", self.backend.name());
        }
        let started = Instant::now();
        let max = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        let result: Result<RawCompletion, LmError> = loop {
            attempt += 1;
            match self.backend.complete(&request) {
                Ok(raw) if raw.text.trim().is_empty() => break Err(LmError::EmptyCompletion),
                Ok(raw) => break Ok(raw),
                Err(e) if e.is_retryable() && attempt < max => {
                    tracing::warn!(backend = self.backend.name(), attempt, error = %e, "retrying completion");
                    std::thread::sleep(self.retry.backoff(attempt));
                }
                Err(e) => break Err(e),
            }
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        let hash = request.prompt_hash();
        if let Some(audit) = &self.audit {
            let outcome = match &result {
                Ok(raw) => AuditOutcome::Ok {
                    text: raw.text.clone(),
                    finish_reason: raw.finish_reason,
                },
                Err(e) => AuditOutcome::Error { message: e.to_string() },
            };
            let record = AuditRecord {
                seq: 0,
                backend: self.backend.name().to_string(),
                model: self.backend.model().to_string(),
                prompt_hash: hash.clone(),
                request: request.clone(),
                attempts: attempt,
                latency_ms,
                outcome,
            };
            audit.lock().unwrap_or_else(|p| p.into_inner()).append(record)?;
        }
        result.map(|raw| CompletionResult {
            request_id: request.request_id,
            text: raw.text,
            finish_reason: raw.finish_reason,
            backend: self.backend.name().to_string(),
            prompt_hash: hash,
            attempts: attempt,
            latency_ms,
        })
    }
}
