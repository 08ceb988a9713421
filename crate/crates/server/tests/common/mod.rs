#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

use parley_core::document::DialogueDocument;
use parley_core::ontology::Ontology;
use parley_lm::{LanguageModel, LmClient, MockBackend, MockScript, RetryPolicy};
use parley_server::api::{serve, AppState};
use parley_session::demo::{plan_script, DialoguePlan, EDIT_SUFFIX, REGENERATE_INSTRUCTION};
use parley_session::{Orchestrator, SessionStore};

/// An in-process server on an ephemeral port, stopped on drop.
pub struct TestServer {
    pub base: String,
    pub store: PathBuf,
    pub http: Client,
    _dir: Option<tempfile::TempDir>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl TestServer {
    pub fn start(script: MockScript, corpora: Option<PathBuf>) -> TestServer {
        let dir = tempfile::tempdir().unwrap();
        let mut s = TestServer::start_at(dir.path(), script, corpora);
        s._dir = Some(dir);
        s
    }

    pub fn start_at(store_dir: &Path, script: MockScript, corpora: Option<PathBuf>) -> TestServer {
        TestServer::with_backend(store_dir, Arc::new(MockBackend::new(script).unwrap()), corpora)
    }

    pub fn with_backend(store_dir: &Path, backend: Arc<dyn LanguageModel>, corpora: Option<PathBuf>) -> TestServer {
        let ontology = Arc::new(Ontology::sample());
        let lm = LmClient::new(backend).with_retry(RetryPolicy::immediate(1));
        let store = SessionStore::open(store_dir).unwrap();
        let state = Arc::new(AppState::new(store, Orchestrator::new(ontology, lm), corpora, 4));
        let (addr_tx, addr_rx) = std::sync::mpsc::channel();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Runtime::new().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                serve(listener, state, async {
                    let _ = stopped.await;
                })
                .await
                .unwrap();
            });
        });
        let addr = addr_rx.recv().unwrap();
        TestServer {
            base: format!("http://{addr}"),
            store: store_dir.to_path_buf(),
            http: Client::new(),
            _dir: None,
            stop: Some(stop),
            thread: Some(thread),
        }
    }

    /// A client for a server running elsewhere.
    pub fn attach(base: &str) -> TestServer {
        TestServer {
            base: base.trim_end_matches('/').to_string(),
            store: PathBuf::new(),
            http: Client::new(),
            _dir: None,
            stop: None,
            thread: None,
        }
    }

    fn send(&self, req: reqwest::blocking::RequestBuilder) -> (StatusCode, Value) {
        let resp = req.send().unwrap();
        let status = resp.status();
        let text = resp.text().unwrap();
        let body = serde_json::from_str(&text).unwrap_or_else(|e| panic!("non-JSON body {text:?}: {e}"));
        (status, body)
    }

    pub fn get(&self, path: &str) -> (StatusCode, Value) {
        self.send(self.http.get(format!("{}{path}", self.base)))
    }

    pub fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.send(self.http.post(format!("{}{path}", self.base)).json(&body))
    }

    pub fn post_raw(&self, path: &str, body: &str) -> (StatusCode, Value) {
        self.send(
            self.http
                .post(format!("{}{path}", self.base))
                .header("content-type", "application/json")
                .body(body.to_string()),
        )
    }

    pub fn patch(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.send(self.http.patch(format!("{}{path}", self.base)).json(&body))
    }

    pub fn delete(&self, path: &str) -> (StatusCode, Value) {
        self.send(self.http.delete(format!("{}{path}", self.base)))
    }

    /// POST that must succeed with 200.
    pub fn ok(&self, path: &str, body: Value) -> Value {
        let (status, v) = self.post(path, body);
        assert_eq!(status, StatusCode::OK, "{path}: {v}");
        v
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

pub fn plan_server(plan: &DialoguePlan) -> TestServer {
    TestServer::start(MockScript::positional(plan_script(plan)), None)
}

/// Drive `plan` through the HTTP API the way a reviewer would, finishing with
/// `:complete`. Returns the session id and the emitted document.
pub fn drive_plan(server: &TestServer, plan: &DialoguePlan) -> (String, DialogueDocument) {
    let (status, created) = server.post("/sessions", json!({ "id": plan.id, "scenario": plan.scenario }));
    assert_eq!(status, StatusCode::CREATED, "{created}");
    let id = created["id"].as_str().unwrap().to_string();
    let s = |suffix: &str| format!("/sessions/{id}{suffix}");
    server.ok(&s(":story"), json!({}));
    let mut document = None;
    for (k, sub) in plan.subdialogues.iter().enumerate() {
        let proposed = server.ok(&s("/subdialogue:propose"), json!({}));
        let first = proposed["session"]["history"].as_array().unwrap().len() + 1;
        if sub.draft_first {
            server.ok(
                &s("/subdialogue:regenerate"),
                json!({ "instruction": REGENERATE_INSTRUCTION }),
            );
        }
        let state = server.get(&s("")).1;
        let proposal_len = state["current"]["turns"].as_array().unwrap().len();
        if sub.filler {
            let seq = state["next_seq"].as_u64().unwrap();
            let (status, v) = server.delete(&s(&format!("/turns/{}?expected_seq={seq}", first + proposal_len - 1)));
            assert_eq!(status, StatusCode::OK, "{v}");
        }
        if sub.edit_first_agent {
            let seq = server.get(&s("")).1["next_seq"].as_u64().unwrap();
            let text = format!("{}{EDIT_SUFFIX}", sub.exchanges[0].agent);
            let (status, v) = server.patch(&s(&format!("/turns/{first}")), json!({ "text": text, "expected_seq": seq }));
            assert_eq!(status, StatusCode::OK, "{v}");
        }
        for (j, x) in sub.exchanges.iter().enumerate() {
            for span in &x.spans {
                let t = &span.triplet;
                let (status, v) = server.post(
                    &s("/annotations"),
                    json!({
                        "turn_index": first + 2 * j + 1,
                        "char_start": span.char_start,
                        "char_end": span.char_end,
                        "referent": t.referent,
                        "domain": t.domain,
                        "slot": t.slot,
                    }),
                );
                if status == StatusCode::CONFLICT {
                    assert_eq!(v["code"], "conflict", "{v}");
                    let prompt = &v["details"]["conflict"];
                    let existing: Vec<&str> =
                        prompt["existing"].as_array().unwrap().iter().map(|e| e.as_str().unwrap()).collect();
                    let prior = span.prior.as_deref().filter(|p| existing.contains(p));
                    server.ok(
                        &s(&format!("/conflicts/{}:resolve", prompt["id"])),
                        json!({ "resolution": span.resolution, "prior": prior }),
                    );
                } else {
                    assert_eq!(status, StatusCode::OK, "{v}");
                }
            }
        }
        if k + 1 < plan.subdialogues.len() {
            server.ok(&s(":commit"), json!({}));
        } else {
            let done = server.ok(&s(":complete"), json!({}));
            assert_eq!(done["reply"]["kind"], "completed", "{done}");
            let doc = done["session"]["document"].clone();
            document = Some(serde_json::from_value(doc).unwrap());
        }
    }
    (id, document.expect("the last subdialogue completes the session"))
}
