#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use futures::StreamExt;
use peer_agent_core::provider::{MockProvider, Provider};
use peer_agent_core::session::Runtime;
use peer_agent_core::SessionEvent;
use peer_agent_service::{AppState, LogStore, ServiceConfig};
use serde_json::{json, Value};
use tokio::sync::oneshot;

pub struct Server {
    pub base: String,
    pub state: Arc<AppState>,
    stop: Option<oneshot::Sender<()>>,
    task: Option<tokio::task::JoinHandle<()>>,
}

impl Server {
    pub async fn start(provider: Arc<dyn Provider>, store: Option<LogStore>) -> Self {
        Self::start_with(provider, store, ServiceConfig::default()).await
    }

    pub async fn start_with(provider: Arc<dyn Provider>, store: Option<LogStore>, config: ServiceConfig) -> Self {
        let state = AppState::new(Runtime::new(provider), config, store).unwrap();
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (stop, rx) = oneshot::channel();
        let st = state.clone();
        let task = tokio::spawn(async move {
            let shutdown = async {
                let _ = rx.await;
            };
            peer_agent_service::serve(listener, st, shutdown).await.unwrap();
        });
        Self { base, state, stop: Some(stop), task: Some(task) }
    }

    pub async fn mock() -> Self {
        Self::start(Arc::new(MockProvider::builtin()), None).await
    }

    pub async fn stop(mut self) {
        let _ = self.stop.take().unwrap().send(());
        let _ = self.task.take().unwrap().await;
    }

    pub fn ws_url(&self, session: &str, query: &str) -> String {
        format!("{}/sessions/{session}/events?{query}", self.base.replace("http://", "ws://"))
    }
}

pub struct Client {
    pub http: reqwest::Client,
    pub base: String,
}

impl Client {
    pub fn new(base: &str) -> Self {
        Self { http: reqwest::Client::new(), base: base.to_string() }
    }

    pub async fn post(&self, path: &str, token: Option<&str>, body: Value) -> (u16, Value) {
        let mut req = self.http.post(format!("{}{path}", self.base)).json(&body);
        if let Some(t) = token {
            req = req.bearer_auth(t);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    pub async fn get(&self, path: &str) -> (u16, Value) {
        let resp = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        let status = resp.status().as_u16();
        (status, resp.json().await.unwrap_or(Value::Null))
    }

    /// Creates a session with two players who have both submitted stances.
    pub async fn ready_session(&self, seed: u64, a: (&str, u8), b: (&str, u8)) -> (String, String, String) {
        let (s, created) = self.post("/sessions", None, json!({"dilemma_id": "killer-robots", "seed": seed})).await;
        assert_eq!(s, 201, "{created}");
        let id = created["session_id"].as_str().unwrap().to_string();
        let (_, p1) = self.post(&format!("/sessions/{id}/players"), None, json!({"player_id": "mina"})).await;
        let (_, p2) = self.post(&format!("/sessions/{id}/players"), None, json!({"player_id": "theo"})).await;
        let t1 = p1["token"].as_str().unwrap().to_string();
        let t2 = p2["token"].as_str().unwrap().to_string();
        let (s1, _) = self
            .post(&format!("/sessions/{id}/stance"), Some(&t1), json!({"stance": a.0, "confidence": a.1}))
            .await;
        let (s2, _) = self
            .post(&format!("/sessions/{id}/stance"), Some(&t2), json!({"stance": b.0, "confidence": b.1}))
            .await;
        assert_eq!((s1, s2), (200, 200));
        (id, t1, t2)
    }

    pub async fn say(&self, id: &str, token: &str, text: &str) -> (u16, Value) {
        self.post(&format!("/sessions/{id}/utterance?wait=true&debug=true"), Some(token), json!({"text": text})).await
    }
}

/// Reads events from a WebSocket until `until` matches or the timeout passes.
pub async fn collect_ws(url: &str, until: impl Fn(&SessionEvent) -> bool, timeout: Duration) -> Vec<SessionEvent> {
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let mut out = Vec::new();
    let _ = tokio::time::timeout(timeout, async {
        while let Some(Ok(msg)) = ws.next().await {
            if let tokio_tungstenite::tungstenite::Message::Text(text) = msg {
                let event: SessionEvent = serde_json::from_str(&text).unwrap();
                let done = until(&event);
                out.push(event);
                if done {
                    break;
                }
            }
        }
    })
    .await;
    out
}
