//! Hosts peer agent sessions over HTTP, streams their events over
//! WebSocket, and persists every session as a JSONL event log.

pub mod api;
pub mod remote;
pub mod store;

pub use api::{router, serve, AppState, ServiceConfig};
pub use remote::{RemoteConfig, RemoteProvider};
pub use store::{FileSink, LogStore};
