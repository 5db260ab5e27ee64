//! Session service for the metactl dialogue engine: live sessions over
//! HTTP and WebSocket, each driven by its own tick loop.

pub mod service;
pub mod session;

pub use service::{router, AppState, LlmChoice, ServiceConfig};
