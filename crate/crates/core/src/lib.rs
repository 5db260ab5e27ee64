//! Dialogue engine that steers an LLM through two control prompts: one that
//! decides what the agent says or which command it runs, and one that decides
//! whether the customer has finished their turn.

pub mod asr;
pub mod dispatch;
pub mod event;
pub mod interpret;
pub mod llm;
pub mod prompt;
pub mod replay;
pub mod scenario;
pub mod session;
pub mod state;
pub mod transcript;
pub mod turn;
