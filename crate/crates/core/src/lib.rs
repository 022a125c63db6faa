//! A small ReAct coding agent.
//!
//! The agent alternates between asking a chat model what to do next and
//! running the tools it requests: sandboxed file operations, a task list,
//! and code execution in a persistent interactive kernel that speaks the
//! Jupyter messaging protocol. Domain knowledge is supplied through a
//! layered prompt rather than baked into the loop.
//!
//! Crate layout:
//!
//! - [`session`]: the reason/act loop, conversation history and JSONL transcripts.
//! - [`llm`]: model providers (live chat-completions client, record and replay).
//! - [`tools`]: the tool registry, sandbox path resolution and the todo list.
//! - [`kernel`]: kernel subprocess management and the signed wire protocol.
//! - [`prompt`]: system / project / task prompt composition.
//! - [`bench`]: batch runs over problem directories, solution validation and
//!   the per-problem statistics table.

pub mod bench;
pub mod kernel;
pub mod llm;
pub mod prompt;
pub mod session;
pub mod tools;

pub use session::{run_session, SessionConfig, SessionOutcome, SessionStatus};
