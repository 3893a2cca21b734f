//! Command-line runner, deterministic replay and the WebSocket session server.

pub mod cli;
pub mod protocol;
pub mod server;
pub mod session;
