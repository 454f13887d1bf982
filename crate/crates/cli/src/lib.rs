//! Command-line runner and live WebSocket service around the `contactplan` library.

pub mod commands;
pub mod protocol;
pub mod server;
pub mod session;
