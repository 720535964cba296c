//! Command-line interface and WebSocket session service.

pub mod cli;
pub mod service;
