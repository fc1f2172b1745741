//! Command-line workflows and the annotation HTTP service.

pub mod commands;
pub mod config;
pub mod server;
