//! Command-line and HTTP plumbing around the couplet generation pipeline.

pub mod commands;
pub mod config;
pub mod pipeline;
pub mod server;
