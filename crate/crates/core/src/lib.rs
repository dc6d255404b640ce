//! Root-cause localization for microservice alert windows.

pub mod agents;
pub mod cli;
pub mod config;
pub mod eval;
pub mod graph;
pub mod llm;
pub mod memory;
pub mod reasoner;
pub mod scenario;
pub mod telemetry;
pub mod transcript;
