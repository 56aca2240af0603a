//! Agent-based simulation of validator geography under latency-driven timing games.

pub mod attestation;
pub mod config;
pub mod engine;
pub mod export;
pub mod metrics;
pub mod preset;
pub mod sources;
pub mod strategy;
pub mod topology;
