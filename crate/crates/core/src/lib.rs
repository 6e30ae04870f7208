//! Control plane for scheduler policy optimization.
//!
//! Agents observe a workload through tiered analysis endpoints, pick or
//! synthesize a scheduling policy from a content-addressed repository,
//! push it through a staged verifier and deploy it under canary
//! supervision. A deterministic discrete-event CPU simulator stands in for
//! the kernel so the whole loop runs in-process.

pub mod domain;
pub mod dsl;
pub mod repo;
pub mod analysis;
pub mod sim;
pub mod server;
pub mod verifier;
pub mod agent;
