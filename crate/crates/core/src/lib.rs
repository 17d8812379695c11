//! Teammate type inference for ad-hoc teamwork in a cooperative kitchen
//! gridworld.

pub mod classify;
pub mod cli;
pub mod config;
pub mod env;
pub mod fingerprint;
pub mod harness;
pub mod llm_client;
pub mod pipeline;
pub mod policies;
pub mod retrieval;
pub mod rollout;
pub mod rubric;
