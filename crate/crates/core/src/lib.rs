//! Dynamic draft-length control for speculative decoding.
//!
//! A cheap draft model proposes tokens, a target model verifies them, and a
//! stopping policy decides how many tokens to draft per round. Policies range
//! from fixed-length drafting through single threshold rules to bandits that
//! learn which rule to trust, per session or per draft position.
//!
//! Models are abstracted behind [`models::ModelPair`]; two implementations
//! ship with the crate: a seeded synthetic pair and a replay of recorded
//! traces.

pub mod arms;
pub mod bandits;
pub mod controller;
pub mod dist;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
