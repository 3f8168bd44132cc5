//! Data grammar, corpus filtering, prompt construction, supervision targets
//! and metrics for conversational agents that learn when to speak.
//!
//! Everything here is synchronous and free of I/O beyond what callers pass
//! in, so it also builds for `wasm32-unknown-unknown`.

pub mod corpus;
pub mod decision;
pub mod fixtures;
pub mod generation;
pub mod metrics;
pub mod training;
pub mod transcript;
