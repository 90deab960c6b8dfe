//! Two-tier reward model system for GUI agents.
//!
//! The crate is organized bottom-up: [`domain`] types, the deterministic
//! [`rules`] verifier, a synthetic [`world`] simulator, reward data
//! synthesis in [`synth`], reward model [`backend`]s with a wire protocol,
//! the per-step [`pipeline`] with dual-loop reflux, multi-round
//! [`evolution`], and [`metrics`] / reporting.

pub mod domain;
pub mod evolution;
pub mod metrics;
pub mod pipeline;
pub mod backend;
pub mod rules;
pub mod seed;
pub mod synth;
pub mod world;
