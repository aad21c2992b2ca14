//! Files, formats and command-line plumbing around `nbagent-core`.
//!
//! - [`checkpoint`]: versioned, digest-checked tensor container with atomic writes.
//! - [`config`]: TOML/JSON run configs with `NBAGENT_` environment overrides.
//! - [`manifest`]: JSON suite manifests that regenerate and verify a suite.
//! - [`session`]: train and evaluate against files on disk.
//! - [`bench`]: multi-seed method comparison with ordering gates.

pub mod artifacts;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod manifest;
pub mod session;

pub use nbagent_core as core;
