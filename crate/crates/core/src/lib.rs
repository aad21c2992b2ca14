//! Never-ending behavior cloning at desk scale.
//!
//! A continual-learning agent that learns a stream of procedurally generated
//! manipulation skills. Instructions are routed to skill-specific latents and
//! low-rank adapters through an adaptive language bank, skill-shared scene
//! knowledge is kept alive by rendering a semantic neural field and by
//! distilling the previous task's policy on replayed keyframes.
//!
//! This crate is `no_std` (with `alloc`) and contains every algorithm; file
//! formats, the CLI and the benchmark harness live in the `nbagent` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod distill;
pub mod evalkit;
pub mod geometry;
pub mod numerics;
pub mod perceiver;
pub mod sep;
pub mod ssr;
pub mod synthbench;
pub mod trainer;
