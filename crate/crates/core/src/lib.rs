//! Expert-augmented actor-critic training core.
//!
//! Everything in this crate is pure computation over in-memory values:
//! grid environments, the two-headed policy network with its exact reverse
//! pass, rollout collection and return estimation, expert demonstrations,
//! the Kronecker-factored natural-gradient optimizer and the combined
//! training update. File formats, the training driver with checkpoints,
//! sweeps and the command line live in the `eaktr` crate.
//!
//! The crate is `no_std` and only requires `alloc`.

#![no_std]

extern crate alloc;

pub mod env;
pub mod error;
pub mod eval;
pub mod expert;
pub mod kfac;
pub mod policy;
pub mod rng;
pub mod rollout;
pub mod trainer;

pub use error::{Error, Result};

/// Index into an environment's action set.
pub type ActionId = usize;
