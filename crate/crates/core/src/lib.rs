//! Faded-experience trust-region policy optimization.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.
//! It contains everything that is pure computation:
//!
//! - [`mlp`]: dense Tanh networks with reverse-mode gradients and
//!   forward-mode directional derivatives over a flat parameter vector.
//! - [`policy`]: diagonal-Gaussian policies, the faded-experience mixture of
//!   the current policy with memorized snapshots, closed-form KL and
//!   Fisher-vector products.
//! - [`advantage`]: rollout batches, rewards-to-go and GAE.
//! - [`trpo`]: conjugate gradient, surrogate/KL line search, value fit,
//!   memory shifting and the training driver.
//! - [`env`]: the K-user interference channel power-control environment.
//! - [`baselines`]: WMMSE, random and maximum power allocation.
//! - [`evaluation`]: held-out comparison of a policy with the baselines.
//!
//! File formats, the CLI and anything touching the clock live in the
//! `fetrpo` crate.

#![cfg_attr(not(feature = "std"), no_std)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod advantage;
pub mod baselines;
pub mod env;
mod error;
pub mod evaluation;
pub mod linalg;
mod math;
pub mod mlp;
pub mod policy;
pub mod trpo;

pub use error::{Error, Result};
