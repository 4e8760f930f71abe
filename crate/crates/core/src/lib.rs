//! Adversarial image-augmentation policy experiments at desk scale.
//!
//! The crate is organised bottom-up:
//!
//! - [`imgkernels`]: the 15 deterministic augmentation operations and PPM I/O.
//! - [`policyspace`]: the 5625-element space of ordered operation pairs.
//! - [`model`]: a small convnet with exact gradients and Nesterov SGD.
//! - [`selector`]: loss tables, exact adversarial selection, curricula and
//!   the REINFORCE controller.
//! - [`harness`]: datasets, the training loop and multi-seed experiments.
//! - [`report`]: usage histograms and results tables.
//! - [`cli`]: the `augarena` command-line surface.

pub mod cli;
pub mod error;
pub mod harness;
pub mod imgkernels;
pub mod model;
pub mod policyspace;
pub mod report;
pub mod rng;
pub mod selector;

pub use error::{Error, Result};
