//! Lexical complexity prediction: assigning a continuous difficulty score
//! in [0, 1] to a target word or multi-word expression in context.
//!
//! The crate covers the full pipeline at desk scale: corpus loading and
//! frequency features ([`corpus`]), tokenization and input templates
//! ([`encoding`]), a small transformer regressor with hand-written
//! gradients ([`model`]), four training regimes including a virtual
//! adversarial regularizer ([`training`]), correlation/error metrics
//! ([`evaluation`]), checkpoint averaging and domain routing
//! ([`ensemble`]), and reproducible end-to-end runs ([`pipeline`]).
//!
//! Everything is deterministic given a seed: one RNG family, single
//! threaded math, ordered containers on every serialization path.

pub mod corpus;
pub mod encoding;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
