//! Continual generalized zero-shot learning with a meta-learned attribute
//! embedding and replay memory.
//!
//! Class attribute vectors are mapped into the visual feature space by a
//! self-gated network with scaled normalization; samples are classified by
//! scaled cosine similarity to the embedded classes. Training runs
//! first-order meta-learning (Reptile) over N-way K-shot episodes that mix the
//! current task with samples replayed from a fixed-size memory.

mod binio;
pub mod continual;
pub mod data;
pub mod error;
pub mod layers;
pub mod model;
pub mod numerics;
pub mod optim;
pub mod pipeline;
pub mod protocols;

pub use error::{Error, FormatError, Result};
pub use numerics::{Dense2D, Real, Rng};

/// Crate version, recorded in run provenance.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
