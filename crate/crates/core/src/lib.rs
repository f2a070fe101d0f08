//! Federated training of user-authentication models with private random
//! binary embeddings.
//!
//! Each user draws its own Bernoulli(1/2) codeword, trains a shared network
//! with federated averaging to correlate its outputs with that codeword, and
//! calibrates a personal acceptance threshold after training.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod cli;
pub mod codebook;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod federation;
pub mod fedua;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};

/// Opaque user identifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}
