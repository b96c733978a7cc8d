//! Language models that memorize token sequences explicitly in stacked
//! correlation matrix memories.

pub mod bench;
pub mod cmm;
pub mod corpus;
pub mod embeddings;
pub mod memo;
pub mod persist;
pub mod error;
pub mod projections;
pub mod real;
pub mod rng;
pub mod single;

pub use error::{MemoError, Result};
pub use real::{Dtype, Real};

/// Index of a token in the vocabulary. Id 0 is reserved for padding.
pub type TokenId = u32;

/// Padding token placed before contexts shorter than a full window.
pub const PAD: TokenId = 0;
