//! Acrostic couplet generation: a character-level language model writes the
//! antecedent clause from a chosen head character, an attention
//! encoder-decoder writes the matching subsequent clause, and a rule-based
//! scorer re-ranks the candidate pool. Decoding uses cluster-based beam
//! search to keep the pool diverse. Everything runs on a small hand-rolled
//! numeric kernel with manually derived gradients.

pub mod beam;
pub mod cell;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod heads;
pub mod kmeans;
pub mod lm;
pub mod ops;
pub mod optim;
pub mod params;
pub mod rerank;
pub mod rng;
pub mod s2s;
pub mod tensor;
pub mod vocab;

pub use error::{CoupletError, Result};
