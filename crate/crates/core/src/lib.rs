//! Autoregressive generation strategies for Top-K sequential recommendation.
//!
//! A small decoder-only transformer is trained on item-id sequences and then
//! asked to continue each user's history. The continuation can be read
//! directly (greedy, beam search, temperature sampling) or several sampled
//! continuations can be merged into one list (reciprocal rank aggregation,
//! relevance aggregation).
//!
//! The numeric core is generic over [`Scalar`] (`f32`, `f64`); relevance
//! accumulators are generic over [`Weight`] and also work with exact
//! rationals. The aliases below fix the common choices.

pub mod aggregate;
pub mod data;
pub mod decode;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod runner;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::{Scalar, Weight};

/// Transformer with 32-bit parameters, the training default.
pub type Gpt = model::GptModel<f32>;
/// Transformer with 64-bit parameters, used for gradient checks and oracles.
pub type Gpt64 = model::GptModel<f64>;
pub type Params = model::ModelParameters<f32>;
pub type Scores = model::ScoreVector<f32>;
pub type Sequence = decode::GeneratedSequence<f32>;
pub type RelevanceF64 = aggregate::Relevance<f64>;
/// Exact rational relevance, for order-sensitive checks without rounding.
pub type ExactRelevance = aggregate::Relevance<num_rational::Ratio<i64>>;
