//! Logistic LDA: a discriminative topic model over groups of items.
//!
//! Items inside a group (words of a document, images on a board, ...) share a
//! Dirichlet-distributed topic mixture. Each item's topic is predicted by a
//! classifier `f` whose logits are biased by the group's expected log topic
//! proportions. The crate provides
//!
//! * [`math`]: digamma/trigamma, simplex operations and seeded samplers,
//! * [`encoders`]: the logit functions (MLP, token table, fixed LDA likelihoods),
//! * [`mean_field`]: coordinate-ascent inference and the evidence lower bound,
//! * [`regularizer`]: the topic-usage regularizer and its running estimate,
//! * [`training`]: variational training and discriminative training through
//!   unrolled inference,
//! * [`lda`]: a classical LDA baseline (synthetic generator, collapsed Gibbs),
//! * [`data_io`]: corpus, checkpoint and prediction file formats,
//! * [`eval`]: accuracy, majority voting, topic matching and topic listings.
//!
//! All numerical code is generic over a [`Scalar`] (`f32` or `f64`). The
//! aliases at the crate root fix the scalar to `f64`, which is what the file
//! formats and the command-line tool use.

// `!(x > 0)` is used on purpose so NaN is rejected too
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data_io;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod lda;
pub mod math;
pub mod mean_field;
pub mod regularizer;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Simplex = math::Simplex<f64>;
pub type PositiveVector = math::PositiveVector<f64>;
pub type Item = encoders::Item<f64>;
pub type EncoderParams = encoders::EncoderParams<f64>;
pub type EncoderGradient = encoders::EncoderGradient<f64>;
pub type Group = mean_field::Group<f64>;
pub type MeanFieldState = mean_field::MeanFieldState<f64>;
pub type HyperParams = mean_field::HyperParams<f64>;
pub type RegularizerState = regularizer::RegularizerState<f64>;
pub type Corpus = data_io::Corpus<f64>;
pub type Trainer = training::Trainer<f64>;
pub type Tape = training::Tape<f64>;
pub type GibbsState = lda::GibbsState<f64>;
