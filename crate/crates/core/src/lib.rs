//! Writer-independent online signature verification.
//!
//! Pen trajectories become 12-channel local feature sequences
//! ([`preprocess`]), a bidirectional LSTM autoencoder with attention maps them
//! to fixed-length vectors ([`autoencoder`]), and a Siamese network scores
//! query/reference pairs ([`siamese`]). [`eval`] turns those scores into
//! accept/reject decisions and error rates.

pub mod autoencoder;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod numeric;
pub mod pipeline;
pub mod preprocess;
pub mod siamese;
mod rng;

pub use error::{Error, Result};
pub use rng::stream_seed;
