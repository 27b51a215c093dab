//! Sequence and feed-forward layers.

mod attention;
mod dense;
mod dropout;
mod lstm;

pub use attention::{additive_attention, AttentionOutput, AttentionParams, AttentionVars};
pub use dense::{dense, dense_forward, Activation, DenseParams};
pub use dropout::{dropout, dropout_apply, dropout_mask, DropoutSpec, Mode};
pub use lstm::{bilstm_forward, lstm_sequence, lstm_step, mask_starts, BiOutput, LstmParams, LstmVars};
