//! Graph-structured CVAE-LSTM for multimodal trajectory prediction of
//! interacting humans.
//!
//! The scene at a prediction time is a proximity graph over typed nodes.
//! Every human node gets its own copy of the encoder/decoder stack, with
//! weights shared by node type and edge type, and a discrete latent
//! variable lets the decoder express several distinct futures.

pub mod autodiff;
pub mod cvae;
pub mod data;
pub mod dynamics;
mod error;
pub mod experiments;
pub mod graph;
pub mod model;

pub use error::{Error, Result};
