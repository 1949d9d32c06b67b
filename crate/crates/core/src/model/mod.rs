//! Encoders, weight registry and GMM decoder.

mod config;
mod decoder;
mod encoders;
mod gmm;
mod lstm;
mod per_pair;
mod registry;

pub use config::{Aggregation, LatentSpec, ModelConfig, Reducer, TypeSet, ENUMERATION_BOUND};
pub use decoder::{decode_gmm, DecoderVars, Feedback};
pub use encoders::{
    edge_input, encode_edge_influence, encode_edges, encode_future_conditional, encode_history,
    encode_node, encode_node_future, frames_tensor, EncodingBundle, Mode, SceneCache,
};
pub use gmm::{
    gmm_log_density, gmm_sample, gmm_sequence_log_likelihood, sample_component, GmmParams,
};
pub use lstm::{
    lstm_step, lstm_step_projected, run_bilstm, run_lstm, BiLstmVars, DenseVars, LstmVars,
};
pub use per_pair::PairEncoders;
pub use registry::{
    ee_key, node_key, BiLstmParams, DecoderParams, Dense, LstmParams, NodeModules, WeightRegistry,
    FCE_KEY,
};
