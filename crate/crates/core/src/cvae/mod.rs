//! Discrete-latent CVAE: prior and posterior heads, exact-enumeration ELBO
//! and NLL, training and sampling.

mod objective;
mod sample;
#[cfg(test)]
mod tests;
mod train;

pub use crate::model::LatentSpec;
pub use objective::{
    elbo, elbo_on_tape, eval_nll, kl_categorical, latent_factors, mean_nll, node_nlls, node_terms,
    posterior, prior, selector, terms_from_bundle, CategoricalFactors, NodeTerms,
};
pub use sample::{sample_futures, sample_node, sample_nodes, NodeSamples, SampledFuture};
pub use train::{batch_gradient, train, MetricsRecord, TrainConfig, TrainReport};
