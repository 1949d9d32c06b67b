use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::prior;
use crate::autodiff::{Tape, Tensor};
use crate::data::TrainingExample;
use crate::dynamics::{rollout, CourtAction, CourtState};
use crate::error::Result;
use crate::model::{encode_node, DecoderVars, Feedback, Mode, SceneCache, WeightRegistry};

/// One sampled future of one node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledFuture {
    pub z: Vec<usize>,
    pub actions: Vec<CourtAction>,
    /// `S` states after the prediction frame.
    pub states: Vec<CourtState>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSamples {
    pub id: u32,
    pub samples: Vec<SampledFuture>,
}

fn node_stream(base: u64, id: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(base ^ (u64::from(id) + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Draw `count` futures for each modeled node: `z` from the prior, then a
/// decoder rollout feeding back its own samples.
///
/// Each node draws from its own stream derived from one value taken from
/// `rng`, so a node's samples do not depend on which other nodes exist.
pub fn sample_futures<R: Rng + ?Sized>(
    example: &TrainingExample,
    reg: &WeightRegistry,
    count: usize,
    rng: &mut R,
) -> Result<Vec<NodeSamples>> {
    let ids: Vec<u32> = example.humans().map(|n| n.id).collect();
    sample_nodes(example, reg, &ids, count, rng)
}

/// [`sample_futures`] restricted to `ids`. A node gets the same draws as it
/// would from [`sample_futures`] with the same `rng` state.
pub fn sample_nodes<R: Rng + ?Sized>(
    example: &TrainingExample,
    reg: &WeightRegistry,
    ids: &[u32],
    count: usize,
    rng: &mut R,
) -> Result<Vec<NodeSamples>> {
    let base = rng.next_u64();
    ids.iter()
        .map(|&id| {
            Ok(NodeSamples {
                id,
                samples: sample_node(example, reg, id, count, &mut node_stream(base, id))?,
            })
        })
        .collect()
}

/// Futures for a single node.
pub fn sample_node<R: Rng + ?Sized>(
    example: &TrainingExample,
    reg: &WeightRegistry,
    id: u32,
    count: usize,
    rng: &mut R,
) -> Result<Vec<SampledFuture>> {
    if count == 0 {
        return Ok(Vec::new());
    }
    let spec = reg.config().latent;
    let node = example.node(id)?;
    let mut tape = Tape::new();
    let bundle = encode_node(
        &mut tape,
        reg,
        example,
        id,
        Mode::Inference,
        &mut SceneCache::default(),
    )?;
    let lp = prior(&mut tape, reg, node.node_type, &bundle)?;
    let probs: Vec<Vec<f64>> = tape
        .value(lp)
        .data()
        .chunks(spec.k_z)
        .map(|r| r.iter().map(|x| x.exp()).collect())
        .collect();
    let zs: Vec<Vec<usize>> = (0..count)
        .map(|_| {
            probs
                .iter()
                .map(|p| {
                    let r: f64 = rng.random();
                    let mut acc = 0.0;
                    p.iter()
                        .position(|&x| {
                            acc += x;
                            r < acc
                        })
                        .unwrap_or(spec.k_z - 1)
                })
                .collect()
        })
        .collect();
    let sel = Tensor::from_rows(
        &zs.iter()
            .map(|z| spec.one_hot(z))
            .collect::<Result<Vec<_>>>()?,
    )?;
    let ctx = bundle.context(&mut tape)?;
    let dec = DecoderVars::bind(&mut tape, reg, node.node_type)?;
    let (_, drawn) = dec.rollout(
        &mut tape,
        ctx,
        &sel,
        node.current().action,
        example.horizon(),
        Feedback::Sample(rng),
    )?;
    let start = node.current().state;
    zs.into_iter()
        .zip(drawn)
        .map(|(z, actions)| {
            let mut states = rollout(start, &actions, example.dt)?;
            states.remove(0);
            Ok(SampledFuture { z, actions, states })
        })
        .collect()
}
