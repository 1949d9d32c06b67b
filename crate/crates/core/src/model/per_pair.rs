//! Ablation: one edge encoder per (node, neighbor) pair instead of one per
//! edge type. Used only to measure what type sharing saves.

use std::collections::BTreeMap;

use super::encoders::{finish_bundle, frames_tensor, reduce, EncodingBundle, Mode, SceneCache};
use super::lstm::{run_lstm, LstmVars};
use super::registry::{LstmParams, WeightRegistry, FRAME_FEATURES};
use crate::autodiff::{Tape, Tensor};
use crate::data::TrainingExample;
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct PairEncoders {
    cells: BTreeMap<(u32, u32), LstmParams>,
}

impl PairEncoders {
    /// Add a private edge LSTM to `reg` for every directed edge of `example`.
    pub fn build(reg: &mut WeightRegistry, example: &TrainingExample, seed: u64) -> Result<Self> {
        let hidden = reg.config().ee_hidden;
        let mut cells = BTreeMap::new();
        for node in example.humans() {
            for &n in example.graph.neighbors(node.id)? {
                let p = reg.add_lstm(
                    &format!("EEpair/{}-{}", node.id, n),
                    FRAME_FEATURES,
                    hidden,
                    seed,
                )?;
                cells.insert((node.id, n), p);
            }
        }
        Ok(Self { cells })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Like [`super::encode_node`], but each neighbor goes through its own
    /// encoder and the results are merged in neighbor id order.
    pub fn encode_node(
        &self,
        tape: &mut Tape,
        reg: &WeightRegistry,
        example: &TrainingExample,
        id: u32,
        mode: Mode,
        cache: &mut SceneCache,
    ) -> Result<EncodingBundle> {
        let node = example.node(id)?;
        let modules = reg.node(node.node_type)?;
        let mut vars = Vec::new();
        for &n in example.graph.neighbors(id)? {
            let p = self
                .cells
                .get(&(id, n))
                .ok_or_else(|| Error::UnknownId(format!("no pair encoder for {id}-{n}")))?;
            let cell = LstmVars::bind(tape, reg.store(), p)?;
            let xs = tape.constant(frames_tensor(reg.config(), &example.node(n)?.history)?);
            vars.push(run_lstm(tape, &cell, xs, false)?.0);
        }
        let edge_influence = if vars.is_empty() {
            tape.constant(Tensor::zeros(&[1, reg.config().eie_width()]))
        } else {
            reduce(tape, reg, reg.config().reducer, modules.eie.as_ref(), &vars)?
        };
        finish_bundle(tape, reg, example, id, edge_influence, mode, cache)
    }
}
