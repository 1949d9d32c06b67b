//! Typed encoders: edge (EE), edge influence (EIE), node history (NHE),
//! future conditional (FCE) and node future (NFE).

use std::collections::BTreeMap;

use super::config::{Aggregation, ModelConfig, Reducer};
use super::lstm::{run_bilstm, run_lstm, BiLstmVars, LstmVars};
use super::registry::{WeightRegistry, FRAME_FEATURES};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{Frame, TrainingExample};
use crate::error::{Error, Result};
use crate::graph::{EdgeType, NodeType};

/// Whether the ground-truth future may be read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Inference,
}

/// Scaled `[l, w, dl, dw]` rows, one per frame.
pub fn frames_tensor(cfg: &ModelConfig, frames: &[Frame]) -> Result<Tensor> {
    let data = frames.iter().flat_map(|f| cfg.features(f)).collect();
    Tensor::new(vec![frames.len(), FRAME_FEATURES], data)
}

/// Per-step aggregate of neighbor features, `H × 4`.
pub fn edge_input(
    cfg: &ModelConfig,
    neighbors: &[&[Frame]],
    aggregation: Aggregation,
) -> Result<Tensor> {
    let h = neighbors
        .first()
        .map(|n| n.len())
        .ok_or_else(|| Error::Contract("edge input over zero neighbors".into()))?;
    let mut data = vec![0.0; h * FRAME_FEATURES];
    for (j, hist) in neighbors.iter().enumerate() {
        if hist.len() != h {
            return Err(Error::Contract(format!(
                "neighbor {j} history has {} steps, expected {h}",
                hist.len()
            )));
        }
        for (t, f) in hist.iter().enumerate() {
            for (d, x) in cfg.features(f).into_iter().enumerate() {
                data[t * FRAME_FEATURES + d] += x;
            }
        }
    }
    if aggregation == Aggregation::Mean {
        let n = neighbors.len() as f64;
        data.iter_mut().for_each(|x| *x /= n);
    }
    Tensor::new(vec![h, FRAME_FEATURES], data)
}

/// Final EE hidden state per edge type present in `buckets`.
pub fn encode_edges(
    tape: &mut Tape,
    reg: &WeightRegistry,
    history_len: usize,
    buckets: &BTreeMap<EdgeType, Vec<&[Frame]>>,
) -> Result<BTreeMap<EdgeType, Var>> {
    let cfg = reg.config();
    let mut out = BTreeMap::new();
    for (et, neighbors) in buckets {
        if neighbors.is_empty() {
            continue;
        }
        if let Some(bad) = neighbors.iter().find(|n| n.len() != history_len) {
            return Err(Error::Contract(format!(
                "neighbor history of {} steps on edge {et}, node history is {history_len}",
                bad.len()
            )));
        }
        let cell = LstmVars::bind(tape, reg.store(), reg.ee(et)?)?;
        let xs = tape.constant(edge_input(cfg, neighbors, cfg.aggregation)?);
        let (h, _) = run_lstm(tape, &cell, xs, false)?;
        out.insert(*et, h);
    }
    Ok(out)
}

/// Merge edge encodings in canonical edge-key order. No edges gives zeros.
pub fn encode_edge_influence(
    tape: &mut Tape,
    reg: &WeightRegistry,
    node_type: NodeType,
    encodings: &BTreeMap<EdgeType, Var>,
) -> Result<Var> {
    let cfg = reg.config();
    let modules = reg.node(node_type)?;
    if encodings.is_empty() {
        return Ok(tape.constant(Tensor::zeros(&[1, cfg.eie_width()])));
    }
    let mut ordered: Vec<(String, Var)> = encodings.iter().map(|(et, &v)| (et.key(), v)).collect();
    ordered.sort_by(|a, b| a.0.cmp(&b.0));
    let vars: Vec<Var> = ordered.into_iter().map(|(_, v)| v).collect();
    reduce(tape, reg, cfg.reducer, modules.eie.as_ref(), &vars)
}

pub(crate) fn reduce(
    tape: &mut Tape,
    reg: &WeightRegistry,
    reducer: Reducer,
    eie: Option<&super::registry::BiLstmParams>,
    vars: &[Var],
) -> Result<Var> {
    match reducer {
        Reducer::Sum => {
            let mut acc = vars[0];
            for &v in &vars[1..] {
                acc = tape.add(acc, v)?;
            }
            Ok(acc)
        }
        Reducer::Max => {
            let mut acc = vars[0];
            for &v in &vars[1..] {
                acc = tape.maximum(acc, v)?;
            }
            Ok(acc)
        }
        Reducer::BiLstm => {
            let p =
                eie.ok_or_else(|| Error::Contract("bi-LSTM reducer without EIE weights".into()))?;
            let cell = BiLstmVars::bind(tape, reg.store(), p)?;
            let xs = tape.concat(vars, 0)?;
            run_bilstm(tape, &cell, xs)
        }
    }
}

/// Final NHE hidden state over the node's own history.
pub fn encode_history(
    tape: &mut Tape,
    reg: &WeightRegistry,
    node_type: NodeType,
    history: &[Frame],
) -> Result<Var> {
    if history.is_empty() {
        return Err(Error::Contract("empty node history".into()));
    }
    let cell = LstmVars::bind(tape, reg.store(), &reg.node(node_type)?.nhe)?;
    let xs = tape.constant(frames_tensor(reg.config(), history)?);
    Ok(run_lstm(tape, &cell, xs, false)?.0)
}

/// FCE summary of the candidate agent future, or zeros when the node is not
/// adjacent to the agent. The zero branch never touches FCE weights.
pub fn encode_future_conditional(
    tape: &mut Tape,
    reg: &WeightRegistry,
    agent_future: &[Frame],
    adjacent: bool,
) -> Result<Var> {
    if !adjacent {
        return Ok(tape.constant(Tensor::zeros(&[1, reg.config().fce_width()])));
    }
    if agent_future.is_empty() {
        return Err(Error::Contract(
            "empty agent future for an adjacent node".into(),
        ));
    }
    let cell = BiLstmVars::bind(tape, reg.store(), reg.fce())?;
    let xs = tape.constant(frames_tensor(reg.config(), agent_future)?);
    run_bilstm(tape, &cell, xs)
}

/// NFE summary of the node's ground-truth future. Training only.
pub fn encode_node_future(
    tape: &mut Tape,
    reg: &WeightRegistry,
    node_type: NodeType,
    future: &[Frame],
    mode: Mode,
) -> Result<Var> {
    if mode == Mode::Inference {
        return Err(Error::Contract(
            "the node future encoder is training-only".into(),
        ));
    }
    if future.is_empty() {
        return Err(Error::Contract("empty node future".into()));
    }
    let cell = BiLstmVars::bind(tape, reg.store(), &reg.node(node_type)?.nfe)?;
    let xs = tape.constant(frames_tensor(reg.config(), future)?);
    run_bilstm(tape, &cell, xs)
}

/// Everything the prior, posterior and decoder read for one node.
#[derive(Clone, Copy, Debug)]
pub struct EncodingBundle {
    pub edge_influence: Var,
    pub history: Var,
    pub future_conditional: Var,
    pub node_future: Option<Var>,
}

impl EncodingBundle {
    /// `[edge influence ‖ history ‖ future conditional]`, `1 × C`.
    pub fn context(&self, tape: &mut Tape) -> Result<Var> {
        tape.concat(
            &[self.edge_influence, self.history, self.future_conditional],
            1,
        )
    }
}

/// Encodings shared by all nodes of one example on one tape.
#[derive(Debug, Default)]
pub struct SceneCache {
    fce: Option<Var>,
}

/// Full encoder stack for node `id` of `example`.
pub fn encode_node(
    tape: &mut Tape,
    reg: &WeightRegistry,
    example: &TrainingExample,
    id: u32,
    mode: Mode,
    cache: &mut SceneCache,
) -> Result<EncodingBundle> {
    let node = example.node(id)?;
    if node.node_type.is_agent() {
        return Err(Error::Contract(format!(
            "node {id} is the agent and is not modeled"
        )));
    }
    let h = node.history.len();
    let mut buckets: BTreeMap<EdgeType, Vec<&[Frame]>> = BTreeMap::new();
    for (et, ids) in example.graph.neighbors_by_edge_type(id)? {
        let hists = ids
            .iter()
            .map(|&n| example.node(n).map(|s| s.history.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        buckets.insert(et, hists);
    }
    let edges = encode_edges(tape, reg, h, &buckets)?;
    let edge_influence = encode_edge_influence(tape, reg, node.node_type, &edges)?;
    finish_bundle(tape, reg, example, id, edge_influence, mode, cache)
}

/// History, future-conditional and node-future encodings around a given
/// edge influence.
pub(crate) fn finish_bundle(
    tape: &mut Tape,
    reg: &WeightRegistry,
    example: &TrainingExample,
    id: u32,
    edge_influence: Var,
    mode: Mode,
    cache: &mut SceneCache,
) -> Result<EncodingBundle> {
    let node = example.node(id)?;
    let history = encode_history(tape, reg, node.node_type, &node.history)?;
    let adjacent = example.graph.agent_adjacent(id, example.agent_id)?;
    let future_conditional = if adjacent {
        match cache.fce {
            Some(v) => v,
            None => {
                let v = encode_future_conditional(tape, reg, &example.agent().future, true)?;
                cache.fce = Some(v);
                v
            }
        }
    } else {
        encode_future_conditional(tape, reg, &[], false)?
    };
    let node_future = match mode {
        Mode::Train => Some(encode_node_future(
            tape,
            reg,
            node.node_type,
            &node.future,
            mode,
        )?),
        Mode::Inference => None,
    };
    Ok(EncodingBundle {
        edge_influence,
        history,
        future_conditional,
        node_future,
    })
}
