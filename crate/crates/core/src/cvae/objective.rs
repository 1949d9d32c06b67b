use serde::{Deserialize, Serialize};

use crate::autodiff::{lse, Tape, Tensor, Var};
use crate::data::{NodeSeries, TrainingExample};
use crate::error::{Error, Result};
use crate::model::{
    encode_node, DecoderVars, DenseVars, EncodingBundle, LatentSpec, Mode, SceneCache,
    WeightRegistry,
};

/// Independent categoricals, one row of log-probabilities per latent variable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalFactors {
    pub log_probs: Vec<Vec<f64>>,
}

impl CategoricalFactors {
    pub fn from_probs(probs: &[Vec<f64>]) -> Self {
        Self {
            log_probs: probs
                .iter()
                .map(|r| r.iter().map(|p| p.ln()).collect())
                .collect(),
        }
    }

    /// Normalize raw logits row by row.
    pub fn from_logits(logits: &[Vec<f64>]) -> Self {
        Self {
            log_probs: logits
                .iter()
                .map(|r| {
                    let z = lse(r.iter().copied());
                    r.iter().map(|x| x - z).collect()
                })
                .collect(),
        }
    }

    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.log_probs
            .iter()
            .map(|r| r.iter().map(|x| x.exp()).collect())
            .collect()
    }

    pub fn spec(&self) -> LatentSpec {
        LatentSpec {
            n_k: self.log_probs.len(),
            k_z: self.log_probs.first().map_or(0, Vec::len),
        }
    }

    fn from_tape(tape: &Tape, v: Var, spec: LatentSpec) -> Self {
        let d = tape.value(v).data();
        Self {
            log_probs: d.chunks(spec.k_z).map(<[f64]>::to_vec).collect(),
        }
    }
}

/// `Σ_v Σ_k q ln(q/p)`, with `0·ln(0/·) = 0`.
pub fn kl_categorical(q: &CategoricalFactors, p: &CategoricalFactors) -> Result<f64> {
    if q.spec() != p.spec() {
        return Err(Error::Contract(format!(
            "KL between latent layouts {:?} and {:?}",
            q.spec(),
            p.spec()
        )));
    }
    let mut total = 0.0;
    for (v, (lq, lp)) in q.log_probs.iter().zip(&p.log_probs).enumerate() {
        for (k, (&a, &b)) in lq.iter().zip(lp).enumerate() {
            let qk = a.exp();
            if qk == 0.0 {
                continue;
            }
            if b == f64::NEG_INFINITY {
                return Err(Error::KlOverflow {
                    variable: v,
                    category: k,
                    q: qk,
                });
            }
            total += qk * (a - b);
        }
    }
    Ok(total)
}

/// One-hot rows for every joint assignment, `K_z^N_K × N_K·K_z`.
pub fn selector(spec: LatentSpec) -> Result<Tensor> {
    let b = spec.joint_size()?;
    let rows: Vec<Vec<f64>> = (0..b)
        .map(|j| spec.one_hot(&spec.decode(j)))
        .collect::<Result<_>>()?;
    Tensor::from_rows(&rows)
}

fn factor_log_probs(tape: &mut Tape, logits: Var, spec: LatentSpec) -> Result<Var> {
    let grid = tape.reshape(logits, vec![spec.n_k, spec.k_z])?;
    tape.log_softmax(grid, 1)
}

/// Prior log-probabilities `N_K × K_z` from the context.
pub fn prior(
    tape: &mut Tape,
    reg: &WeightRegistry,
    node_type: crate::graph::NodeType,
    bundle: &EncodingBundle,
) -> Result<Var> {
    let ctx = bundle.context(tape)?;
    prior_from_context(tape, reg, node_type, ctx)
}

fn prior_from_context(
    tape: &mut Tape,
    reg: &WeightRegistry,
    node_type: crate::graph::NodeType,
    ctx: Var,
) -> Result<Var> {
    let dense = DenseVars::bind(tape, reg.store(), &reg.node(node_type)?.prior);
    let logits = dense.apply(tape, ctx)?;
    factor_log_probs(tape, logits, reg.config().latent)
}

/// Posterior log-probabilities `N_K × K_z` from context and node future.
pub fn posterior(
    tape: &mut Tape,
    reg: &WeightRegistry,
    node_type: crate::graph::NodeType,
    bundle: &EncodingBundle,
) -> Result<Var> {
    let nfe = bundle
        .node_future
        .ok_or_else(|| Error::Contract("posterior needs the node future encoding".into()))?;
    let ctx = bundle.context(tape)?;
    posterior_from_context(tape, reg, node_type, ctx, nfe)
}

fn posterior_from_context(
    tape: &mut Tape,
    reg: &WeightRegistry,
    node_type: crate::graph::NodeType,
    ctx: Var,
    nfe: Var,
) -> Result<Var> {
    let dense = DenseVars::bind(tape, reg.store(), &reg.node(node_type)?.posterior);
    let input = tape.concat(&[ctx, nfe], 1)?;
    let logits = dense.apply(tape, input)?;
    factor_log_probs(tape, logits, reg.config().latent)
}

/// Per-node objective terms recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct NodeTerms {
    /// `−log Σ_z p(z|x) p(y|x,z)`, `1 × 1`.
    pub nll: Var,
    /// Present in training mode.
    pub elbo: Option<Var>,
    pub prior: Var,
    pub posterior: Option<Var>,
}

pub fn node_terms(
    tape: &mut Tape,
    reg: &WeightRegistry,
    example: &TrainingExample,
    id: u32,
    mode: Mode,
    beta: f64,
    cache: &mut SceneCache,
) -> Result<NodeTerms> {
    let bundle = encode_node(tape, reg, example, id, mode, cache)?;
    terms_from_bundle(tape, reg, example.node(id)?, &bundle, beta)
}

/// Objective terms for `node` given its encodings.
pub fn terms_from_bundle(
    tape: &mut Tape,
    reg: &WeightRegistry,
    node: &NodeSeries,
    bundle: &EncodingBundle,
    beta: f64,
) -> Result<NodeTerms> {
    let spec = reg.config().latent;
    let ctx = bundle.context(tape)?;
    let lp = prior_from_context(tape, reg, node.node_type, ctx)?;
    let lp_flat = tape.reshape(lp, vec![spec.one_hot_width(), 1])?;
    let sel = selector(spec)?;
    let b = sel.shape()[0];
    let sel_var = tape.constant(sel.clone());
    let log_pz = tape.matmul(sel_var, lp_flat)?;

    let dec = DecoderVars::bind(tape, reg, node.node_type)?;
    let ll_row = dec.log_likelihood(
        tape,
        ctx,
        &sel,
        node.current().action,
        &node.future_actions(),
    )?;
    let ll = tape.reshape(ll_row, vec![b, 1])?;
    let joint = tape.add(log_pz, ll)?;
    let marginal = tape.logsumexp(joint, 0)?;
    let nll = tape.neg(marginal);

    let (elbo, posterior) = match bundle.node_future {
        Some(nfe) => {
            let lq = posterior_from_context(tape, reg, node.node_type, ctx, nfe)?;
            let lq_flat = tape.reshape(lq, vec![spec.one_hot_width(), 1])?;
            let log_qz = tape.matmul(sel_var, lq_flat)?;
            let qz = tape.exp(log_qz);
            let weighted = tape.mul(qz, ll)?;
            let expected = tape.sum(weighted);
            let q = tape.exp(lq);
            let ratio = tape.sub(lq, lp)?;
            let terms = tape.mul(q, ratio)?;
            let kl = tape.sum(terms);
            let penalty = tape.scale(kl, beta);
            (Some(tape.sub(expected, penalty)?), Some(lq))
        }
        None => (None, None),
    };
    Ok(NodeTerms {
        nll,
        elbo,
        prior: lp,
        posterior,
    })
}

/// ELBO summed over the modeled nodes, recorded on `tape`.
pub fn elbo_on_tape(
    tape: &mut Tape,
    reg: &WeightRegistry,
    example: &TrainingExample,
    beta: f64,
) -> Result<Var> {
    let mut cache = SceneCache::default();
    let mut total: Option<Var> = None;
    let ids: Vec<u32> = example.humans().map(|n| n.id).collect();
    if ids.is_empty() {
        return Err(Error::Contract(format!(
            "example {}@{} has no modeled nodes",
            example.play_id, example.t
        )));
    }
    for id in ids {
        let t = node_terms(tape, reg, example, id, Mode::Train, beta, &mut cache)?;
        let e = t.elbo.expect("training mode");
        total = Some(match total {
            Some(acc) => tape.add(acc, e)?,
            None => e,
        });
    }
    Ok(total.expect("at least one node"))
}

pub fn elbo(example: &TrainingExample, reg: &WeightRegistry, beta: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let v = elbo_on_tape(&mut tape, reg, example, beta)?;
    Ok(tape.value(v).data()[0])
}

/// Per-node NLLs for one example, in node id order.
pub fn node_nlls(example: &TrainingExample, reg: &WeightRegistry) -> Result<Vec<(u32, f64)>> {
    let mut tape = Tape::new();
    let mut cache = SceneCache::default();
    let ids: Vec<u32> = example.humans().map(|n| n.id).collect();
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let t = node_terms(
            &mut tape,
            reg,
            example,
            id,
            Mode::Inference,
            1.0,
            &mut cache,
        )?;
        out.push((id, tape.value(t.nll).data()[0]));
    }
    Ok(out)
}

/// Exact NLL summed over the example's modeled nodes.
pub fn eval_nll(example: &TrainingExample, reg: &WeightRegistry) -> Result<f64> {
    Ok(node_nlls(example, reg)?.iter().map(|(_, v)| v).sum())
}

/// Mean over examples of [`eval_nll`].
pub fn mean_nll(examples: &[TrainingExample], reg: &WeightRegistry) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Contract("NLL over an empty set".into()));
    }
    let mut total = 0.0;
    for ex in examples {
        total += eval_nll(ex, reg)?;
    }
    Ok(total / examples.len() as f64)
}

/// Prior and posterior factors for node `id`, as plain values.
pub fn latent_factors(
    example: &TrainingExample,
    reg: &WeightRegistry,
    id: u32,
) -> Result<(CategoricalFactors, CategoricalFactors)> {
    let mut tape = Tape::new();
    let t = node_terms(
        &mut tape,
        reg,
        example,
        id,
        Mode::Train,
        1.0,
        &mut SceneCache::default(),
    )?;
    let spec = reg.config().latent;
    Ok((
        CategoricalFactors::from_tape(&tape, t.prior, spec),
        CategoricalFactors::from_tape(&tape, t.posterior.expect("training mode"), spec),
    ))
}
