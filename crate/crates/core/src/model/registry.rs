//! Typed parameter registry.
//!
//! Every shared module lives under a stable string key. Two graph positions
//! with the same key resolve to the same [`ParamId`]s, so they read and train
//! one set of tensors.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{ModelConfig, Reducer, TypeSet};
use crate::autodiff::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::graph::{EdgeType, NodeType};

/// Feature width of one frame.
pub const FRAME_FEATURES: usize = 4;
/// Decoder input: the previous action.
pub const ACTION_FEATURES: usize = 2;

pub const GATES: [&str; 4] = ["i", "f", "o", "c"];

/// One LSTM cell: `W`, `U`, `b` for each gate in `(i, f, o, c)` order.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    pub input: usize,
    pub hidden: usize,
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiLstmParams {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstmParams {
    pub fn output_width(&self) -> usize {
        4 * self.fwd.hidden
    }
}

/// Affine map `x·W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams {
    /// `[context ‖ one-hot z] → [h0 ‖ c0]`.
    pub init: Dense,
    pub lstm: LstmParams,
    /// `h → [logits ‖ μ_l ‖ μ_w ‖ log σ_l ‖ log σ_w]`, `n_gmm` each.
    pub head: Dense,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodeModules {
    pub eie: Option<BiLstmParams>,
    pub nhe: LstmParams,
    pub nfe: BiLstmParams,
    pub decoder: DecoderParams,
    pub prior: Dense,
    pub posterior: Dense,
}

#[derive(Clone, Debug)]
pub struct WeightRegistry {
    config: ModelConfig,
    types: TypeSet,
    store: ParamStore,
    ee: BTreeMap<EdgeType, LstmParams>,
    nodes: BTreeMap<NodeType, NodeModules>,
    fce: BiLstmParams,
}

pub fn ee_key(t: &EdgeType) -> String {
    format!("EE/{}", t.key())
}

pub fn node_key(module: &str, t: NodeType) -> String {
    format!("{module}/{t}")
}

pub const FCE_KEY: &str = "FCE/global";

/// FNV-1a, used to give every parameter its own initialization stream.
fn name_hash(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

struct Init<'a> {
    seed: u64,
    store: &'a mut ParamStore,
}

impl Init<'_> {
    fn rng(&self, name: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(name))
    }

    fn glorot(&mut self, name: String, rows: usize, cols: usize) -> Result<ParamId> {
        let mut rng = self.rng(&name);
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        self.store
            .insert(name, Tensor::new(vec![rows, cols], data)?)
    }

    /// Square matrix with orthonormal columns, by Gram-Schmidt on a Gaussian draw.
    fn orthogonal(&mut self, name: String, n: usize) -> Result<ParamId> {
        let mut rng = self.rng(&name);
        let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
        while cols.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            for q in &cols {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                cols.push(v.into_iter().map(|x| x / norm).collect());
            }
        }
        let mut data = vec![0.0; n * n];
        for (j, c) in cols.iter().enumerate() {
            for (i, &x) in c.iter().enumerate() {
                data[i * n + j] = x;
            }
        }
        self.store.insert(name, Tensor::new(vec![n, n], data)?)
    }

    fn filled(&mut self, name: String, shape: &[usize], value: f64) -> Result<ParamId> {
        self.store.insert(name, Tensor::filled(shape, value))
    }

    fn lstm(&mut self, prefix: &str, input: usize, hidden: usize) -> Result<LstmParams> {
        let mut w = Vec::with_capacity(4);
        let mut u = Vec::with_capacity(4);
        let mut b = Vec::with_capacity(4);
        for g in GATES {
            w.push(self.glorot(format!("{prefix}/W_{g}"), input, hidden)?);
            u.push(self.orthogonal(format!("{prefix}/U_{g}"), hidden)?);
            let bias = if g == "f" { 1.0 } else { 0.0 };
            b.push(self.filled(format!("{prefix}/b_{g}"), &[1, hidden], bias)?);
        }
        let arr = |v: Vec<ParamId>| -> [ParamId; 4] { v.try_into().expect("four gates") };
        Ok(LstmParams {
            input,
            hidden,
            w: arr(w),
            u: arr(u),
            b: arr(b),
        })
    }

    fn bilstm(&mut self, prefix: &str, input: usize, hidden: usize) -> Result<BiLstmParams> {
        Ok(BiLstmParams {
            fwd: self.lstm(&format!("{prefix}/fwd"), input, hidden)?,
            bwd: self.lstm(&format!("{prefix}/bwd"), input, hidden)?,
        })
    }

    fn dense(&mut self, prefix: &str, input: usize, output: usize) -> Result<Dense> {
        Ok(Dense {
            input,
            output,
            w: self.glorot(format!("{prefix}/W"), input, output)?,
            b: self.filled(format!("{prefix}/b"), &[1, output], 0.0)?,
        })
    }
}

impl WeightRegistry {
    /// Allocate and initialize every module the type set can need.
    pub fn new(config: ModelConfig, types: TypeSet, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init {
            seed,
            store: &mut store,
        };
        let mut ee = BTreeMap::new();
        for et in types.edge_types() {
            let p = init.lstm(&ee_key(&et), FRAME_FEATURES, config.ee_hidden)?;
            ee.insert(et, p);
        }
        let fce = init.bilstm(FCE_KEY, FRAME_FEATURES, config.fce_hidden)?;

        let ctx = config.context_width();
        let zdim = config.latent.one_hot_width();
        let mut nodes = BTreeMap::new();
        for t in types.humans() {
            let eie = match config.reducer {
                Reducer::BiLstm => {
                    Some(init.bilstm(&node_key("EIE", t), config.ee_hidden, config.eie_hidden)?)
                }
                Reducer::Sum | Reducer::Max => None,
            };
            let nhe = init.lstm(&node_key("NHE", t), FRAME_FEATURES, config.nhe_hidden)?;
            let nfe = init.bilstm(&node_key("NFE", t), FRAME_FEATURES, config.nfe_hidden)?;
            let dk = node_key("Decoder", t);
            let decoder = DecoderParams {
                init: init.dense(&format!("{dk}/init"), ctx + zdim, 2 * config.dec_hidden)?,
                lstm: init.lstm(&format!("{dk}/lstm"), ACTION_FEATURES, config.dec_hidden)?,
                head: init.dense(&format!("{dk}/head"), config.dec_hidden, 5 * config.n_gmm)?,
            };
            let prior = init.dense(&node_key("Prior", t), ctx, zdim)?;
            let posterior =
                init.dense(&node_key("Posterior", t), ctx + config.nfe_width(), zdim)?;
            nodes.insert(
                t,
                NodeModules {
                    eie,
                    nhe,
                    nfe,
                    decoder,
                    prior,
                    posterior,
                },
            );
        }
        Ok(Self {
            config,
            types,
            store,
            ee,
            nodes,
            fce,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn types(&self) -> &TypeSet {
        &self.types
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Total scalar parameter count.
    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn ee(&self, et: &EdgeType) -> Result<&LstmParams> {
        self.ee
            .get(et)
            .ok_or_else(|| Error::UnknownId(format!("no edge encoder for {}", ee_key(et))))
    }

    pub fn node(&self, t: NodeType) -> Result<&NodeModules> {
        self.nodes.get(&t).ok_or_else(|| {
            Error::UnknownId(format!("node type {t} is not in the registry type set"))
        })
    }

    pub fn fce(&self) -> &BiLstmParams {
        &self.fce
    }

    /// Append a freshly initialized LSTM under `prefix`, outside the typed
    /// modules. Ablations use this for weights the shared layout lacks.
    pub fn add_lstm(
        &mut self,
        prefix: &str,
        input: usize,
        hidden: usize,
        seed: u64,
    ) -> Result<LstmParams> {
        if self.keys().iter().any(|k| k == prefix) || !self.params_under(prefix).is_empty() {
            return Err(Error::Contract(format!(
                "parameter prefix {prefix} is already in use"
            )));
        }
        Init {
            seed,
            store: &mut self.store,
        }
        .lstm(prefix, input, hidden)
    }

    /// Module keys in canonical order.
    pub fn keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = self.ee.keys().map(ee_key).collect();
        keys.push(FCE_KEY.into());
        for &t in self.nodes.keys() {
            for m in ["EIE", "NHE", "NFE", "Decoder", "Prior", "Posterior"] {
                if m != "EIE" || self.config.reducer == Reducer::BiLstm {
                    keys.push(node_key(m, t));
                }
            }
        }
        keys.sort();
        keys
    }

    /// Parameter ids whose names start with `key/`.
    pub fn params_under(&self, key: &str) -> Vec<ParamId> {
        let prefix = format!("{key}/");
        self.store
            .iter()
            .filter(|(_, name, _)| name.starts_with(&prefix))
            .map(|(id, _, _)| id)
            .collect()
    }
}
