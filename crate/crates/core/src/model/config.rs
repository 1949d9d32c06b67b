use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::Frame;
use crate::error::{Error, Result};
use crate::graph::{EdgeType, NodeType};

/// Largest joint latent space the objective will enumerate.
pub const ENUMERATION_BOUND: usize = 4096;

/// Discrete latent layout: `n_k` independent categoricals with `k_z`
/// categories each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub n_k: usize,
    pub k_z: usize,
}

impl Default for LatentSpec {
    fn default() -> Self {
        Self { n_k: 2, k_z: 5 }
    }
}

impl LatentSpec {
    pub fn new(n_k: usize, k_z: usize) -> Result<Self> {
        let spec = Self { n_k, k_z };
        spec.joint_size()?;
        Ok(spec)
    }

    /// `k_z ^ n_k`, or an error past the enumeration bound.
    pub fn joint_size(&self) -> Result<usize> {
        if self.n_k == 0 || self.k_z == 0 {
            return Err(Error::Config(
                "latent spec needs n_k ≥ 1 and k_z ≥ 1".into(),
            ));
        }
        let mut size: usize = 1;
        for _ in 0..self.n_k {
            size = size.saturating_mul(self.k_z);
            if size > ENUMERATION_BOUND {
                return Err(Error::EnumerationBound {
                    size,
                    bound: ENUMERATION_BOUND,
                });
            }
        }
        Ok(size)
    }

    /// Width of the concatenated one-hot block.
    pub fn one_hot_width(&self) -> usize {
        self.n_k * self.k_z
    }

    /// Per-variable categories of joint assignment `j`, first variable most
    /// significant.
    pub fn decode(&self, mut j: usize) -> Vec<usize> {
        let mut z = vec![0; self.n_k];
        for v in (0..self.n_k).rev() {
            z[v] = j % self.k_z;
            j /= self.k_z;
        }
        z
    }

    pub fn encode(&self, z: &[usize]) -> Result<usize> {
        if z.len() != self.n_k || z.iter().any(|&c| c >= self.k_z) {
            return Err(Error::Contract(format!(
                "latent assignment {z:?} invalid for n_k={}, k_z={}",
                self.n_k, self.k_z
            )));
        }
        Ok(z.iter().fold(0, |acc, &c| acc * self.k_z + c))
    }

    pub fn one_hot(&self, z: &[usize]) -> Result<Vec<f64>> {
        self.encode(z)?;
        let mut row = vec![0.0; self.one_hot_width()];
        for (v, &c) in z.iter().enumerate() {
            row[v * self.k_z + c] = 1.0;
        }
        Ok(row)
    }
}

/// How neighbor features of one edge type are combined before the EE.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Sum,
    Mean,
}

/// How per-edge-type encodings are merged into one vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reducer {
    #[default]
    BiLstm,
    Sum,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub latent: LatentSpec,
    pub n_gmm: usize,
    pub ee_hidden: usize,
    pub eie_hidden: usize,
    pub nhe_hidden: usize,
    pub fce_hidden: usize,
    pub nfe_hidden: usize,
    pub dec_hidden: usize,
    pub aggregation: Aggregation,
    pub reducer: Reducer,
    /// Divisor applied to positions before they enter any encoder, meters.
    pub pos_scale: f64,
    /// Divisor for velocities in, multiplier for GMM means out, m/s.
    pub vel_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent: LatentSpec::default(),
            n_gmm: 16,
            ee_hidden: 8,
            eie_hidden: 8,
            nhe_hidden: 32,
            fce_hidden: 32,
            nfe_hidden: 32,
            dec_hidden: 128,
            aggregation: Aggregation::Sum,
            reducer: Reducer::BiLstm,
            pos_scale: 10.0,
            vel_scale: 5.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.latent.joint_size()?;
        let sizes = [
            ("n_gmm", self.n_gmm),
            ("ee_hidden", self.ee_hidden),
            ("eie_hidden", self.eie_hidden),
            ("nhe_hidden", self.nhe_hidden),
            ("fce_hidden", self.fce_hidden),
            ("nfe_hidden", self.nfe_hidden),
            ("dec_hidden", self.dec_hidden),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model.{name} must be positive")));
        }
        if !(self.pos_scale > 0.0 && self.vel_scale > 0.0) {
            return Err(Error::Config("feature scales must be positive".into()));
        }
        Ok(())
    }

    pub fn eie_width(&self) -> usize {
        match self.reducer {
            Reducer::BiLstm => 4 * self.eie_hidden,
            Reducer::Sum | Reducer::Max => self.ee_hidden,
        }
    }

    pub fn fce_width(&self) -> usize {
        4 * self.fce_hidden
    }

    pub fn nfe_width(&self) -> usize {
        4 * self.nfe_hidden
    }

    /// Width of `[edge influence ‖ history ‖ future conditional]`.
    pub fn context_width(&self) -> usize {
        self.eie_width() + self.nhe_hidden + self.fce_width()
    }

    /// Per-frame encoder input `[l, w, dl, dw]`, scaled.
    pub fn features(&self, f: &Frame) -> [f64; 4] {
        [
            f.state.l / self.pos_scale,
            f.state.w / self.pos_scale,
            f.action.dl / self.vel_scale,
            f.action.dw / self.vel_scale,
        ]
    }
}

/// The node types a registry is built for. Declared up front so the
/// parameter count never depends on which nodes a scene happens to contain.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeSet {
    humans: BTreeSet<NodeType>,
}

impl TypeSet {
    pub fn new(humans: impl IntoIterator<Item = NodeType>) -> Result<Self> {
        let humans: BTreeSet<NodeType> = humans.into_iter().collect();
        if humans.is_empty() {
            return Err(Error::Config("type set is empty".into()));
        }
        if humans.contains(&NodeType::Agent) {
            return Err(Error::Config(
                "the agent marker is not a modeled type".into(),
            ));
        }
        Ok(Self { humans })
    }

    pub fn all() -> Self {
        Self::new(NodeType::all_humans()).expect("ten human types")
    }

    pub fn humans(&self) -> impl Iterator<Item = NodeType> + '_ {
        self.humans.iter().copied()
    }

    pub fn contains(&self, t: NodeType) -> bool {
        self.humans.contains(&t)
    }

    /// Every edge type a modeled node can see: human pairs (including a
    /// type with itself) and human–agent.
    pub fn edge_types(&self) -> Vec<EdgeType> {
        let hs: Vec<NodeType> = self.humans().collect();
        let mut out = BTreeSet::new();
        for (i, &a) in hs.iter().enumerate() {
            for &b in &hs[i..] {
                out.insert(EdgeType::new(a, b));
            }
            out.insert(EdgeType::new(a, NodeType::Agent));
        }
        let mut v: Vec<EdgeType> = out.into_iter().collect();
        v.sort_by_key(EdgeType::key);
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Role, Team};

    #[test]
    fn latent_indexing_round_trips() {
        let s = LatentSpec::new(2, 5).unwrap();
        assert_eq!(s.joint_size().unwrap(), 25);
        for j in 0..25 {
            assert_eq!(s.encode(&s.decode(j)).unwrap(), j);
        }
        assert_eq!(s.decode(7), vec![1, 2]);
        assert_eq!(
            s.one_hot(&[1, 2]).unwrap(),
            vec![0., 1., 0., 0., 0., 0., 0., 1., 0., 0.]
        );
        assert!(s.encode(&[5, 0]).is_err());
    }

    #[test]
    fn enumeration_bound() {
        assert_eq!(LatentSpec::new(6, 4).unwrap().joint_size().unwrap(), 4096);
        assert!(matches!(
            LatentSpec::new(6, 5),
            Err(Error::EnumerationBound { .. })
        ));
    }

    #[test]
    fn type_set_edges() {
        let ts = TypeSet::new([
            NodeType::human(Team::Home, Role::PG),
            NodeType::human(Team::Away, Role::C),
        ])
        .unwrap();
        let keys: Vec<String> = ts.edge_types().iter().map(EdgeType::key).collect();
        assert_eq!(
            keys,
            [
                "Agent—Away-C",
                "Agent—Home-PG",
                "Away-C—Away-C",
                "Away-C—Home-PG",
                "Home-PG—Home-PG"
            ]
        );
        assert_eq!(TypeSet::all().edge_types().len(), 55 + 10);
        assert!(TypeSet::new([NodeType::Agent]).is_err());
    }
}
