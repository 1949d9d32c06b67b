use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cvae::TrainConfig;
use crate::data::{BoundsPolicy, SynthConfig};
use crate::dynamics::CourtAction;
use crate::error::{Error, Result};
use crate::graph::NodeType;
use crate::model::{Aggregation, ModelConfig, Reducer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(SynthConfig),
    File {
        path: PathBuf,
        #[serde(default)]
        bounds: BoundsPolicy,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    pub history: usize,
    pub horizon: usize,
    pub radius: f64,
    /// Trailing fraction of plays held out for validation.
    pub val_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic(SynthConfig::default()),
            history: 8,
            horizon: 15,
            radius: 4.0,
            val_fraction: 0.2,
        }
    }
}

/// One Table-I style latent/mixture variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub n_k: usize,
    pub k_z: usize,
    pub n_gmm: usize,
}

impl Variant {
    pub fn label(&self) -> String {
        format!("({},{},{})", self.n_k, self.k_z, self.n_gmm)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateConfig {
    pub variants: Vec<Variant>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        let v = |n_k, k_z, n_gmm| Variant { n_k, k_z, n_gmm };
        Self {
            variants: vec![v(1, 1, 1), v(2, 5, 1), v(1, 1, 16), v(2, 5, 16)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub radii: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            radii: vec![1.0, 2.0, 3.0, 4.0, 5.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationConfig {
    pub edge_inputs: Vec<Aggregation>,
    pub reducers: Vec<Reducer>,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            edge_inputs: vec![Aggregation::Sum, Aggregation::Mean],
            reducers: vec![Reducer::Sum, Reducer::Max, Reducer::BiLstm],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProfileConfig {
    pub node_counts: Vec<usize>,
    pub runs: usize,
    pub warmup: usize,
    /// Scene size for the shared-vs-per-neighbor edge encoder comparison.
    pub per_edge_nodes: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        Self {
            node_counts: vec![5, 10, 20, 40, 80],
            runs: 30,
            warmup: 3,
            per_edge_nodes: 10,
        }
    }
}

/// Candidate future for the agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentFuture {
    /// The recorded future.
    Recorded,
    /// Stand still.
    Stop,
    /// Hold a constant action.
    Constant { dl: f64, dw: f64 },
    /// The recorded future mirrored along the length axis.
    Mirror,
}

impl AgentFuture {
    pub fn actions(&self, recorded: &[CourtAction]) -> Vec<CourtAction> {
        match self {
            AgentFuture::Recorded => recorded.to_vec(),
            AgentFuture::Stop => vec![CourtAction::default(); recorded.len()],
            AgentFuture::Constant { dl, dw } => vec![CourtAction::new(*dl, *dw); recorded.len()],
            AgentFuture::Mirror => recorded
                .iter()
                .map(|u| CourtAction::new(-u.dl, u.dw))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    /// Defaults to the first validation play.
    pub play: Option<String>,
    /// Prediction frame; defaults to the play's first.
    pub t: Option<usize>,
    /// Defaults to every modeled node.
    pub nodes: Option<Vec<u32>>,
    pub count: usize,
    pub agent_future: AgentFuture,
    /// Second candidate future drawn in a side-by-side panel.
    pub compare_with: Option<AgentFuture>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            play: None,
            t: None,
            nodes: None,
            count: 100,
            agent_future: AgentFuture::Recorded,
            compare_with: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Drives weight initialization, batch order and sampling.
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    /// Declared node types such as `"Home-PG"`. Empty means every type found
    /// anywhere in the dataset.
    pub types: Vec<String>,
    pub train: TrainConfig,
    pub ablate: AblateConfig,
    pub sweep: SweepConfig,
    pub aggregation: AggregationConfig,
    pub profile: ProfileConfig,
    pub sample: SampleConfig,
    /// Weights read by `eval` and `sample`; defaults to
    /// `<out>/checkpoint.json`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            types: Vec::new(),
            train: TrainConfig::default(),
            ablate: AblateConfig::default(),
            sweep: SweepConfig::default(),
            aggregation: AggregationConfig::default(),
            profile: ProfileConfig::default(),
            sample: SampleConfig::default(),
            checkpoint: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub radius: Option<f64>,
    pub steps: Option<usize>,
    pub horizon: Option<usize>,
    pub history: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parse TOML, or JSON when the file ends in `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        };
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(r) = o.radius {
            self.data.radius = r;
        }
        if let Some(s) = o.steps {
            self.train.steps = s;
        }
        if let Some(h) = o.horizon {
            self.data.horizon = h;
        }
        if let Some(h) = o.history {
            self.data.history = h;
        }
        if let Some(c) = &o.checkpoint {
            self.checkpoint = Some(c.clone());
        }
    }

    /// Copy the top-level seed into the training schedule.
    pub fn resolved(mut self) -> Result<Self> {
        self.train.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if d.history == 0 || d.horizon == 0 {
            return Err(Error::Config(
                "history and horizon must be at least 1".into(),
            ));
        }
        if !(d.radius > 0.0) {
            return Err(Error::Config(format!(
                "edge radius must be positive, got {}",
                d.radius
            )));
        }
        if !(0.0..1.0).contains(&d.val_fraction) {
            return Err(Error::Config("val_fraction must be in [0, 1)".into()));
        }
        if let DataSource::Synthetic(s) = &d.source {
            s.validate()?;
        }
        if self.sweep.radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("sweep radii must be positive".into()));
        }
        if self.profile.node_counts.iter().any(|&n| n == 0) || self.profile.runs == 0 {
            return Err(Error::Config(
                "profile node counts and runs must be at least 1".into(),
            ));
        }
        for t in &self.types {
            let parsed: NodeType = t.parse()?;
            if parsed.is_agent() {
                return Err(Error::Config(
                    "the agent marker cannot be a declared type".into(),
                ));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(json.as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_overrides() {
        let text = r#"
            seed = 9
            types = ["Home-PG", "Away-C"]
            [data]
            radius = 3.0
            [data.source]
            kind = "synthetic"
            plays = 4
            [model]
            dec_hidden = 16
            [model.latent]
            n_k = 1
            k_z = 3
            [train]
            steps = 12
        "#;
        let mut cfg: ExperimentConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.model.dec_hidden, 16);
        assert_eq!(cfg.model.nhe_hidden, 32);
        assert!(matches!(&cfg.data.source, DataSource::Synthetic(s) if s.plays == 4));
        cfg.apply(&Overrides {
            steps: Some(3),
            radius: Some(2.5),
            ..Overrides::default()
        });
        let cfg = cfg.resolved().unwrap();
        assert_eq!(
            (cfg.train.steps, cfg.data.radius, cfg.train.seed),
            (3, 2.5, 9)
        );
    }

    #[test]
    fn bad_values_are_config_errors() {
        let mut cfg = ExperimentConfig::default();
        cfg.data.radius = 0.0;
        assert!(cfg.validate().unwrap_err().is_config_error());
        let mut cfg = ExperimentConfig::default();
        cfg.types = vec!["Home-XX".into()];
        assert!(cfg.validate().unwrap_err().is_config_error());
        assert!(toml::from_str::<ExperimentConfig>("seed = \"x\"").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
