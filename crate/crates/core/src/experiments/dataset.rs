use std::collections::BTreeSet;

use super::config::{DataConfig, DataSource, ExperimentConfig};
use crate::data::{parse_plays, synth_generate, window_dataset, Play, PlayFile, TrainingExample};
use crate::error::{Error, Result};
use crate::graph::NodeType;
use crate::model::TypeSet;

/// Plays split by play id, windowed at the configured radius.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub file: PlayFile,
    pub types: TypeSet,
    pub train_plays: Vec<Play>,
    pub val_plays: Vec<Play>,
    pub train: Vec<TrainingExample>,
    pub val: Vec<TrainingExample>,
    /// Plays too short for one window.
    pub skipped: Vec<String>,
}

pub fn load_plays(data: &DataConfig) -> Result<PlayFile> {
    match &data.source {
        DataSource::Synthetic(s) => Ok(PlayFile::new(s.dt, s.court, synth_generate(s)?)),
        DataSource::File { path, bounds } => parse_plays(path, *bounds),
    }
}

/// Hold out the trailing `val_fraction` of plays. Both sides get at least one
/// play when there are two or more and the fraction is positive.
pub fn split_plays(plays: &[Play], val_fraction: f64) -> (Vec<Play>, Vec<Play>) {
    let n = plays.len();
    let mut n_val = (n as f64 * val_fraction).round() as usize;
    if val_fraction > 0.0 && n >= 2 {
        n_val = n_val.clamp(1, n - 1);
    }
    let (a, b) = plays.split_at(n - n_val.min(n));
    (a.to_vec(), b.to_vec())
}

/// The declared type set, or every human type appearing anywhere in `plays`.
pub fn resolve_types(declared: &[String], plays: &[Play]) -> Result<TypeSet> {
    let present: BTreeSet<NodeType> = plays
        .iter()
        .flat_map(|p| {
            p.players
                .iter()
                .filter(|x| x.id != p.agent_id)
                .map(|x| x.human_type())
        })
        .collect();
    if declared.is_empty() {
        return TypeSet::new(present).map_err(|_| {
            Error::Config("dataset has no modeled players to discover types from".into())
        });
    }
    let types = TypeSet::new(
        declared
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<NodeType>>>()?,
    )?;
    if let Some(missing) = present.iter().find(|t| !types.contains(**t)) {
        return Err(Error::Config(format!(
            "dataset contains type {missing} missing from the declared type set"
        )));
    }
    Ok(types)
}

impl Dataset {
    pub fn prepare(cfg: &ExperimentConfig) -> Result<Self> {
        let file = load_plays(&cfg.data)?;
        let types = resolve_types(&cfg.types, &file.plays)?;
        let (train_plays, val_plays) = split_plays(&file.plays, cfg.data.val_fraction);
        let mut ds = Self {
            file,
            types,
            train_plays,
            val_plays,
            train: Vec::new(),
            val: Vec::new(),
            skipped: Vec::new(),
        };
        ds.rewindow(&cfg.data, cfg.data.radius)?;
        if ds.train.is_empty() {
            return Err(Error::Config(format!(
                "no training windows: every play is shorter than history {} + horizon {} + 1 frames",
                cfg.data.history, cfg.data.horizon
            )));
        }
        Ok(ds)
    }

    /// Recut both splits with edge radius `radius`.
    pub fn rewindow(&mut self, data: &DataConfig, radius: f64) -> Result<()> {
        let tr = window_dataset(&self.train_plays, data.history, data.horizon, radius)?;
        let va = window_dataset(&self.val_plays, data.history, data.horizon, radius)?;
        self.train = tr.examples;
        self.val = va.examples;
        self.skipped = tr.skipped.into_iter().chain(va.skipped).collect();
        Ok(())
    }
}
