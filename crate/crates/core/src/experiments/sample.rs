use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AgentFuture, ExperimentConfig};
use super::dataset::Dataset;
use super::report::{ensure_dir, ExperimentReport, JsonLines};
use super::run::{checkpoint_path, restore};
use super::svg::{render_svg, Panel};
use crate::autodiff::Checkpoint;
use crate::cvae::{sample_nodes, NodeSamples};
use crate::data::{window_play, TrainingExample};
use crate::error::{Error, Result};
use crate::model::WeightRegistry;

#[derive(Clone, Debug)]
pub struct SamplePanel {
    pub agent_future: AgentFuture,
    /// The scene with the agent future substituted.
    pub example: TrainingExample,
    pub nodes: Vec<NodeSamples>,
}

#[derive(Clone, Debug)]
pub struct SampleOutcome {
    pub play_id: String,
    pub t: usize,
    pub panels: Vec<SamplePanel>,
    pub svg_path: PathBuf,
    pub jsonl_path: PathBuf,
}

#[derive(Serialize)]
struct TrajectoryLine<'a> {
    panel: usize,
    play_id: &'a str,
    t: usize,
    node: u32,
    node_type: String,
    sample: usize,
    z: &'a [usize],
    /// Positions after the prediction frame, metres.
    path: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub panel: usize,
    pub node: u32,
    pub agent_adjacent: bool,
    pub samples: usize,
    pub distinct_z: usize,
}

/// The window of play `play` at frame `t`, cut at the configured radius.
pub fn select_example(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    play: Option<&str>,
    t: Option<usize>,
) -> Result<TrainingExample> {
    let all = ds.val_plays.iter().chain(&ds.train_plays);
    let p = match play {
        Some(id) => all
            .clone()
            .find(|p| p.play_id == id)
            .ok_or_else(|| Error::UnknownId(format!("no play {id:?}")))?,
        None => all
            .clone()
            .next()
            .ok_or_else(|| Error::Config("dataset has no plays".into()))?,
    };
    let windows = window_play(p, cfg.data.history, cfg.data.horizon, cfg.data.radius)?;
    match t {
        Some(t) => windows.into_iter().find(|e| e.t == t).ok_or_else(|| {
            Error::UnknownId(format!("play {} has no prediction frame {t}", p.play_id))
        }),
        None => windows
            .into_iter()
            .next()
            .ok_or_else(|| Error::Config(format!("play {} is too short to window", p.play_id))),
    }
}

/// Futures of `ids` under each candidate agent future. Each panel restarts
/// the same seeded stream, so panels differ only through the model.
pub fn sample_panels(
    example: &TrainingExample,
    reg: &WeightRegistry,
    ids: &[u32],
    futures: &[AgentFuture],
    count: usize,
    seed: u64,
) -> Result<Vec<SamplePanel>> {
    let recorded = example.agent().future_actions();
    futures
        .iter()
        .map(|f| {
            let ex = example.with_agent_future(&f.actions(&recorded))?;
            let nodes = sample_nodes(&ex, reg, ids, count, &mut ChaCha8Rng::seed_from_u64(seed))?;
            Ok(SamplePanel {
                agent_future: f.clone(),
                example: ex,
                nodes,
            })
        })
        .collect()
}

/// Writes `samples.jsonl` (one line per sampled trajectory) and
/// `samples.svg`.
pub fn cmd_sample(cfg: &ExperimentConfig, out: &Path) -> Result<SampleOutcome> {
    ensure_dir(out)?;
    let reg = restore(&Checkpoint::load(checkpoint_path(cfg, out))?)?;
    let ds = Dataset::prepare(cfg)?;
    let sc = &cfg.sample;
    let example = select_example(cfg, &ds, sc.play.as_deref(), sc.t)?;
    let ids: Vec<u32> = match &sc.nodes {
        Some(ids) => {
            for &id in ids {
                if example.node(id)?.node_type.is_agent() {
                    return Err(Error::Config(format!(
                        "node {id} is the agent and is not sampled"
                    )));
                }
            }
            ids.clone()
        }
        None => example.humans().map(|n| n.id).collect(),
    };
    let mut futures = vec![sc.agent_future.clone()];
    futures.extend(sc.compare_with.clone());
    let panels = sample_panels(&example, &reg, &ids, &futures, sc.count, cfg.seed)?;

    let jsonl_path = out.join("samples.jsonl");
    let mut lines = JsonLines::create(&jsonl_path)?;
    let mut rows = Vec::new();
    for (k, p) in panels.iter().enumerate() {
        for ns in &p.nodes {
            let node = p.example.node(ns.id)?;
            for (i, s) in ns.samples.iter().enumerate() {
                lines.write(&TrajectoryLine {
                    panel: k,
                    play_id: &example.play_id,
                    t: example.t,
                    node: ns.id,
                    node_type: node.node_type.to_string(),
                    sample: i,
                    z: &s.z,
                    path: s.states.iter().map(|x| [x.l, x.w]).collect(),
                })?;
            }
            let mut zs: Vec<&Vec<usize>> = ns.samples.iter().map(|s| &s.z).collect();
            zs.sort();
            zs.dedup();
            rows.push(SampleRow {
                panel: k,
                node: ns.id,
                agent_adjacent: p.example.graph.agent_adjacent(ns.id, p.example.agent_id)?,
                samples: ns.samples.len(),
                distinct_z: zs.len(),
            });
        }
    }
    lines.finish()?;

    let drawn: Vec<Panel> = panels
        .iter()
        .map(|p| Panel {
            title: format!(
                "{} t={} agent future: {}",
                example.play_id,
                example.t,
                future_label(&p.agent_future)
            ),
            example: &p.example,
            samples: &p.nodes,
        })
        .collect();
    let svg = render_svg(&ds.file.header.court, reg.config().latent, &drawn);
    let svg_path = out.join("samples.svg");
    std::fs::write(&svg_path, svg).map_err(|e| Error::io(&svg_path, e))?;
    ExperimentReport::new("sample", cfg, &rows)?.write(out)?;
    Ok(SampleOutcome {
        play_id: example.play_id.clone(),
        t: example.t,
        panels,
        svg_path,
        jsonl_path,
    })
}

fn future_label(f: &AgentFuture) -> String {
    match f {
        AgentFuture::Recorded => "recorded".into(),
        AgentFuture::Stop => "stop".into(),
        AgentFuture::Constant { dl, dw } => format!("constant ({dl:.2}, {dw:.2}) m/s"),
        AgentFuture::Mirror => "mirrored".into(),
    }
}
