use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::report::{ensure_dir, write_csv, ExperimentReport};
use super::run::forward;
use super::stats::{linear_fit, median};
use crate::autodiff::Tape;
use crate::cvae::terms_from_bundle;
use crate::data::{Frame, NodeSeries, TrainingExample};
use crate::dynamics::{CourtAction, CourtState};
use crate::error::{Error, Result};
use crate::graph::{build_graph, GraphNode, NodeType, Role, Team};
use crate::model::{Mode, PairEncoders, SceneCache, TypeSet, WeightRegistry};

/// Spacing of the profiling lattice and the radius that links only lattice
/// neighbors, so the average degree stays near 3 at every size.
pub const LATTICE_SPACING: f64 = 1.5;
pub const LATTICE_RADIUS: f64 = 1.6;

/// Types alternated along the lattice.
pub fn profile_types() -> [NodeType; 2] {
    [
        NodeType::human(Team::Home, Role::PG),
        NodeType::human(Team::Away, Role::PG),
    ]
}

/// `n` nodes on a two-row strip drifting at a constant velocity; node 0 is
/// the agent. Positions are not confined to a court.
pub fn lattice_scene(n: usize, history: usize, horizon: usize, dt: f64) -> Result<TrainingExample> {
    if n < 2 || history == 0 || horizon == 0 {
        return Err(Error::Config(
            "lattice scene needs two nodes and non-empty windows".into(),
        ));
    }
    let types = profile_types();
    let u = CourtAction::new(0.8, 0.3);
    let mut nodes = Vec::with_capacity(n);
    let mut graph_nodes = Vec::with_capacity(n);
    for i in 0..n {
        let id = i as u32;
        let node_type = if i == 0 {
            NodeType::Agent
        } else {
            types[i % 2]
        };
        let base = CourtState::new(
            1.0 + LATTICE_SPACING * (i / 2) as f64,
            6.0 + LATTICE_SPACING * (i % 2) as f64,
        );
        let at = |k: isize| Frame {
            state: CourtState::new(base.l + u.dl * dt * k as f64, base.w + u.dw * dt * k as f64),
            action: u,
        };
        let h = history as isize;
        nodes.push(NodeSeries {
            id,
            node_type,
            history: (1 - h..=0).map(at).collect(),
            future: (1..=horizon as isize).map(at).collect(),
            mode: None,
        });
        graph_nodes.push(GraphNode {
            id,
            node_type,
            state: base,
        });
    }
    Ok(TrainingExample {
        play_id: format!("lattice-{n}"),
        t: history,
        dt,
        agent_id: 0,
        nodes,
        graph: build_graph(graph_nodes, LATTICE_RADIUS)?,
    })
}

fn forward_pairs(
    example: &TrainingExample,
    reg: &WeightRegistry,
    pairs: &PairEncoders,
) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let mut cache = SceneCache::default();
    let mut total = 0.0;
    for n in example.humans() {
        let bundle =
            pairs.encode_node(&mut tape, reg, example, n.id, Mode::Inference, &mut cache)?;
        let t = terms_from_bundle(&mut tape, reg, n, &bundle, 1.0)?;
        total += tape.value(t.nll).data()[0];
    }
    Ok((total, tape.memory_bytes()))
}

fn time_median(
    runs: usize,
    warmup: usize,
    mut f: impl FnMut() -> Result<usize>,
) -> Result<(f64, usize)> {
    let mut bytes = 0;
    for _ in 0..warmup {
        bytes = f()?;
    }
    let mut ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        bytes = f()?;
        ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok((median(&ms), bytes))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    /// `shared` or `per_pair`.
    pub variant: String,
    pub nodes: usize,
    pub edges: usize,
    pub parameters: usize,
    /// Tape bytes plus parameter bytes.
    pub memory_bytes: usize,
    pub median_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub rows: Vec<ProfileRow>,
    pub slope_ms_per_node: f64,
    pub intercept_ms: f64,
    pub r_squared: f64,
    pub memory_monotone: bool,
    pub parameters_constant: bool,
    /// Per-pair over shared, at `per_edge_nodes`.
    pub per_pair_time_ratio: f64,
    pub per_pair_memory_ratio: f64,
}

/// Forward-pass cost over lattice scenes of growing size with one registry,
/// plus the per-pair edge encoder ablation at one size.
pub fn cmd_profile(cfg: &ExperimentConfig, out: &Path) -> Result<ProfileSummary> {
    ensure_dir(out)?;
    let p = &cfg.profile;
    if p.node_counts.is_empty() || p.runs == 0 {
        return Err(Error::Config(
            "profile needs node counts and at least one run".into(),
        ));
    }
    let reg = WeightRegistry::new(cfg.model.clone(), TypeSet::new(profile_types())?, cfg.seed)?;
    let param_bytes = reg.parameter_count() * std::mem::size_of::<f64>();
    let dt = 0.04;
    let mut rows = Vec::new();
    for &n in &p.node_counts {
        let scene = lattice_scene(n, cfg.data.history, cfg.data.horizon, dt)?;
        let (ms, bytes) = time_median(p.runs, p.warmup, || forward(&scene, &reg).map(|r| r.1))?;
        rows.push(ProfileRow {
            variant: "shared".into(),
            nodes: n,
            edges: scene.graph.edge_count(),
            parameters: reg.parameter_count(),
            memory_bytes: bytes + param_bytes,
            median_ms: ms,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.nodes as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.median_ms).collect();
    let fit = if rows.len() >= 2 {
        linear_fit(&xs, &ys)?
    } else {
        super::stats::LinearFit {
            intercept: 0.0,
            slope: 0.0,
            r_squared: 1.0,
        }
    };
    let mut by_size: Vec<&ProfileRow> = rows.iter().collect();
    by_size.sort_by_key(|r| r.nodes);
    let memory_monotone = by_size
        .windows(2)
        .all(|w| w[0].memory_bytes <= w[1].memory_bytes);
    let parameters_constant = rows.iter().all(|r| r.parameters == rows[0].parameters);

    let scene = lattice_scene(p.per_edge_nodes, cfg.data.history, cfg.data.horizon, dt)?;
    let (shared_ms, shared_bytes) =
        time_median(p.runs, p.warmup, || forward(&scene, &reg).map(|r| r.1))?;
    let mut pair_reg = reg.clone();
    let pairs = PairEncoders::build(&mut pair_reg, &scene, cfg.seed)?;
    let (pair_ms, pair_bytes) = time_median(p.runs, p.warmup, || {
        forward_pairs(&scene, &pair_reg, &pairs).map(|r| r.1)
    })?;
    let pair_mem = pair_bytes + pair_reg.parameter_count() * std::mem::size_of::<f64>();
    let shared_mem = shared_bytes + param_bytes;
    rows.push(ProfileRow {
        variant: "per_pair".into(),
        nodes: p.per_edge_nodes,
        edges: scene.graph.edge_count(),
        parameters: pair_reg.parameter_count(),
        memory_bytes: pair_mem,
        median_ms: pair_ms,
    });

    write_csv(&out.join("profile.csv"), &rows)?;
    let summary = ProfileSummary {
        rows,
        slope_ms_per_node: fit.slope,
        intercept_ms: fit.intercept,
        r_squared: fit.r_squared,
        memory_monotone,
        parameters_constant,
        per_pair_time_ratio: pair_ms / shared_ms,
        per_pair_memory_ratio: pair_mem as f64 / shared_mem as f64,
    };
    let mut report = ExperimentReport::new("profile", cfg, &summary.rows)?;
    report.notes.push(format!(
        "linear fit: {:.4} ms + {:.4} ms/node, R^2 = {:.4}; per-pair encoders at {} nodes: {:.2}x time, {:.2}x memory",
        fit.intercept, fit.slope, fit.r_squared, p.per_edge_nodes, summary.per_pair_time_ratio, summary.per_pair_memory_ratio
    ));
    report.write(out)?;
    Ok(summary)
}
