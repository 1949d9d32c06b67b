use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, ExperimentConfig, Variant};
use super::dataset::{load_plays, Dataset};
use super::report::{ensure_dir, write_csv, ExperimentReport, JsonLines};
use crate::autodiff::{Checkpoint, Tape};
use crate::cvae::{
    mean_nll, node_nlls, node_terms, sample_futures, train, MetricsRecord, TrainReport,
};
use crate::data::TrainingExample;
use crate::error::{Error, Result};
use crate::model::{
    Aggregation, LatentSpec, Mode, ModelConfig, Reducer, SceneCache, TypeSet, WeightRegistry,
};

/// Registry restored from a checkpoint written by [`cmd_train`].
pub fn restore(checkpoint: &Checkpoint) -> Result<WeightRegistry> {
    let field = |k: &str| {
        checkpoint.meta.get(k).cloned().ok_or_else(|| Error::Parse {
            context: "checkpoint meta".into(),
            detail: format!("missing {k}"),
        })
    };
    let parse = |e: serde_json::Error| Error::Parse {
        context: "checkpoint meta".into(),
        detail: e.to_string(),
    };
    let model: ModelConfig = serde_json::from_value(field("model")?).map_err(parse)?;
    let types: TypeSet = serde_json::from_value(field("types")?).map_err(parse)?;
    let mut reg = WeightRegistry::new(model, types, 0)?;
    checkpoint.load_into(reg.store_mut())?;
    Ok(reg)
}

pub fn checkpoint_path(cfg: &ExperimentConfig, out: &Path) -> PathBuf {
    cfg.checkpoint
        .clone()
        .unwrap_or_else(|| out.join("checkpoint.json"))
}

/// Train `model` on `ds` with the experiment's seed and schedule.
pub fn fit(
    cfg: &ExperimentConfig,
    model: ModelConfig,
    ds: &Dataset,
    on_record: impl FnMut(&MetricsRecord) -> Result<()>,
) -> Result<(WeightRegistry, TrainReport)> {
    let mut reg = WeightRegistry::new(model, ds.types.clone(), cfg.seed)?;
    let report = train(&mut reg, &ds.train, &ds.val, &cfg.train, on_record)?;
    Ok((reg, report))
}

fn validation_set(ds: &Dataset) -> Result<&[TrainingExample]> {
    if ds.val.is_empty() {
        return Err(Error::Config(
            "validation split has no windows; raise val_fraction".into(),
        ));
    }
    Ok(&ds.val)
}

// ----- synth-gen -----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub plays: usize,
    pub frames: usize,
    pub players: usize,
}

pub fn cmd_synth_gen(cfg: &ExperimentConfig, out: &Path) -> Result<SynthSummary> {
    if !matches!(cfg.data.source, DataSource::Synthetic(_)) {
        return Err(Error::Config(
            "synth-gen needs data.source.kind = \"synthetic\"".into(),
        ));
    }
    ensure_dir(out)?;
    let file = load_plays(&cfg.data)?;
    file.write(out.join("plays.json"))?;
    let summary = SynthSummary {
        plays: file.plays.len(),
        frames: file.plays.iter().map(|p| p.frames()).sum(),
        players: file.plays.iter().map(|p| p.players.len()).sum(),
    };
    ExperimentReport::new("synth-gen", cfg, &[&summary])?.write(out)?;
    Ok(summary)
}

// ----- train -----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub parameters: usize,
    pub train_examples: usize,
    pub val_examples: usize,
    pub initial_val_nll: Option<f64>,
    pub final_val_nll: Option<f64>,
}

#[derive(Serialize)]
struct Timing {
    step: usize,
    wall_ms: f64,
}

/// Writes `checkpoint.json`, `metrics.jsonl` (deterministic given the config)
/// and `timing.jsonl` (wall clock per logged step).
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<TrainSummary> {
    ensure_dir(out)?;
    let ds = Dataset::prepare(cfg)?;
    let mut metrics = JsonLines::create(out.join("metrics.jsonl"))?;
    let mut timing = JsonLines::create(out.join("timing.jsonl"))?;
    let start = Instant::now();
    let (reg, report) = fit(cfg, cfg.model.clone(), &ds, |r| {
        metrics.write(r)?;
        timing.write(&Timing {
            step: r.step,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    })?;
    metrics.finish()?;
    timing.finish()?;
    report.checkpoint.save(out.join("checkpoint.json"))?;
    let summary = TrainSummary {
        steps: cfg.train.steps,
        parameters: reg.parameter_count(),
        train_examples: ds.train.len(),
        val_examples: ds.val.len(),
        initial_val_nll: report.initial_val_nll,
        final_val_nll: report.final_val_nll,
    };
    ExperimentReport::new("train", cfg, &[&summary])?.write(out)?;
    Ok(summary)
}

// ----- eval -----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    /// Node type, or `all`.
    pub node_type: String,
    pub nodes: usize,
    pub mean_node_nll: f64,
    /// Best-of-`samples` average and final displacement, metres.
    pub min_ade: f64,
    pub min_fde: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub examples: usize,
    pub mean_example_nll: f64,
    pub rows: Vec<EvalRow>,
}

/// Exact NLL and best-of-N displacement on the validation split.
pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> Result<EvalSummary> {
    ensure_dir(out)?;
    let reg = restore(&Checkpoint::load(checkpoint_path(cfg, out))?)?;
    let ds = Dataset::prepare(cfg)?;
    let val: Vec<&TrainingExample> = validation_set(&ds)?
        .iter()
        .step_by(cfg.train.val_stride)
        .collect();
    let count = cfg.sample.count.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // (nodes, nll, ade, fde) per type
    let mut acc: BTreeMap<String, (usize, f64, f64, f64)> = BTreeMap::new();
    let mut total = 0.0;
    for ex in &val {
        let nlls = node_nlls(ex, &reg)?;
        total += nlls.iter().map(|(_, v)| v).sum::<f64>();
        let draws = sample_futures(ex, &reg, count, &mut rng)?;
        for ((id, nll), ns) in nlls.iter().zip(&draws) {
            let node = ex.node(*id)?;
            let truth: Vec<_> = node.future.iter().map(|f| f.state).collect();
            let (mut ade, mut fde) = (f64::INFINITY, f64::INFINITY);
            for s in &ns.samples {
                let d: Vec<f64> = s
                    .states
                    .iter()
                    .zip(&truth)
                    .map(|(a, b)| a.distance(b))
                    .collect();
                ade = ade.min(d.iter().sum::<f64>() / d.len() as f64);
                fde = fde.min(*d.last().expect("non-empty horizon"));
            }
            for key in [node.node_type.to_string(), "all".to_string()] {
                let e = acc.entry(key).or_default();
                e.0 += 1;
                e.1 += nll;
                e.2 += ade;
                e.3 += fde;
            }
        }
    }
    let rows: Vec<EvalRow> = acc
        .into_iter()
        .map(|(k, (n, nll, ade, fde))| {
            let n_f = n as f64;
            EvalRow {
                node_type: k,
                nodes: n,
                mean_node_nll: nll / n_f,
                min_ade: ade / n_f,
                min_fde: fde / n_f,
                samples: count,
            }
        })
        .collect();
    write_csv(&out.join("eval.csv"), &rows)?;
    let summary = EvalSummary {
        examples: val.len(),
        mean_example_nll: total / val.len() as f64,
        rows,
    };
    ExperimentReport::new("eval", cfg, &summary.rows)?.write(out)?;
    Ok(summary)
}

// ----- ablate -----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub n_k: usize,
    pub k_z: usize,
    pub n_gmm: usize,
    pub parameters: usize,
    pub initial_val_nll: Option<f64>,
    /// Mean per-example NLL over the full validation split.
    pub final_val_nll: Option<f64>,
    /// Divergence message when training failed.
    pub diverged: Option<String>,
}

/// Train one model per latent/mixture variant with the same seed and
/// schedule, then score each on the whole validation split. Each variant's
/// weights are saved next to `ablation.csv`.
pub fn cmd_ablate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<AblationRow>> {
    ensure_dir(out)?;
    let ds = Dataset::prepare(cfg)?;
    let val = validation_set(&ds)?;
    let mut rows = Vec::new();
    for v in &cfg.ablate.variants {
        let model = variant_model(&cfg.model, v)?;
        rows.push(match fit(cfg, model, &ds, |_| Ok(())) {
            Ok((reg, report)) => {
                report
                    .checkpoint
                    .save(out.join(ablation_checkpoint_name(v)))?;
                AblationRow {
                    variant: v.label(),
                    n_k: v.n_k,
                    k_z: v.k_z,
                    n_gmm: v.n_gmm,
                    parameters: reg.parameter_count(),
                    initial_val_nll: report.initial_val_nll,
                    final_val_nll: Some(mean_nll(val, &reg)?),
                    diverged: None,
                }
            }
            Err(e @ Error::Divergence { .. }) => AblationRow {
                variant: v.label(),
                n_k: v.n_k,
                k_z: v.k_z,
                n_gmm: v.n_gmm,
                parameters: 0,
                initial_val_nll: None,
                final_val_nll: None,
                diverged: Some(e.to_string()),
            },
            Err(e) => return Err(e),
        });
    }
    write_csv(&out.join("ablation.csv"), &rows)?;
    ExperimentReport::new("ablate", cfg, &rows)?.write(out)?;
    Ok(rows)
}

/// File name of a variant's trained weights inside the output directory.
pub fn ablation_checkpoint_name(v: &Variant) -> String {
    format!("checkpoint-{}-{}-{}.json", v.n_k, v.k_z, v.n_gmm)
}

pub fn variant_model(base: &ModelConfig, v: &Variant) -> Result<ModelConfig> {
    let m = ModelConfig {
        latent: LatentSpec::new(v.n_k, v.k_z)?,
        n_gmm: v.n_gmm,
        ..base.clone()
    };
    m.validate()?;
    Ok(m)
}

// ----- sweep-radius -----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadiusRow {
    pub radius: f64,
    pub parameters: usize,
    pub mean_nodes: f64,
    pub mean_edges: f64,
    /// Edges a complete graph over the same scenes would have.
    pub mean_complete_edges: f64,
    pub mean_tape_bytes: f64,
    pub mean_forward_ms: f64,
    pub final_val_nll: f64,
}

/// One model per edge radius, scored on validation windows cut at that radius.
pub fn cmd_sweep_radius(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<RadiusRow>> {
    ensure_dir(out)?;
    let mut ds = Dataset::prepare(cfg)?;
    let mut rows = Vec::new();
    for &r in &cfg.sweep.radii {
        if !(r > 0.0) {
            return Err(Error::Config(format!(
                "edge radius must be positive, got {r}"
            )));
        }
        ds.rewindow(&cfg.data, r)?;
        let val = validation_set(&ds)?.to_vec();
        let (reg, _) = fit(cfg, cfg.model.clone(), &ds, |_| Ok(()))?;
        let n = val.len() as f64;
        let mut nodes = 0.0;
        let mut edges = 0.0;
        let mut complete = 0.0;
        let mut bytes = 0.0;
        let mut ms = 0.0;
        let mut nll = 0.0;
        for ex in &val {
            let k = ex.graph.nodes().len() as f64;
            nodes += k;
            edges += ex.graph.edge_count() as f64;
            complete += k * (k - 1.0) / 2.0;
            let t0 = Instant::now();
            let (value, tape_bytes) = forward(ex, &reg)?;
            ms += t0.elapsed().as_secs_f64() * 1e3;
            bytes += tape_bytes as f64;
            nll += value;
        }
        rows.push(RadiusRow {
            radius: r,
            parameters: reg.parameter_count(),
            mean_nodes: nodes / n,
            mean_edges: edges / n,
            mean_complete_edges: complete / n,
            mean_tape_bytes: bytes / n,
            mean_forward_ms: ms / n,
            final_val_nll: nll / n,
        });
    }
    write_csv(&out.join("radius.csv"), &rows)?;
    ExperimentReport::new("sweep-radius", cfg, &rows)?.write(out)?;
    Ok(rows)
}

/// Inference-mode NLL of every modeled node on one tape; returns the summed
/// NLL and the tape's size.
pub fn forward(example: &TrainingExample, reg: &WeightRegistry) -> Result<(f64, usize)> {
    let mut tape = Tape::new();
    let mut cache = SceneCache::default();
    let mut total = 0.0;
    for n in example.humans() {
        let t = node_terms(
            &mut tape,
            reg,
            example,
            n.id,
            Mode::Inference,
            1.0,
            &mut cache,
        )?;
        total += tape.value(t.nll).data()[0];
    }
    Ok((total, tape.memory_bytes()))
}

// ----- compare-aggregation -----

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationRow {
    /// `edge_input` or `reducer`.
    pub study: String,
    pub aggregation: Aggregation,
    pub reducer: Reducer,
    pub parameters: usize,
    pub final_val_nll: f64,
}

/// Sum vs mean edge inputs (with the configured reducer), then each reducer
/// (with the configured edge input), all from the same seed.
pub fn cmd_compare_aggregation(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<AggregationRow>> {
    ensure_dir(out)?;
    let ds = Dataset::prepare(cfg)?;
    let val = validation_set(&ds)?;
    let mut rows = Vec::new();
    let mut run = |study: &str, model: ModelConfig| -> Result<()> {
        let (reg, _) = fit(cfg, model.clone(), &ds, |_| Ok(()))?;
        rows.push(AggregationRow {
            study: study.into(),
            aggregation: model.aggregation,
            reducer: model.reducer,
            parameters: reg.parameter_count(),
            final_val_nll: mean_nll(val, &reg)?,
        });
        Ok(())
    };
    for &a in &cfg.aggregation.edge_inputs {
        run(
            "edge_input",
            ModelConfig {
                aggregation: a,
                ..cfg.model.clone()
            },
        )?;
    }
    for &r in &cfg.aggregation.reducers {
        run(
            "reducer",
            ModelConfig {
                reducer: r,
                ..cfg.model.clone()
            },
        )?;
    }
    write_csv(&out.join("aggregation.csv"), &rows)?;
    ExperimentReport::new("compare-aggregation", cfg, &rows)?.write(out)?;
    Ok(rows)
}
