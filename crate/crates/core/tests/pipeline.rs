//! End-to-end runs of the experiment commands on the smoke configuration.

use std::path::Path;

use nhuman::experiments::profile_types;
use nhuman::experiments::{
    cmd_eval, cmd_sample, cmd_sweep_radius, cmd_synth_gen, cmd_train, ExperimentConfig,
};
use nhuman::model::{Aggregation, ModelConfig, Reducer, TypeSet, WeightRegistry};

fn config(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name);
    ExperimentConfig::load(&path).unwrap().resolved().unwrap()
}

#[test]
fn shipped_configs_load_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let cfg = ExperimentConfig::load(&path).unwrap().resolved();
        assert!(cfg.is_ok(), "{}: {:?}", path.display(), cfg.err());
        seen += 1;
    }
    assert!(seen >= 6);
}

#[test]
fn config_hash_tracks_content() {
    let a = config("smoke.toml");
    let mut b = a.clone();
    assert_eq!(a.hash(), b.hash());
    b.seed += 1;
    assert_ne!(a.hash(), b.hash());
}

#[test]
fn train_eval_sample_round() {
    let cfg = config("smoke.toml");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let synth = cmd_synth_gen(&cfg, out).unwrap();
    assert!(synth.plays > 0 && out.join("plays.json").exists());

    let train = cmd_train(&cfg, out).unwrap();
    assert_eq!(train.steps, cfg.train.steps);
    let metrics = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), cfg.train.steps + 1);
    assert!(!metrics.contains("wall_ms"));
    assert!(out.join("checkpoint.json").exists());

    let eval = cmd_eval(&cfg, out).unwrap();
    assert!(eval.examples > 0 && eval.mean_example_nll.is_finite());
    assert!(eval.rows.iter().any(|r| r.node_type == "all"));

    let s = cmd_sample(&cfg, out).unwrap();
    let svg = std::fs::read_to_string(&s.svg_path).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    for (k, panel) in s.panels.iter().enumerate() {
        for ns in &panel.nodes {
            assert_eq!(ns.samples.len(), cfg.sample.count);
            let tag = format!("data-node=\"{}\"", ns.id);
            let drawn = svg.matches(&tag).count();
            assert_eq!(
                drawn,
                cfg.sample.count * s.panels.len(),
                "panel {k} node {}",
                ns.id
            );
        }
    }
    let lines = std::fs::read_to_string(&s.jsonl_path).unwrap();
    let nodes: usize = s.panels.iter().map(|p| p.nodes.len()).sum();
    assert_eq!(lines.lines().count(), nodes * cfg.sample.count);
}

#[test]
fn sweep_trains_one_model_per_radius() {
    let mut cfg = config("smoke.toml");
    cfg.train.steps = 2;
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_sweep_radius(&cfg, dir.path()).unwrap();
    assert_eq!(rows.len(), cfg.sweep.radii.len());
    for (r, radius) in rows.iter().zip(&cfg.sweep.radii) {
        assert_eq!(r.radius, *radius);
        assert!(r.final_val_nll.is_finite());
    }
    // A wider radius never yields fewer edges.
    assert!(rows.windows(2).all(|w| w[0].mean_edges <= w[1].mean_edges));
    assert!(dir.path().join("radius.csv").exists());
}

#[test]
fn aggregation_variants_start_from_the_same_weights() {
    let types = TypeSet::new(profile_types()).unwrap();
    let base = ModelConfig {
        dec_hidden: 16,
        ..ModelConfig::default()
    };
    let build = |aggregation, reducer| {
        WeightRegistry::new(
            ModelConfig {
                aggregation,
                reducer,
                ..base.clone()
            },
            types.clone(),
            9,
        )
        .unwrap()
    };
    let sum = build(Aggregation::Sum, Reducer::Sum);
    let mean = build(Aggregation::Mean, Reducer::Sum);
    assert_eq!(sum.store().len(), mean.store().len());
    for id in sum.store().ids() {
        assert_eq!(sum.store().get(id), mean.store().get(id));
    }
    // The BiLSTM reducer widens the context, but encoders upstream of it
    // start out the same.
    let bi = build(Aggregation::Sum, Reducer::BiLstm);
    assert!(bi.parameter_count() > sum.parameter_count());
    let upstream = ["EE/", "FCE/", "NHE/"];
    for id in sum.store().ids() {
        let name = sum.store().name(id);
        if !upstream.iter().any(|p| name.starts_with(p)) {
            continue;
        }
        let other = bi.store().id_of(name).unwrap();
        assert_eq!(sum.store().get(id), bi.store().get(other), "{name}");
    }
}
