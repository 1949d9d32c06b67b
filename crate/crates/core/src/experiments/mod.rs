//! Experiment drivers behind the command-line tool. Each command reads an
//! [`ExperimentConfig`], writes its artifacts into an output directory and
//! returns the numbers it wrote.

mod config;
mod dataset;
mod profile;
mod report;
mod run;
mod sample;
mod stats;
mod svg;

pub use config::{
    AblateConfig, AgentFuture, AggregationConfig, DataConfig, DataSource, ExperimentConfig,
    Overrides, ProfileConfig, SampleConfig, SweepConfig, Variant,
};
pub use dataset::{load_plays, resolve_types, split_plays, Dataset};
pub use profile::{
    cmd_profile, lattice_scene, profile_types, ProfileRow, ProfileSummary, LATTICE_RADIUS,
    LATTICE_SPACING,
};
pub use report::{ensure_dir, write_csv, Environment, ExperimentReport, JsonLines};
pub use run::{
    ablation_checkpoint_name, checkpoint_path, cmd_ablate, cmd_compare_aggregation, cmd_eval,
    cmd_sweep_radius, cmd_synth_gen, cmd_train, fit, forward, restore, variant_model, AblationRow,
    AggregationRow, EvalRow, EvalSummary, RadiusRow, SynthSummary, TrainSummary,
};
pub use sample::{
    cmd_sample, sample_panels, select_example, SampleOutcome, SamplePanel, SampleRow,
};
pub use stats::{linear_fit, median, silhouette, LinearFit};
pub use svg::{render_svg, z_color, Panel};
