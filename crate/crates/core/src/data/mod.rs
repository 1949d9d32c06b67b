//! Play files, dataset windowing and the synthetic interaction generator.

mod csv_import;
mod play;
mod synth;
mod window;

pub use csv_import::{import_sportvu_csv, CsvImportOptions, Units};
pub use play::{
    parse_plays, BoundsPolicy, Play, PlayFile, PlayFileHeader, PlayerTrack, PLAY_FORMAT_VERSION,
};
pub use synth::{synth_generate, SynthConfig};
pub use window::{
    window_count, window_dataset, window_play, Frame, NodeSeries, TrainingExample, Windowed,
};
