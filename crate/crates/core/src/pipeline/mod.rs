//! File formats, synthetic-data generation and feature export: the glue
//! the command-line pipeline is built from.

pub mod features;
pub mod formats;
pub mod synth;

pub use features::{export_features, FeatureMatrix, Representation};
pub use formats::{
    from_toml_str, read_toml, to_toml_string, write_toml, FrameDiagnostics, KeypointEntry,
    MultiviewLabelFile, PoseFile, PoseFrame, TrackFile, TrackFrame,
};
pub use synth::{synth_generate, CameraLayout, SynthOutput, SynthSpec, SYNTH_DISTANCE_MM};
