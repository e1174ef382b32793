//! Image-method scene simulation with full ground truth.

mod config;
mod render;
mod room;
mod synth;

pub use config::{
    export_scene, noise_seed, scene_file_names, NoiseConfig, NoiseKind, SceneConfig, SourceConfig, SynthConfig,
};
pub use render::{convolve_truncated, render_scene, NoiseSpec, Scene, SceneSpec};
pub use room::{
    distance, energy_decay_curve, simulate_air, simulate_air_with_length, split_air, RoomSpec, COVERAGE_FACTOR,
    MIN_DISTANCE,
};
pub use synth::speech_like;
