//! Synthetic anechoic scenes of stationary point sources, rendered as
//! first-order Ambisonics, binaural (parametric head model) and mono.

mod bank;
mod render;
mod scene;

pub use bank::{procedural_bank, split_bank, EventBank, PROCEDURAL_CLASSES};
pub use render::{
    binauralize, binauralize_raw, encode_foa, encode_foa_raw, mono, render_recording,
    woodworth_itd, RenderedRecording, HEAD_RADIUS, PEAK_TARGET, SHADOW_CUTOFF_HZ, SPEED_OF_SOUND,
};
pub use scene::{
    direction_grid, recording_rng, sample_scene, SceneEvent, SceneSpec, SynthConfig, PLACEMENT_RETRIES,
};
