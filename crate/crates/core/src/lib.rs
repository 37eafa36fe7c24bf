//! Multichannel polyphonic sound event detection: scene synthesis, feature
//! extraction, a small reverse-mode neural network engine, the 3D-conv
//! C3RNN / CRNN models, segment-based metrics and the training loop.
//!
//! Everything here is `no_std` + `alloc`; file formats, datasets on disk and
//! the command line live in the `polysed` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod audio;
pub mod error;
pub mod features;
pub mod fft;
pub mod math;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

pub use audio::{event_roll, AudioClip, EventInstance, EventRoll};
pub use error::{Error, Result};
pub use features::{FeatureConfig, FeatureKind, FeatureTensor};
