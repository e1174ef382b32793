//! Multi-channel far-field speech enhancement front-end.
//!
//! The processing chain is WPE dereverberation, time-frequency mask
//! estimation (oracle binary masks or cACGMM spatial clustering), and
//! mask-driven MVDR or GEV beamforming. An image-method room simulator
//! provides scenes with known early/late/noise components so that each
//! stage can be scored against ground truth.
//!
//! Per-frequency work runs on rayon when the `parallel` feature is enabled
//! (the default); see [`par`].
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamform;
pub mod error;
pub mod features;
pub mod linalg;
pub mod masks;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod scene;
pub mod signal;
pub mod stft;
pub mod tensor_io;
pub mod wav;
pub mod wpe;

pub use error::{Error, Result};
pub use signal::TimeSignal;
pub use stft::{istft, stft, ComplexSpectrogram, StftConfig, WindowKind};
pub use wpe::{wpe, WpeConfig, WpeResult};
