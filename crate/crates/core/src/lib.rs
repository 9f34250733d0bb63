//! Cough-recording screening pipeline.
//!
//! Recordings are resampled to 8 kHz, optionally stripped of silence, cut
//! into 1 s spectrogram patches rendered as RGB images, and classified by a
//! small CNN with optional contextual attention and gender conditioning.
//! Recording scores are the median of patch probabilities.

pub mod audio;
pub mod sad;
pub mod spectro;
pub mod dataset;
pub mod metrics;
pub mod nn;
pub mod attention;
pub mod models;
pub mod harness;
pub mod synth;
pub mod preprocess;
