//! Sound activity detection: drop silent frames and keep the rest in order.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;

#[derive(Debug, Error, PartialEq)]
pub enum SadError {
    #[error("frame length must be positive, got {0} ms")]
    InvalidFrameLength(f64),
    #[error("threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("clip is empty")]
    EmptyClip,
    #[error("spectral flux needs at least two frames, clip has {frames}")]
    TooShort { frames: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SadMethod {
    Rms,
    SpectralFlux,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SadConfig {
    pub frame_len_ms: f64,
    pub threshold: f64,
    pub method: SadMethod,
}

impl Default for SadConfig {
    fn default() -> Self {
        Self {
            frame_len_ms: 64.0,
            threshold: 0.1,
            method: SadMethod::Rms,
        }
    }
}

impl SadConfig {
    pub fn validate(&self) -> Result<(), SadError> {
        if !(self.frame_len_ms > 0.0) || !self.frame_len_ms.is_finite() {
            return Err(SadError::InvalidFrameLength(self.frame_len_ms));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(SadError::InvalidThreshold(self.threshold));
        }
        Ok(())
    }
}

/// Result of [`apply_sad`].
#[derive(Debug, Clone)]
pub struct SadOutput {
    pub clip: AudioClip,
    pub frames_total: usize,
    pub frames_kept: usize,
    /// No frame reached the threshold; only the most active one was kept.
    pub degenerate: bool,
}

/// Frame length in samples, at least one.
pub fn frame_len_samples(frame_len_ms: f64, sample_rate_hz: u32) -> usize {
    ((frame_len_ms * sample_rate_hz as f64 / 1000.0).round() as usize).max(1)
}

/// RMS of each non-overlapping frame; a trailing partial frame uses its own length.
pub fn frame_rms(clip: &AudioClip, frame_len_ms: f64) -> Vec<f64> {
    let frame = frame_len_samples(frame_len_ms, clip.sample_rate_hz());
    clip.samples()
        .chunks(frame)
        .map(|chunk| {
            let sum_sq: f64 = chunk.iter().map(|&s| (s as f64) * (s as f64)).sum();
            (sum_sq / chunk.len() as f64).sqrt()
        })
        .collect()
}

/// Scales to [0, 1]. A degenerate (constant) input maps to all zeros.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = max - min;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - min) / range).collect()
}

/// Half-wave rectified L2 difference between consecutive Hann-windowed
/// magnitude spectra of non-overlapping frames. The first frame scores 0.
pub fn spectral_flux(clip: &AudioClip, frame_len_ms: f64) -> Result<Vec<f64>, SadError> {
    let frame = frame_len_samples(frame_len_ms, clip.sample_rate_hz());
    let frames = clip.len().div_ceil(frame);
    if frames < 2 {
        return Err(SadError::TooShort { frames });
    }
    let fft = FftPlanner::<f64>::new().plan_fft_forward(frame);
    let window = crate::spectro::hann_window(frame);
    let bins = frame / 2 + 1;
    let mut prev: Option<Vec<f64>> = None;
    let mut flux = Vec::with_capacity(frames);
    let mut buf = vec![Complex::new(0.0, 0.0); frame];
    for chunk in clip.samples().chunks(frame) {
        for (i, slot) in buf.iter_mut().enumerate() {
            let s = chunk.get(i).copied().unwrap_or(0.0) as f64;
            *slot = Complex::new(s * window[i], 0.0);
        }
        fft.process(&mut buf);
        let mags: Vec<f64> = buf[..bins].iter().map(|c| c.norm()).collect();
        let value = match &prev {
            None => 0.0,
            Some(p) => mags
                .iter()
                .zip(p)
                .map(|(m, q)| (m - q).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt(),
        };
        flux.push(value);
        prev = Some(mags);
    }
    Ok(flux)
}

/// Keeps the frames whose normalized activity is `>= threshold`, concatenated
/// in time order.
pub fn apply_sad(clip: &AudioClip, config: &SadConfig) -> Result<SadOutput, SadError> {
    config.validate()?;
    if clip.is_empty() {
        return Err(SadError::EmptyClip);
    }
    let activity = match config.method {
        SadMethod::Rms => frame_rms(clip, config.frame_len_ms),
        SadMethod::SpectralFlux => spectral_flux(clip, config.frame_len_ms)?,
    };
    let normalized = minmax_normalize(&activity);
    let frame = frame_len_samples(config.frame_len_ms, clip.sample_rate_hz());
    let frames: Vec<&[f32]> = clip.samples().chunks(frame).collect();

    let mut kept = Vec::with_capacity(clip.len());
    let mut frames_kept = 0;
    for (chunk, &score) in frames.iter().zip(&normalized) {
        if score >= config.threshold {
            kept.extend_from_slice(chunk);
            frames_kept += 1;
        }
    }

    let degenerate = frames_kept == 0;
    if degenerate {
        // first occurrence of the maximum
        let best = activity
            .iter()
            .enumerate()
            .fold(0, |best, (i, &v)| if v > activity[best] { i } else { best });
        log::warn!("no frame passed sound activity detection; keeping frame {best}");
        kept.extend_from_slice(frames[best]);
        frames_kept = 1;
    }

    Ok(SadOutput {
        clip: AudioClip::new(kept, clip.sample_rate_hz()),
        frames_total: frames.len(),
        frames_kept,
        degenerate,
    })
}
