//! Synthetic two-class corpus of cough-like noise bursts.
//!
//! Negative recordings carry bursts band-limited to 300-800 Hz, positive
//! ones to 1.5-3 kHz. Burst count, burst length, gaps and durations are
//! random; genders alternate within each class.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{write_wav_i16, AudioClip, AudioError};
use crate::dataset::{assign_stratified_folds, write_manifest, DatasetError, FoldAssignment, Gender, Label, SampleRecord};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot create {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("invalid synthesis settings: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_per_class: usize,
    pub seed: u64,
    pub sample_rate_hz: u32,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    pub k_folds: usize,
    pub negative_band_hz: [f64; 2],
    pub positive_band_hz: [f64; 2],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_class: 50,
            seed: 0,
            sample_rate_hz: 16_000,
            min_duration_s: 1.0,
            max_duration_s: 8.0,
            k_folds: 5,
            negative_band_hz: [300.0, 800.0],
            positive_band_hz: [1500.0, 3000.0],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        let band_ok = |[lo, hi]: [f64; 2]| lo > 0.0 && lo < hi && hi < nyquist;
        if self.n_per_class == 0 || self.k_folds < 2 {
            return Err(SynthError::Config("n_per_class must be positive and k_folds at least 2".into()));
        }
        if !(self.min_duration_s > 0.0 && self.min_duration_s <= self.max_duration_s) {
            return Err(SynthError::Config("durations must satisfy 0 < min <= max".into()));
        }
        if !band_ok(self.negative_band_hz) || !band_ok(self.positive_band_hz) {
            return Err(SynthError::Config("bands must lie strictly inside (0, Nyquist)".into()));
        }
        Ok(())
    }
}

/// Number of sinusoids summed to approximate band-limited noise.
const PARTIALS: usize = 16;

/// Random bursts of band-limited noise over faint broadband noise.
pub fn synth_clip<R: Rng>(band: [f64; 2], duration_s: f64, rate: u32, rng: &mut R) -> AudioClip {
    let n = (duration_s * rate as f64).round() as usize;
    let mut samples: Vec<f32> = (0..n).map(|_| rng.gen_range(-1e-3..1e-3)).collect();
    let bursts = rng.gen_range(1..=4usize);
    let slot = n / bursts;
    for b in 0..bursts {
        let len = ((rng.gen_range(0.15..0.5) * rate as f64) as usize).min(slot);
        let start = b * slot + rng.gen_range(0..=slot - len);
        let amplitude = rng.gen_range(0.3..0.8) / PARTIALS as f64;
        let partials: Vec<(f64, f64)> = (0..PARTIALS)
            .map(|_| {
                let f = rng.gen_range(band[0]..band[1]);
                (2.0 * std::f64::consts::PI * f / rate as f64, rng.gen_range(0.0..2.0 * std::f64::consts::PI))
            })
            .collect();
        for i in 0..len {
            // Hann envelope over the burst.
            let env = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos();
            let v: f64 = partials.iter().map(|&(w, phase)| (w * i as f64 + phase).sin()).sum();
            samples[start + i] += (amplitude * env * v) as f32;
        }
    }
    AudioClip::new(samples, rate)
}

/// Writes `audio/<id>.wav` files and `manifest.csv` under `dir`; returns the records.
pub fn generate_corpus(dir: &Path, config: &SynthConfig) -> Result<Vec<SampleRecord>, SynthError> {
    config.validate()?;
    let audio_dir = dir.join("audio");
    fs::create_dir_all(&audio_dir).map_err(|e| SynthError::Io {
        path: audio_dir.clone(),
        reason: e.to_string(),
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(2 * config.n_per_class);
    for (label, band, tag) in [(Label::Negative, config.negative_band_hz, "neg"), (Label::Positive, config.positive_band_hz, "pos")] {
        for i in 0..config.n_per_class {
            let id = format!("syn_{tag}_{i:03}");
            let duration = rng.gen_range(config.min_duration_s..=config.max_duration_s);
            let clip = synth_clip(band, duration, config.sample_rate_hz, &mut rng);
            let path = audio_dir.join(format!("{id}.wav"));
            write_wav_i16(&path, &clip)?;
            records.push(SampleRecord {
                id,
                path,
                label,
                gender: if i % 2 == 0 { Gender::Female } else { Gender::Male },
                fold: FoldAssignment::Fold(0),
            });
        }
    }
    assign_stratified_folds(&mut records, config.k_folds, &mut rng);
    write_manifest(&dir.join("manifest.csv"), &records)?;
    Ok(records)
}
