//! Recording to patches: resample, optional activity detection, render.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{load_wav, resample, AudioClip, AudioError, PIPELINE_RATE_HZ};
use crate::sad::{apply_sad, SadConfig, SadError};
use crate::spectro::{make_patches, Patch, SpectroConfig, SpectroError};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error(transparent)]
    Sad(#[from] SadError),
    #[error(transparent)]
    Spectro(#[from] SpectroError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub sad_enabled: bool,
    pub sad: SadConfig,
    pub spectro: SpectroConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            sad_enabled: true,
            sad: SadConfig::default(),
            spectro: SpectroConfig::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        self.sad.validate()?;
        self.spectro.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub patches: Vec<Patch>,
    /// Duration of the audio that was cut into patches.
    pub active_duration_s: f64,
    /// Activity detection found no active frame.
    pub sad_degenerate: bool,
}

pub fn preprocess_clip(clip: &AudioClip, id: &str, config: &PreprocessConfig) -> Result<Preprocessed, PreprocessError> {
    config.validate()?;
    let clip = resample(clip, PIPELINE_RATE_HZ)?;
    let (clip, degenerate) = if config.sad_enabled {
        let out = apply_sad(&clip, &config.sad)?;
        (out.clip, out.degenerate)
    } else {
        (clip, false)
    };
    Ok(Preprocessed {
        patches: make_patches(&clip, id, &config.spectro)?,
        active_duration_s: clip.duration_s(),
        sad_degenerate: degenerate,
    })
}

pub fn preprocess_file(path: &Path, id: &str, config: &PreprocessConfig) -> Result<Preprocessed, PreprocessError> {
    preprocess_clip(&load_wav(path)?, id, config)
}
