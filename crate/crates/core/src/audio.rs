//! WAV decoding and sample-rate conversion.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use thiserror::Error;

/// Rate every recording is brought to before any analysis.
pub const PIPELINE_RATE_HZ: u32 = 8000;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("audio file not found: {0}")]
    NotFound(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed WAV file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("unsupported WAV encoding in {path}: {reason}")]
    Unsupported { path: PathBuf, reason: String },
    #[error("WAV file {0} contains no samples")]
    Empty(PathBuf),
    #[error("invalid sample rate {0}")]
    InvalidRate(u32),
}

/// Mono audio buffer with amplitudes in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate_hz: u32,
}

impl AudioClip {
    /// Panics if the rate is zero; amplitudes are clamped to [-1, 1] and
    /// non-finite values replaced by zero.
    pub fn new(samples: Vec<f32>, sample_rate_hz: u32) -> Self {
        assert!(sample_rate_hz > 0, "sample rate must be positive");
        let samples = samples
            .into_iter()
            .map(|s| if s.is_finite() { s.clamp(-1.0, 1.0) } else { 0.0 })
            .collect();
        Self {
            samples,
            sample_rate_hz,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Decodes a PCM WAV file (8/16/24/32-bit integer or 32-bit float) to mono.
///
/// Channels are averaged. Integer PCM is scaled by 2^(bits-1).
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            AudioError::NotFound(path.to_path_buf())
        } else {
            AudioError::Io {
                path: path.to_path_buf(),
                source: e,
            }
        }
    })?;
    let reader = hound::WavReader::new(BufReader::new(file)).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 {
        return Err(AudioError::Malformed {
            path: path.to_path_buf(),
            reason: "zero channels".into(),
        });
    }
    if spec.sample_rate == 0 {
        return Err(AudioError::Malformed {
            path: path.to_path_buf(),
            reason: "zero sample rate".into(),
        });
    }

    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (hound::SampleFormat::Int, bits @ (8 | 16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 / scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(|e| map_hound(path, e))?
        }
        (format, bits) => {
            return Err(AudioError::Unsupported {
                path: path.to_path_buf(),
                reason: format!("{format:?} with {bits} bits per sample"),
            })
        }
    };

    let channels = spec.channels as usize;
    let mono: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| (frame.iter().map(|&s| s as f64).sum::<f64>() / channels as f64) as f32)
        .collect();
    if mono.is_empty() {
        return Err(AudioError::Empty(path.to_path_buf()));
    }
    Ok(AudioClip::new(mono, spec.sample_rate))
}

fn map_hound(path: &Path, err: hound::Error) -> AudioError {
    let path = path.to_path_buf();
    match err {
        hound::Error::IoError(source) if source.kind() == std::io::ErrorKind::UnexpectedEof => {
            AudioError::Malformed {
                path,
                reason: "truncated file".into(),
            }
        }
        hound::Error::IoError(source) => AudioError::Io { path, source },
        hound::Error::FormatError(reason) => AudioError::Malformed {
            path,
            reason: reason.to_string(),
        },
        hound::Error::Unsupported => AudioError::Unsupported {
            path,
            reason: "codec is not integer or float PCM".into(),
        },
        hound::Error::TooWide | hound::Error::InvalidSampleFormat => AudioError::Unsupported {
            path,
            reason: err.to_string(),
        },
        other => AudioError::Malformed {
            path,
            reason: other.to_string(),
        },
    }
}

/// Writes a mono 16-bit PCM WAV.
pub fn write_wav_i16(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), AudioError> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let write = || -> Result<(), hound::Error> {
        let mut writer = hound::WavWriter::create(path, spec)?;
        for &s in clip.samples() {
            writer.write_sample((s * 32767.0).round().clamp(-32768.0, 32767.0) as i16)?;
        }
        writer.finalize()
    };
    write().map_err(|e| map_hound(path, e))
}

const KAISER_BETA: f64 = 8.0;
/// Kernel length measured in samples of the lower of the two rates.
const KERNEL_TAPS: usize = 64;
const CUTOFF_FRACTION: f64 = 0.95;
const MAX_PRECOMPUTED_PHASES: usize = 1024;

/// Converts the clip to `target_rate_hz` with a Kaiser-windowed sinc filter.
///
/// Output length is `round(len * target / source)`. A clip already at the
/// target rate is returned unchanged.
pub fn resample(clip: &AudioClip, target_rate_hz: u32) -> Result<AudioClip, AudioError> {
    if target_rate_hz == 0 {
        return Err(AudioError::InvalidRate(target_rate_hz));
    }
    let source = clip.sample_rate_hz;
    if source == target_rate_hz {
        return Ok(clip.clone());
    }
    let resampler = SincResampler::new(source, target_rate_hz);
    Ok(AudioClip::new(resampler.process(clip.samples()), target_rate_hz))
}

/// Polyphase resampler for the rational ratio `up / down` (reduced).
struct SincResampler {
    up: u64,
    down: u64,
    /// Normalized cutoff as a fraction of the input rate, times two.
    cutoff: f64,
    /// Half support of the kernel, in input samples.
    half_width: f64,
    /// Per-phase kernels when the phase count is small enough.
    table: Option<Vec<Vec<f64>>>,
    taps_before: i64,
    taps_total: usize,
}

impl SincResampler {
    fn new(source: u32, target: u32) -> Self {
        let g = gcd(source as u64, target as u64);
        let (up, down) = (target as u64 / g, source as u64 / g);
        let scale = (target as f64 / source as f64).min(1.0);
        let cutoff = CUTOFF_FRACTION * scale;
        let half_width = KERNEL_TAPS as f64 / 2.0 / scale;
        let taps_before = half_width.floor() as i64;
        let taps_total = 2 * taps_before as usize + 2;
        let mut resampler = Self {
            up,
            down,
            cutoff,
            half_width,
            table: None,
            taps_before,
            taps_total,
        };
        if (up as usize) <= MAX_PRECOMPUTED_PHASES {
            let table = (0..up)
                .map(|phase| resampler.phase_kernel(phase as f64 / up as f64))
                .collect();
            resampler.table = Some(table);
        }
        resampler
    }

    /// Kernel weights for input offsets `-taps_before ..= taps_before + 1`
    /// relative to `floor(t)`, where `frac = t - floor(t)`.
    fn phase_kernel(&self, frac: f64) -> Vec<f64> {
        (0..self.taps_total)
            .map(|i| {
                let offset = i as i64 - self.taps_before;
                self.kernel(frac - offset as f64)
            })
            .collect()
    }

    fn kernel(&self, tau: f64) -> f64 {
        if tau.abs() > self.half_width {
            return 0.0;
        }
        let x = self.cutoff * tau;
        let sinc = if x.abs() < 1e-12 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        };
        let r = tau / self.half_width;
        let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / bessel_i0(KAISER_BETA);
        self.cutoff * sinc * window
    }

    fn process(&self, input: &[f32]) -> Vec<f32> {
        let n_in = input.len() as u64;
        let n_out = ((n_in as u128 * self.up as u128 + self.down as u128 / 2) / self.down as u128) as usize;
        let mut out = Vec::with_capacity(n_out);
        let mut scratch;
        for m in 0..n_out as u64 {
            // input position t = m * down / up
            let numer = m * self.down;
            let base = (numer / self.up) as i64;
            let phase = (numer % self.up) as usize;
            let weights: &[f64] = match &self.table {
                Some(table) => &table[phase],
                None => {
                    scratch = self.phase_kernel(phase as f64 / self.up as f64);
                    &scratch
                }
            };
            let mut acc = 0.0f64;
            for (i, &w) in weights.iter().enumerate() {
                let idx = base + i as i64 - self.taps_before;
                if idx >= 0 && (idx as u64) < n_in {
                    acc += w * input[idx as usize] as f64;
                }
            }
            out.push(acc as f32);
        }
        out
    }
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}
