//! STFT magnitude spectrograms, colormapped image rendering and 1 s patching.

mod lut;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioClip;

#[derive(Debug, Error)]
pub enum SpectroError {
    #[error("invalid spectrogram configuration: {0}")]
    InvalidConfig(String),
    #[error("clip is empty")]
    EmptyClip,
    #[error("cannot write {path}: {reason}")]
    Write { path: PathBuf, reason: String },
    #[error("cannot read patch image {path}: {reason}")]
    Read { path: PathBuf, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreqScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Colormap {
    Magma,
    Viridis,
}

impl Colormap {
    /// Color for a value in [0, 1]; out-of-range values are clamped.
    pub fn map(self, value: f64) -> [u8; 3] {
        let table = match self {
            Colormap::Magma => &lut::MAGMA,
            Colormap::Viridis => &lut::VIRIDIS,
        };
        let v = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
        table[((v * 255.0).round() as usize).min(255)]
    }
}

/// How the signal is extended by half a window at each end before framing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadMode {
    Reflect,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectroConfig {
    pub win_len_samples: usize,
    pub hop_samples: usize,
    pub pad_mode: PadMode,
    pub freq_scale: FreqScale,
    pub colormap: Colormap,
    pub image_px: usize,
    pub patch_len_s: f64,
    pub patch_overlap: f64,
    pub db_floor: f64,
}

impl Default for SpectroConfig {
    fn default() -> Self {
        Self {
            win_len_samples: 1024,
            hop_samples: 128,
            pad_mode: PadMode::Reflect,
            freq_scale: FreqScale::Log,
            colormap: Colormap::Magma,
            image_px: 256,
            patch_len_s: 1.0,
            patch_overlap: 0.5,
            db_floor: -80.0,
        }
    }
}

impl SpectroConfig {
    pub fn validate(&self) -> Result<(), SpectroError> {
        let fail = |msg: &str| Err(SpectroError::InvalidConfig(msg.to_string()));
        if self.win_len_samples < 2 || self.hop_samples == 0 {
            return fail("window must be at least 2 samples and hop positive");
        }
        if self.hop_samples > self.win_len_samples {
            return fail("hop must not exceed the window length");
        }
        if !(0.0..1.0).contains(&self.patch_overlap) {
            return fail("patch overlap must lie in [0, 1)");
        }
        if self.image_px < 2 {
            return fail("image must be at least 2 pixels wide");
        }
        if !(self.patch_len_s > 0.0) {
            return fail("patch length must be positive");
        }
        if !(self.db_floor < 0.0) {
            return fail("dB floor must be negative");
        }
        Ok(())
    }

    /// Patch length and patch hop in samples at the given rate.
    pub fn patch_geometry(&self, sample_rate_hz: u32) -> (usize, usize) {
        let len = ((self.patch_len_s * sample_rate_hz as f64).round() as usize).max(1);
        let hop = ((len as f64 * (1.0 - self.patch_overlap)).round() as usize).max(1);
        (len, hop)
    }
}

/// Linear STFT magnitudes stored frame-major: `frames x bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    magnitudes: Vec<f64>,
    bins: usize,
    frames: usize,
    bin_hz: f64,
    frame_hop_s: f64,
}

impl Spectrogram {
    pub fn from_parts(magnitudes: Vec<f64>, bins: usize, frames: usize, bin_hz: f64, frame_hop_s: f64) -> Self {
        assert_eq!(magnitudes.len(), bins * frames);
        Self {
            magnitudes,
            bins,
            frames,
            bin_hz,
            frame_hop_s,
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }

    pub fn frame_hop_s(&self) -> f64 {
        self.frame_hop_s
    }

    pub fn get(&self, bin: usize, frame: usize) -> f64 {
        self.magnitudes[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.magnitudes[frame * self.bins..(frame + 1) * self.bins]
    }

    pub fn total_energy(&self) -> f64 {
        self.magnitudes.iter().map(|m| m * m).sum()
    }
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}

/// Mirror index into `0..len` without repeating the edge sample.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Centered STFT: padded by half a window (reflect by default), Hann window,
/// one-sided magnitude. Frame count is `len / hop + 1`.
pub fn stft(clip: &AudioClip, config: &SpectroConfig) -> Result<Spectrogram, SpectroError> {
    config.validate()?;
    let samples = clip.samples();
    if samples.is_empty() {
        return Err(SpectroError::EmptyClip);
    }
    let win = config.win_len_samples;
    let hop = config.hop_samples;
    let bins = win / 2 + 1;
    let frames = samples.len() / hop + 1;
    let pad = (win / 2) as isize;
    let window = hann_window(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(win);

    let mut magnitudes = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex::new(0.0, 0.0); win];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for f in 0..frames {
        let start = (f * hop) as isize - pad;
        for (i, slot) in buf.iter_mut().enumerate() {
            let pos = start + i as isize;
            let sample = match config.pad_mode {
                PadMode::Reflect => samples[reflect_index(pos, samples.len())],
                PadMode::Zero if pos >= 0 && (pos as usize) < samples.len() => samples[pos as usize],
                PadMode::Zero => 0.0,
            };
            *slot = Complex::new(sample as f64 * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        magnitudes.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    let rate = clip.sample_rate_hz() as f64;
    Ok(Spectrogram::from_parts(
        magnitudes,
        bins,
        frames,
        rate / win as f64,
        hop as f64 / rate,
    ))
}

/// 8-bit RGB raster, row-major, row 0 at the top.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn from_raw(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height * 3);
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.pixels
    }

    pub fn column(&self, col: usize) -> Vec<[u8; 3]> {
        (0..self.height).map(|r| self.pixel(r, col)).collect()
    }

    pub fn write_png(&self, path: &Path) -> Result<(), SpectroError> {
        let err = |reason: String| SpectroError::Write {
            path: path.to_path_buf(),
            reason,
        };
        let file = File::create(path).map_err(|e| err(e.to_string()))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(|e| err(e.to_string()))?;
        writer.write_image_data(&self.pixels).map_err(|e| err(e.to_string()))?;
        writer.finish().map_err(|e| err(e.to_string()))
    }

    pub fn read_png(path: &Path) -> Result<Self, SpectroError> {
        let err = |reason: String| SpectroError::Read {
            path: path.to_path_buf(),
            reason,
        };
        let file = File::open(path).map_err(|e| err(e.to_string()))?;
        let mut reader = png::Decoder::new(std::io::BufReader::new(file))
            .read_info()
            .map_err(|e| err(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size()];
        let info = reader.next_frame(&mut buf).map_err(|e| err(e.to_string()))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(err(format!("expected 8-bit RGB, found {:?}/{:?}", info.color_type, info.bit_depth)));
        }
        buf.truncate(info.buffer_size());
        Ok(Self::from_raw(info.width as usize, info.height as usize, buf))
    }
}

/// Spectrogram bin shown on each image row, row 0 being the top.
fn row_bins(spec: &Spectrogram, config: &SpectroConfig) -> Vec<usize> {
    let px = config.image_px;
    let top_bin = spec.bins - 1;
    (0..px)
        .map(|row| {
            let r = (px - 1 - row) as f64 / (px - 1) as f64;
            let bin = match config.freq_scale {
                FreqScale::Linear => r * top_bin as f64,
                FreqScale::Log => {
                    let f_min = spec.bin_hz;
                    let f_max = top_bin as f64 * spec.bin_hz;
                    f_min * (f_max / f_min).powf(r) / spec.bin_hz
                }
            };
            (bin.round() as usize).min(top_bin)
        })
        .collect()
}

/// Renders dB magnitudes (relative to the image maximum, floored at
/// `db_floor`) through the colormap onto an `image_px` square.
pub fn render_image(spec: &Spectrogram, config: &SpectroConfig) -> Result<RgbImage, SpectroError> {
    config.validate()?;
    if spec.frames == 0 || spec.bins < 2 {
        return Err(SpectroError::InvalidConfig("spectrogram is empty".into()));
    }
    let px = config.image_px;
    let max = spec.magnitudes.iter().cloned().fold(0.0f64, f64::max);
    let rows = row_bins(spec, config);
    let cols: Vec<usize> = (0..px)
        .map(|c| (((c as f64 + 0.5) * spec.frames as f64 / px as f64) as usize).min(spec.frames - 1))
        .collect();

    let floor = config.db_floor;
    let level = |mag: f64| -> f64 {
        if max <= 0.0 || mag <= 0.0 {
            return 0.0;
        }
        let db = (20.0 * (mag / max).log10()).max(floor);
        (db - floor) / -floor
    };

    let mut pixels = Vec::with_capacity(px * px * 3);
    for &bin in &rows {
        for &frame in &cols {
            pixels.extend_from_slice(&config.colormap.map(level(spec.get(bin, frame))));
        }
    }
    Ok(RgbImage::from_raw(px, px, pixels))
}

/// One rendered segment of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: Arc<RgbImage>,
    pub source_id: String,
    pub start_s: f64,
}

impl Patch {
    pub fn start_ms(&self) -> u64 {
        (self.start_s * 1000.0).round() as u64
    }

    /// Writes `<dir>/<id>_<start_ms>.png`.
    pub fn export_png(&self, dir: &Path) -> Result<PathBuf, SpectroError> {
        let path = dir.join(format!("{}_{}.png", self.source_id, self.start_ms()));
        self.image.write_png(&path)?;
        Ok(path)
    }
}

/// Number of patches for a clip of `n` samples. Clips shorter than one patch
/// are padded and give exactly one.
pub fn patch_count(n: usize, patch_len: usize, patch_hop: usize) -> usize {
    if n <= patch_len {
        1
    } else {
        (n - patch_len) / patch_hop + 1
    }
}

/// Cuts the clip into overlapping windows and renders each independently.
pub fn make_patches(clip: &AudioClip, source_id: &str, config: &SpectroConfig) -> Result<Vec<Patch>, SpectroError> {
    config.validate()?;
    if clip.is_empty() {
        return Err(SpectroError::EmptyClip);
    }
    let rate = clip.sample_rate_hz();
    let (len, hop) = config.patch_geometry(rate);
    let samples = clip.samples();
    let count = patch_count(samples.len(), len, hop);
    (0..count)
        .map(|i| {
            let start = i * hop;
            let mut segment = samples[start..(start + len).min(samples.len())].to_vec();
            segment.resize(len, 0.0);
            let seg_clip = AudioClip::new(segment, rate);
            let image = render_image(&stft(&seg_clip, config)?, config)?;
            Ok(Patch {
                image: Arc::new(image),
                source_id: source_id.to_string(),
                start_s: start as f64 / rate as f64,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn sine(freq: f64, rate: u32, n: usize) -> AudioClip {
        AudioClip::new(
            (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() as f32).collect(),
            rate,
        )
    }

    #[test]
    fn reflect_padding_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect_index(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect_index(-7, 1), 0);
    }

    #[test]
    fn frame_count_and_bins() {
        let spec = stft(&sine(1000.0, 8000, 8000), &SpectroConfig::default()).unwrap();
        assert_eq!(spec.frames(), 63);
        assert_eq!(spec.bins(), 513);
        assert_eq!(spec.bin_hz(), 8000.0 / 1024.0);
    }

    fn peak_bins(spec: &Spectrogram) -> Vec<usize> {
        (0..spec.frames())
            .map(|f| {
                let frame = spec.frame(f);
                (0..frame.len()).max_by(|&a, &b| frame[a].total_cmp(&frame[b])).unwrap()
            })
            .collect()
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let clip = sine(1000.0, 8000, 8000);
        let zero_pad = SpectroConfig {
            pad_mode: PadMode::Zero,
            ..SpectroConfig::default()
        };
        assert!(peak_bins(&stft(&clip, &zero_pad).unwrap()).iter().all(|&b| b == 128));

        // Mirroring sin(wn) about n = 0 makes the first window odd-symmetric,
        // which cancels the tone bin; frames fully inside the signal are exact.
        let reflected = peak_bins(&stft(&clip, &SpectroConfig::default()).unwrap());
        assert!(reflected[4..=58].iter().all(|&b| b == 128));
        assert_eq!(reflected[0], 127);
    }

    #[test]
    fn silence_has_zero_magnitude() {
        let spec = stft(&AudioClip::new(vec![0.0; 3000], 8000), &SpectroConfig::default()).unwrap();
        assert_eq!(spec.total_energy(), 0.0);
    }

    #[test]
    fn single_sample_clip_is_accepted() {
        let spec = stft(&AudioClip::new(vec![0.5], 8000), &SpectroConfig::default()).unwrap();
        assert_eq!(spec.frames(), 1);
    }

    #[test]
    fn energy_grows_linearly_with_duration() {
        let config = SpectroConfig::default();
        let e1 = stft(&sine(440.0, 8000, 8000), &config).unwrap().total_energy();
        for secs in [2usize, 3, 5] {
            let e = stft(&sine(440.0, 8000, 8000 * secs), &config).unwrap().total_energy();
            let ratio = e / e1 / secs as f64;
            assert!((ratio - 1.0).abs() < 0.05, "{secs}s ratio {ratio}");
        }
    }

    #[test]
    fn colormap_endpoints() {
        assert_eq!(Colormap::Magma.map(0.0), [0, 0, 4]);
        assert_eq!(Colormap::Magma.map(1.0), [252, 253, 191]);
        assert_eq!(Colormap::Viridis.map(0.0), [68, 1, 84]);
        assert_eq!(Colormap::Viridis.map(1.0), [253, 231, 37]);
        assert_eq!(Colormap::Magma.map(-3.0), Colormap::Magma.map(0.0));
    }

    #[test]
    fn zero_spectrogram_renders_uniform_floor_color() {
        let spec = Spectrogram::from_parts(vec![0.0; 513 * 10], 513, 10, 7.8125, 0.016);
        let img = render_image(&spec, &SpectroConfig::default()).unwrap();
        assert!(img.as_raw().chunks(3).all(|p| p == [0, 0, 4]));
    }

    #[test]
    fn single_peak_renders_top_color_once() {
        let config = SpectroConfig {
            image_px: 8,
            freq_scale: FreqScale::Linear,
            ..SpectroConfig::default()
        };
        // 8 bins x 8 frames maps one-to-one onto an 8x8 image
        let mut mags = vec![0.0; 8 * 8];
        mags[3 * 8 + 5] = 2.5; // frame 3, bin 5
        let spec = Spectrogram::from_parts(mags, 8, 8, 1.0, 1.0);
        let img = render_image(&spec, &config).unwrap();
        let top = Colormap::Magma.map(1.0);
        let hits: Vec<(usize, usize)> = (0..8)
            .flat_map(|r| (0..8).map(move |c| (r, c)))
            .filter(|&(r, c)| img.pixel(r, c) == top)
            .collect();
        // bin 5 of 0..=7 is row 7 - 5 = 2
        assert_eq!(hits, vec![(2, 3)]);
    }

    #[test]
    fn scaling_magnitudes_leaves_image_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let clip = AudioClip::new((0..8000).map(|_| rng.gen_range(-0.5f32..0.5)).collect(), 8000);
        let config = SpectroConfig::default();
        let spec = stft(&clip, &config).unwrap();
        let scaled = Spectrogram::from_parts(
            spec.magnitudes.iter().map(|m| m * 10.0).collect(),
            spec.bins,
            spec.frames,
            spec.bin_hz,
            spec.frame_hop_s,
        );
        assert_eq!(render_image(&spec, &config).unwrap(), render_image(&scaled, &config).unwrap());
    }

    #[test]
    fn log_axis_spans_bin_one_to_nyquist() {
        let spec = Spectrogram::from_parts(vec![0.0; 513], 513, 1, 7.8125, 0.016);
        let rows = row_bins(&spec, &SpectroConfig::default());
        assert_eq!(rows[255], 1);
        assert_eq!(rows[0], 512);
        assert!(rows.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn patch_counts_follow_duration() {
        let config = SpectroConfig {
            image_px: 16,
            ..SpectroConfig::default()
        };
        for (n, expected) in [(8000, 1), (16000, 3), (37600, 8), (3000, 1)] {
            let patches = make_patches(&sine(500.0, 8000, n), "rec", &config).unwrap();
            assert_eq!(patches.len(), expected, "{n} samples");
        }
        let starts: Vec<f64> = make_patches(&sine(500.0, 8000, 16000), "rec", &config)
            .unwrap()
            .iter()
            .map(|p| p.start_s)
            .collect();
        assert_eq!(starts, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let config = SpectroConfig {
            image_px: 32,
            ..SpectroConfig::default()
        };
        let patch = make_patches(&sine(700.0, 8000, 9000), "abc", &config).unwrap().remove(0);
        let path = patch.export_png(dir.path()).unwrap();
        assert_eq!(path.file_name().unwrap(), "abc_0.png");
        assert_eq!(RgbImage::read_png(&path).unwrap(), *patch.image);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let clip = sine(500.0, 8000, 100);
        let bad = SpectroConfig {
            hop_samples: 2048,
            ..SpectroConfig::default()
        };
        assert!(stft(&clip, &bad).is_err());
        let bad = SpectroConfig {
            patch_overlap: 1.0,
            ..SpectroConfig::default()
        };
        assert!(make_patches(&clip, "x", &bad).is_err());
    }

    proptest! {
        #[test]
        fn stft_frame_count_formula(n in 1usize..20000) {
            let config = SpectroConfig { win_len_samples: 64, hop_samples: 16, ..SpectroConfig::default() };
            let spec = stft(&AudioClip::new(vec![0.1; n], 8000), &config).unwrap();
            prop_assert_eq!(spec.frames(), n / 16 + 1);
        }
    }
}
