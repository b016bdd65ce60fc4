//! Frame-level acoustic features.
//!
//! Audio is decoded from WAV, mixed to mono and resampled to 22.05 kHz,
//! cut into overlapping windows (250 ms / 100 ms hop by default), and each
//! window becomes a 39-dimensional MFCC vector laid out as
//! `[c1..c12, log-energy | 13 Δ | 13 ΔΔ]`. Z-normalization statistics are
//! fitted on a training pool and applied to everything else.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const TARGET_SAMPLE_RATE: u32 = 22_050;

/// Floor applied to every energy before taking a logarithm.
pub const ENERGY_FLOOR: f64 = 1e-10;

pub const STATIC_DIM: usize = 13;
pub const MFCCDD_DIM: usize = 3 * STATIC_DIM;

/// Mono audio in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidParameter(
                "sample rate must be positive".into(),
            ));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Decode(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

/// Decodes a PCM (8/16/24/32-bit integer) or 32-bit float WAV file into a
/// mono buffer at the file's native rate. Channels are averaged.
pub fn decode_wav(path: &Path) -> Result<AudioBuffer> {
    let reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Decode(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    let channels = usize::from(spec.channels);
    if channels == 0 {
        return Err(Error::Decode(format!("{}: zero channels", path.display())));
    }
    let decode_err = |e: hound::Error| Error::Decode(format!("{}: {e}", path.display()));
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::Decode(format!(
                    "{}: unsupported float width {}",
                    path.display(),
                    spec.bits_per_sample
                )));
            }
            reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<Result<_, _>>()
                .map_err(decode_err)?
        }
        hound::SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if !matches!(bits, 8 | 16 | 24 | 32) {
                return Err(Error::Decode(format!(
                    "{}: unsupported PCM width {bits}",
                    path.display()
                )));
            }
            let scale = f64::from(1u32 << (bits - 1));
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<_, _>>()
                .map_err(decode_err)?
        }
    };
    let mono = interleaved
        .chunks_exact(channels)
        .map(|frame| (frame.iter().sum::<f64>() / channels as f64).clamp(-1.0, 1.0))
        .collect();
    AudioBuffer::new(mono, spec.sample_rate)
}

/// Writes a mono buffer as 16-bit PCM.
pub fn write_wav(path: &Path, buffer: &AudioBuffer) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: buffer.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let map = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Decode(format!("{}: {other}", path.display())),
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map)?;
    for &s in &buffer.samples {
        let v = (s.clamp(-1.0, 1.0) * f64::from(i16::MAX)).round() as i16;
        writer.write_sample(v).map_err(map)?;
    }
    writer.finalize().map_err(map)
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
///
/// Output length is `floor(len * target / source)`. Equal rates return the
/// input unchanged.
pub fn resample(buffer: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer> {
    if target_rate == 0 {
        return Err(Error::InvalidParameter(
            "target sample rate must be positive".into(),
        ));
    }
    if buffer.sample_rate == target_rate {
        return Ok(buffer.clone());
    }
    const ZERO_CROSSINGS: f64 = 16.0;
    let src_rate = f64::from(buffer.sample_rate);
    let step = src_rate / f64::from(target_rate);
    // cutoff relative to the source Nyquist
    let cutoff = (f64::from(target_rate) / src_rate).min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let input = &buffer.samples;
    let out_len =
        (input.len() as u128 * u128::from(target_rate) / u128::from(buffer.sample_rate)) as usize;
    let out = (0..out_len)
        .map(|n| {
            let pos = n as f64 * step;
            let lo = (pos - half_width).ceil().max(0.0) as usize;
            let hi = ((pos + half_width).floor() as usize).min(input.len().saturating_sub(1));
            let mut acc = 0.0;
            for (k, &x) in input.iter().enumerate().take(hi + 1).skip(lo) {
                let t = pos - k as f64;
                let window = 0.5 + 0.5 * (PI * t / half_width).cos();
                acc += x * cutoff * sinc(cutoff * t) * window;
            }
            acc.clamp(-1.0, 1.0)
        })
        .collect();
    AudioBuffer::new(out, target_rate)
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// Decodes a WAV file and brings it to mono at [`TARGET_SAMPLE_RATE`].
pub fn decode_and_resample(path: &Path) -> Result<AudioBuffer> {
    resample(&decode_wav(path)?, TARGET_SAMPLE_RATE)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowingConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
}

impl Default for WindowingConfig {
    fn default() -> Self {
        Self {
            window_ms: 250.0,
            hop_ms: 100.0,
        }
    }
}

impl WindowingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.hop_ms > 0.0 && self.hop_ms <= self.window_ms && self.window_ms.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "window {} ms / hop {} ms: need 0 < hop <= window",
                self.window_ms, self.hop_ms
            )));
        }
        Ok(())
    }

    /// Window and hop lengths in samples (truncated).
    pub fn in_samples(&self, sample_rate: u32) -> Result<(usize, usize)> {
        self.validate()?;
        let sr = f64::from(sample_rate);
        let window = (self.window_ms * sr / 1000.0).floor() as usize;
        let hop = (self.hop_ms * sr / 1000.0).floor() as usize;
        if hop == 0 {
            return Err(Error::InvalidParameter(format!(
                "hop of {} ms is shorter than one sample at {sample_rate} Hz",
                self.hop_ms
            )));
        }
        Ok((window, hop))
    }
}

/// Number of full windows; the trailing partial window is dropped.
pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if len < window || window == 0 || hop == 0 {
        0
    } else {
        (len - window) / hop + 1
    }
}

/// Splits a buffer into windows starting at multiples of the hop.
pub fn frame<'a>(buffer: &'a AudioBuffer, cfg: &WindowingConfig) -> Result<Vec<&'a [f64]>> {
    let (window, hop) = cfg.in_samples(buffer.sample_rate)?;
    if buffer.len() < window || window == 0 {
        return Err(Error::TooShort {
            len: buffer.len(),
            window,
        });
    }
    let n = frame_count(buffer.len(), window, hop);
    Ok((0..n)
        .map(|t| &buffer.samples[t * hop..t * hop + window])
        .collect())
}

/// Row-major matrix of per-window feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "feature dimension must be positive".into(),
            ));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::Shape {
                context: "feature matrix payload",
                expected: dim,
                found: data.len() % dim,
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(
                "feature matrix contains non-finite values".into(),
            ));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .ok_or(Error::Empty("feature rows"))?
            .as_ref()
            .len();
        let mut data = Vec::with_capacity(dim * rows.len());
        for row in rows {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Shape {
                    context: "feature row",
                    expected: dim,
                    found: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// HTK-style MFCC configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub n_filters: usize,
    pub n_ceps: usize,
    pub pre_emphasis: f64,
    pub low_hz: f64,
    pub high_hz: f64,
    /// Half-width of the regression window used for Δ and ΔΔ.
    pub delta_half_window: usize,
}

impl MfccConfig {
    pub fn new(sample_rate: u32, window_len: usize) -> Self {
        Self {
            sample_rate,
            window_len,
            n_filters: 26,
            n_ceps: 12,
            pre_emphasis: 0.97,
            low_hz: 0.0,
            high_hz: f64::from(sample_rate) / 2.0,
            delta_half_window: 2,
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Computes static MFCCs per window and stacks them with Δ and ΔΔ.
pub struct MfccExtractor {
    cfg: MfccConfig,
    fft_size: usize,
    fft: Arc<dyn Fft<f64>>,
    hann: Vec<f64>,
    /// n_filters × (fft_size/2 + 1)
    filterbank: Vec<Vec<f64>>,
    /// n_ceps × n_filters, rows for c1..c_n
    dct: Vec<Vec<f64>>,
}

impl std::fmt::Debug for MfccExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfccExtractor")
            .field("cfg", &self.cfg)
            .field("fft_size", &self.fft_size)
            .finish_non_exhaustive()
    }
}

impl MfccExtractor {
    pub fn new(cfg: MfccConfig) -> Result<Self> {
        if cfg.window_len < 2
            || cfg.n_filters == 0
            || cfg.n_ceps == 0
            || cfg.n_ceps >= cfg.n_filters
        {
            return Err(Error::InvalidParameter(format!(
                "unusable MFCC configuration {cfg:?}"
            )));
        }
        if !(0.0 <= cfg.low_hz
            && cfg.low_hz < cfg.high_hz
            && cfg.high_hz <= f64::from(cfg.sample_rate) / 2.0)
        {
            return Err(Error::InvalidParameter(format!(
                "filterbank range {}..{} Hz invalid for {} Hz audio",
                cfg.low_hz, cfg.high_hz, cfg.sample_rate
            )));
        }
        let fft_size = cfg.window_len.next_power_of_two();
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        let n = cfg.window_len;
        let hann = (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
            .collect();

        let bins = fft_size / 2 + 1;
        let mel_lo = hz_to_mel(cfg.low_hz);
        let mel_hi = hz_to_mel(cfg.high_hz);
        let edges: Vec<f64> = (0..cfg.n_filters + 2)
            .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_filters + 1) as f64))
            .collect();
        let bin_hz = f64::from(cfg.sample_rate) / fft_size as f64;
        let filterbank = (0..cfg.n_filters)
            .map(|m| {
                let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..bins)
                    .map(|b| {
                        let f = b as f64 * bin_hz;
                        ((f - l) / (c - l)).min((r - f) / (r - c)).max(0.0)
                    })
                    .collect()
            })
            .collect();

        let m = cfg.n_filters as f64;
        let dct = (1..=cfg.n_ceps)
            .map(|k| {
                (0..cfg.n_filters)
                    .map(|j| (2.0 / m).sqrt() * (PI * k as f64 * (j as f64 + 0.5) / m).cos())
                    .collect()
            })
            .collect();

        Ok(Self {
            cfg,
            fft_size,
            fft,
            hann,
            filterbank,
            dct,
        })
    }

    /// Extractor matching a windowing configuration at the given rate.
    pub fn for_windowing(sample_rate: u32, windowing: &WindowingConfig) -> Result<Self> {
        let (window, _) = windowing.in_samples(sample_rate)?;
        Self::new(MfccConfig::new(sample_rate, window))
    }

    pub fn config(&self) -> &MfccConfig {
        &self.cfg
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn static_dim(&self) -> usize {
        self.cfg.n_ceps + 1
    }

    pub fn output_dim(&self) -> usize {
        3 * self.static_dim()
    }

    /// Cepstral coefficients `c1..c_n` followed by the log frame energy.
    pub fn static_coefficients(&self, window: &[f64]) -> Result<Vec<f64>> {
        if window.len() != self.cfg.window_len {
            return Err(Error::Shape {
                context: "MFCC window length",
                expected: self.cfg.window_len,
                found: window.len(),
            });
        }
        let energy: f64 = window.iter().map(|x| x * x).sum();
        let log_energy = energy.max(ENERGY_FLOOR).ln();

        let k = self.cfg.pre_emphasis;
        let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); self.fft_size];
        for (i, slot) in buf.iter_mut().take(window.len()).enumerate() {
            let prev = if i == 0 { window[0] } else { window[i - 1] };
            *slot = Complex::new((window[i] - k * prev) * self.hann[i], 0.0);
        }
        self.fft.process(&mut buf);
        let power: Vec<f64> = buf[..self.fft_size / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect();

        let log_mel: Vec<f64> = self
            .filterbank
            .iter()
            .map(|weights| {
                let e: f64 = weights.iter().zip(&power).map(|(w, p)| w * p).sum();
                e.max(ENERGY_FLOOR).ln()
            })
            .collect();

        let mut out: Vec<f64> = self
            .dct
            .iter()
            .map(|basis| basis.iter().zip(&log_mel).map(|(b, l)| b * l).sum())
            .collect();
        out.push(log_energy);
        Ok(out)
    }

    /// Full MFCC+Δ+ΔΔ matrix for a clip's frame sequence.
    pub fn mfccdd(&self, frames: &[&[f64]]) -> Result<FeatureMatrix> {
        if frames.is_empty() {
            return Err(Error::Empty("frame sequence"));
        }
        let statics: Vec<Vec<f64>> = frames
            .iter()
            .map(|w| self.static_coefficients(w))
            .collect::<Result<_>>()?;
        let deltas = regression_deltas(&statics, self.cfg.delta_half_window);
        let accel = regression_deltas(&deltas, self.cfg.delta_half_window);
        let dim = self.output_dim();
        let mut data = Vec::with_capacity(frames.len() * dim);
        for t in 0..frames.len() {
            data.extend_from_slice(&statics[t]);
            data.extend_from_slice(&deltas[t]);
            data.extend_from_slice(&accel[t]);
        }
        FeatureMatrix::new(dim, data)
    }

    /// Frames a buffer and computes its MFCC+Δ+ΔΔ matrix.
    pub fn extract(
        &self,
        buffer: &AudioBuffer,
        windowing: &WindowingConfig,
    ) -> Result<FeatureMatrix> {
        if buffer.sample_rate() != self.cfg.sample_rate {
            return Err(Error::InvalidParameter(format!(
                "extractor built for {} Hz, buffer is {} Hz",
                self.cfg.sample_rate,
                buffer.sample_rate()
            )));
        }
        let frames = frame(buffer, windowing)?;
        self.mfccdd(&frames)
    }
}

/// Regression deltas `Σ n (x[t+n] − x[t−n]) / (2 Σ n²)` with edge frames
/// replicated.
pub fn regression_deltas(seq: &[Vec<f64>], half_window: usize) -> Vec<Vec<f64>> {
    let len = seq.len();
    if len == 0 {
        return Vec::new();
    }
    let dim = seq[0].len();
    let denom: f64 = 2.0 * (1..=half_window).map(|n| (n * n) as f64).sum::<f64>();
    if denom == 0.0 {
        return vec![vec![0.0; dim]; len];
    }
    (0..len)
        .map(|t| {
            let mut d = vec![0.0; dim];
            for n in 1..=half_window {
                let next = &seq[(t + n).min(len - 1)];
                let prev = &seq[t.saturating_sub(n)];
                for ((slot, a), b) in d.iter_mut().zip(next).zip(prev) {
                    *slot += n as f64 * (a - b);
                }
            }
            d.iter_mut().for_each(|v| *v /= denom);
            d
        })
        .collect()
}

/// Per-dimension mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Pools every row of every matrix. Dimensions whose spread is zero (up
    /// to rounding) get a standard deviation of 1.
    pub fn fit<'a, I>(matrices: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a FeatureMatrix>,
    {
        let matrices: Vec<&FeatureMatrix> = matrices.into_iter().collect();
        let dim = matrices
            .first()
            .ok_or(Error::Empty("normalization pool"))?
            .dim();
        let mut count = 0usize;
        let mut sum = vec![0.0; dim];
        for m in &matrices {
            if m.dim() != dim {
                return Err(Error::Shape {
                    context: "normalization pool",
                    expected: dim,
                    found: m.dim(),
                });
            }
            for row in m.iter_rows() {
                count += 1;
                sum.iter_mut().zip(row).for_each(|(s, x)| *s += x);
            }
        }
        if count < 2 {
            return Err(Error::InsufficientData { rows: count, k: 2 });
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.into_iter().map(|s| s / n).collect();
        let mut sq = vec![0.0; dim];
        for m in &matrices {
            for row in m.iter_rows() {
                for ((acc, x), mu) in sq.iter_mut().zip(row).zip(&mean) {
                    *acc += (x - mu) * (x - mu);
                }
            }
        }
        let std = sq
            .into_iter()
            .zip(&mean)
            .map(|(s, mu)| {
                let sd = (s / n).sqrt();
                if sd <= 1e-12 * mu.abs().max(1.0) {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, m: &FeatureMatrix) -> Result<FeatureMatrix> {
        if m.dim() != self.dim() {
            return Err(Error::Shape {
                context: "normalization",
                expected: self.dim(),
                found: m.dim(),
            });
        }
        let data = m
            .iter_rows()
            .flat_map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((x, mu), sd)| (x - mu) / sd)
            })
            .collect();
        FeatureMatrix::new(m.dim(), data)
    }

    pub fn apply_row(&self, row: &[f64], out: &mut [f64]) {
        for (((o, x), mu), sd) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.std) {
            *o = (x - mu) / sd;
        }
    }
}
