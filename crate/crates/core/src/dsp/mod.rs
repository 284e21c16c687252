//! Time-frequency analysis and synthesis.
//!
//! Frames are windowed with a periodic Hamming window, transformed with a
//! one-sided FFT and resynthesized by weighted overlap-add with a
//! least-squares (`Σ w²`) normalization, which makes `istft(stft(x)) == x`
//! up to rounding for any hop not exceeding the window length.

mod norm;
mod wav;

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use norm::NormStats;
pub use wav::{quantize, read_wav, write_wav, DEFAULT_SAMPLE_RATE};
pub(crate) use wav::write_wav_i16;

/// Mono audio samples with their sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InputTooShort { len: 0, needed: 1 });
        }
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(Error::NumericGuardTripped(format!(
                "non-finite audio sample at index {i}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / f64::from(self.sample_rate)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hamming,
}

impl WindowKind {
    /// Periodic window of `len` taps.
    pub fn taps(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Hamming => (0..len)
                .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub window_len_ms: f64,
    pub hop_ms: f64,
    pub window_kind: WindowKind,
    /// Defaults to the window length in samples.
    pub fft_size: Option<usize>,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_len_ms: 32.0,
            hop_ms: 16.0,
            window_kind: WindowKind::Hamming,
            fft_size: None,
        }
    }
}

impl StftConfig {
    pub fn window_len(&self, sample_rate: u32) -> usize {
        (self.window_len_ms * f64::from(sample_rate) / 1000.0).round() as usize
    }

    pub fn hop(&self, sample_rate: u32) -> usize {
        (self.hop_ms * f64::from(sample_rate) / 1000.0).round() as usize
    }

    pub fn fft_size(&self, sample_rate: u32) -> usize {
        self.fft_size
            .unwrap_or_else(|| self.window_len(sample_rate))
    }

    pub fn num_bins(&self, sample_rate: u32) -> usize {
        self.fft_size(sample_rate) / 2 + 1
    }

    /// Frame count for a signal of `len` samples (tail frame zero-padded).
    pub fn num_frames(&self, len: usize, sample_rate: u32) -> usize {
        let win = self.window_len(sample_rate);
        let hop = self.hop(sample_rate);
        if len <= win {
            1
        } else {
            1 + (len - win).div_ceil(hop)
        }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let win = self.window_len(sample_rate);
        let hop = self.hop(sample_rate);
        if win < 2 {
            return Err(Error::InvalidConfig(format!("window of {win} samples")));
        }
        if hop == 0 || hop > win {
            return Err(Error::InvalidConfig(format!(
                "hop {hop} must be in 1..={win}"
            )));
        }
        if self.fft_size(sample_rate) < win {
            return Err(Error::InvalidConfig(format!(
                "fft size {} shorter than window {win}",
                self.fft_size(sample_rate)
            )));
        }
        Ok(())
    }
}

/// Complex one-sided STFT with cached magnitude and phase, `T × F`.
#[derive(Clone, Debug)]
pub struct Spectrogram {
    complex_bins: Vec<Complex64>,
    magnitude: Matrix,
    phase: Matrix,
    config: StftConfig,
    sample_rate: u32,
    num_samples: usize,
}

/// Wraps to `(-π, π]`, with zero bins given phase 0.
fn bin_phase(z: Complex64) -> f64 {
    if z.re == 0.0 && z.im == 0.0 {
        return 0.0;
    }
    let p = z.im.atan2(z.re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

impl Spectrogram {
    pub fn from_complex(
        frames: usize,
        bins: usize,
        complex_bins: Vec<Complex64>,
        config: StftConfig,
        sample_rate: u32,
        num_samples: usize,
    ) -> Result<Self> {
        if complex_bins.len() != frames * bins {
            return Err(Error::shape(format!(
                "{} complex bins for a {frames}x{bins} spectrogram",
                complex_bins.len()
            )));
        }
        if bins != config.num_bins(sample_rate) {
            return Err(Error::shape(format!(
                "{bins} bins but config yields {}",
                config.num_bins(sample_rate)
            )));
        }
        let magnitude = Matrix::from_vec(
            frames,
            bins,
            complex_bins.iter().map(|z| z.norm()).collect(),
        );
        let phase = Matrix::from_vec(frames, bins, complex_bins.iter().map(|&z| bin_phase(z)).collect());
        Ok(Self {
            complex_bins,
            magnitude,
            phase,
            config,
            sample_rate,
            num_samples,
        })
    }

    /// Builds `scale[t,f] · self[t,f]` for a real per-bin scale.
    pub fn scaled_by(&self, scale: &Matrix) -> Result<Self> {
        if scale.shape() != self.shape() {
            return Err(Error::shape(format!(
                "scale {:?} vs spectrogram {:?}",
                scale.shape(),
                self.shape()
            )));
        }
        let bins = self
            .complex_bins
            .iter()
            .zip(scale.as_slice())
            .map(|(z, &s)| z * s)
            .collect();
        Self::from_complex(
            self.frames(),
            self.bins(),
            bins,
            self.config.clone(),
            self.sample_rate,
            self.num_samples,
        )
    }

    pub fn frames(&self) -> usize {
        self.magnitude.rows()
    }

    pub fn bins(&self) -> usize {
        self.magnitude.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.magnitude.shape()
    }

    pub fn complex_bins(&self) -> &[Complex64] {
        &self.complex_bins
    }

    pub fn magnitude(&self) -> &Matrix {
        &self.magnitude
    }

    pub fn phase(&self) -> &Matrix {
        &self.phase
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn num_samples(&self) -> usize {
        self.num_samples
    }
}

fn fft_plan(size: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(size)
    } else {
        planner.plan_fft_forward(size)
    }
}

pub fn stft(audio: &AudioBuffer, cfg: &StftConfig) -> Result<Spectrogram> {
    let sr = audio.sample_rate;
    cfg.validate(sr)?;
    let win = cfg.window_len(sr);
    let hop = cfg.hop(sr);
    let n_fft = cfg.fft_size(sr);
    let bins = cfg.num_bins(sr);
    let len = audio.len();
    if len < win {
        return Err(Error::InputTooShort { len, needed: win });
    }
    let frames = cfg.num_frames(len, sr);
    let window = cfg.window_kind.taps(win);
    let fft = fft_plan(n_fft, false);

    let mut out = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    for t in 0..frames {
        let start = t * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let x = if i < win {
                audio.samples.get(start + i).copied().unwrap_or(0.0) * window[i]
            } else {
                0.0
            };
            *slot = Complex64::new(x, 0.0);
        }
        fft.process(&mut buf);
        out.extend_from_slice(&buf[..bins]);
    }
    Spectrogram::from_complex(frames, bins, out, cfg.clone(), sr, len)
}

pub fn istft(spec: &Spectrogram) -> Result<AudioBuffer> {
    let sr = spec.sample_rate;
    let cfg = &spec.config;
    cfg.validate(sr)?;
    let win = cfg.window_len(sr);
    let hop = cfg.hop(sr);
    let n_fft = cfg.fft_size(sr);
    let (frames, bins) = spec.shape();
    if bins != n_fft / 2 + 1 || spec.complex_bins.len() != frames * bins {
        return Err(Error::shape(format!(
            "{frames}x{bins} spectrogram for fft size {n_fft}"
        )));
    }
    if frames == 0 {
        return Err(Error::shape("spectrogram has no frames"));
    }
    let window = cfg.window_kind.taps(win);
    let ifft = fft_plan(n_fft, true);
    let total = (frames - 1) * hop + win;
    let mut acc = vec![0.0; total];
    let mut norm = vec![0.0; total];
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let scale = 1.0 / n_fft as f64;
    for t in 0..frames {
        let row = &spec.complex_bins[t * bins..(t + 1) * bins];
        buf[..bins].copy_from_slice(row);
        for k in bins..n_fft {
            buf[k] = buf[n_fft - k].conj();
        }
        ifft.process(&mut buf);
        let start = t * hop;
        for i in 0..win {
            acc[start + i] += buf[i].re * scale * window[i];
            norm[start + i] += window[i] * window[i];
        }
    }
    let mut samples: Vec<f64> = acc
        .iter()
        .zip(&norm)
        .map(|(&a, &w)| if w > 1e-12 { a / w } else { 0.0 })
        .collect();
    samples.resize(spec.num_samples, 0.0);
    Ok(AudioBuffer {
        samples,
        sample_rate: sr,
    })
}
